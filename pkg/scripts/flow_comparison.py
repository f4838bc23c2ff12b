"""Run the three consensus flows on one problem and compare with the direct solve.

    python3 scripts/flow_comparison.py --system scalar_exp --moments 0 1 --t-final 800 --step 0.05
"""

import argparse
import time
from pathlib import Path

import numpy as np

from ensemble_steer.collocation import KernelTarget, moment_vector, solve_collocation
from ensemble_steer.flows import EtaSchedule, averaging_flow, strong_flow, weak_flow
from ensemble_steer.gramian import MomentGrid, default_grid
from ensemble_steer.io import load_system, write_csv
from ensemble_steer.model import PolynomialTarget


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--system", default="scalar_exp")
    p.add_argument("--moments", type=float, nargs="+", default=[0.0, 1.0])
    p.add_argument("--target", type=float, nargs="+", default=None,
                   help="constant target vector (default: the system file's target, else ones)")
    p.add_argument("--t-final", type=float, default=200.0)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--eta", type=float, nargs=2, default=[1.0, 1.0], metavar=("C", "P"))
    p.add_argument("--out", default=None, help="directory for trajectory CSVs")
    return p.parse_args()


def main():
    args = parse_args()
    spec = load_system(args.system)
    system = spec.system
    grid = default_grid(system)
    if args.target is not None:
        target = PolynomialTarget.constant(args.target)
    elif spec.target is not None:
        target = spec.target
    elif spec.source is not None:
        target = KernelTarget(system, spec.source, grid)
    else:
        target = PolynomialTarget.constant(np.ones(system.n))
    mg = MomentGrid(np.sort(np.asarray(args.moments, dtype=float)), system.interval)
    F = moment_vector(target, mg)
    u_par = solve_collocation(system, mg, F, grid).input

    common = dict(grid=grid, t_final=args.t_final, step=args.step, tol=args.tol)
    runs = {
        "weak": lambda: weak_flow(system, mg, F, **common),
        "strong": lambda: strong_flow(system, mg, F, eta=EtaSchedule(*args.eta), **common),
        "averaging": lambda: averaging_flow(system, mg, F, **common),
    }
    print(f"{'flow':<10}{'t_end':>10}{'residual':>12}{'|u-u_par|':>12}{'converged':>11}{'sec':>7}")
    for name, fn in runs.items():
        t0 = time.perf_counter()
        rep = fn()
        dt = time.perf_counter() - t0
        dist = (rep.final_input - u_par).norm()
        print(f"{name:<10}{rep.t[-1]:>10.2f}{rep.max_residual[-1]:>12.3e}{dist:>12.3e}"
              f"{str(rep.converged):>11}{dt:>7.2f}")
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            write_csv(out / f"{name}.csv", ["t", "V", "max_residual", "spread"], rep.rows().tolist())


if __name__ == "__main__":
    main()
