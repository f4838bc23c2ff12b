"""Command-line front end: ``ensemble-steer run|sweep <config.json>``.

Exit codes: 0 success, 1 solver error, 2 configuration error.
"""

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .collocation import (
    delta_metrics,
    error_profile,
    estimate_constants,
    moment_vector,
    oracle_target,
    rate_bound,
    solve_collocation,
    sup_error,
)
from .errors import ConfigError, EnsembleError
from .flows import EtaSchedule, averaging_flow, strong_flow, weak_flow
from .gramian import MomentGrid, assemble_block_gramian
from .io import fmt, load_run_config, load_system, write_csv, write_report
from .model import TimeGrid, shift_target

log = logging.getLogger("ensemble_steer")

SWEEP_HEADER = (
    "N", "delta_N", "delta_max", "sup_error", "l2_error_vs_oracle", "rate_bound", "wall_ms",
)


class Problem:
    """Everything a run needs that does not depend on N."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.spec = load_system(cfg.system_file)
        system = self.system = self.spec.system
        if self.spec.target is None and self.spec.source is None:
            raise ConfigError(f"system {cfg.system_file!r} defines no target")
        self.grid = TimeGrid.gauss_legendre(system.horizon, cfg.time_panels, cfg.nodes_per_panel)
        self.eval_points = system.interval.linspace(cfg.eval_points)
        self.u_star = None
        self.source = None
        if self.spec.source is not None:
            target, u_star = oracle_target(
                system, self.spec.source, self.eval_points, self.grid, *self.spec.quadrature
            )
            if self.spec.x0 is None:
                self.u_star, self.source = u_star, self.spec.source
        else:
            target = self.spec.target
        if self.spec.x0 is not None:
            # tabulate on every point we will ever evaluate so interpolation is exact there
            pts = [self.eval_points] + [
                MomentGrid.equidistant(system.interval, N).moments for N in cfg.N
            ]
            target = shift_target(system, target, self.spec.x0, np.unique(np.concatenate(pts)))
        self.target = target
        self.consts = None
        if self.u_star is not None:
            self.consts = estimate_constants(system, cfg.rate_resolution, self.grid)

    def solve(self, N):
        """Solve for one moment count; returns ``(result dict, extra outputs)``."""
        cfg, system = self.cfg, self.system
        t0 = time.perf_counter()
        moments = MomentGrid.equidistant(system.interval, N)
        F = moment_vector(self.target, moments)
        res = {"method": cfg.method, "N": N}
        trajectory = None
        if cfg.method == "collocation":
            sol = solve_collocation(system, moments, F, self.grid, method=cfg.solver, rtol=cfg.rtol)
            u = sol.input
            res.update(solver=cfg.solver, rank=sol.rank, condition=sol.condition,
                       residual=sol.residual)
        else:
            fp = cfg.flow
            common = dict(grid=self.grid, t_final=fp.t_final, step=fp.step, tol=fp.tol)
            if cfg.method == "weak":
                rep = weak_flow(system, moments, F, **common)
            elif cfg.method == "strong":
                rep = strong_flow(system, moments, F, eta=EtaSchedule(fp.eta_c, fp.eta_p),
                                  start_index=min(fp.start_index, N - 1), **common)
            else:
                rep = averaging_flow(system, moments, F, **common)
            u = rep.final_input
            trajectory = rep.rows()
            res.update(converged=rep.converged, iterations=rep.iterations,
                       t_end=float(rep.t[-1]), max_residual=float(rep.max_residual[-1]))
        sup = sup_error(system, u, self.target, self.eval_points)
        dm = delta_metrics(moments, system.interval)
        res.update(sup_error=sup.value, sup_error_theta=sup.theta, delta_N=dm.delta_N,
                   delta_max=dm.delta_max)
        if self.u_star is not None:
            res["l2_error_vs_oracle"] = (u - self.u_star).norm()
            res["g_norm"] = self.source.norm
            if dm.delta_max > 0:
                res["rate_bound"] = rate_bound(system.n, self.consts, dm.delta_max,
                                               self.source.norm)
        res["wall_ms"] = 1e3 * (time.perf_counter() - t0)
        errors = error_profile(system, u, self.target, self.eval_points)
        return res, {"input": u, "errors": errors, "trajectory": trajectory, "moments": moments}

    def write(self, outdir, res, extra):
        outdir.mkdir(parents=True, exist_ok=True)
        u = extra["input"]
        m = u.m
        write_csv(outdir / "input.csv", ["s"] + [f"u_{i + 1}" for i in range(m)],
                  np.column_stack([u.grid.nodes, u.samples]).tolist())
        write_csv(outdir / "error.csv", ["theta", "err_norm"],
                  np.column_stack([self.eval_points, extra["errors"]]).tolist())
        if extra["trajectory"] is not None:
            write_csv(outdir / "trajectory.csv", ["t", "V", "max_residual", "spread"],
                      extra["trajectory"].tolist())
        if self.cfg.export_gramian:
            Q = assemble_block_gramian(self.system, extra["moments"], self.grid)
            write_csv(outdir / "gramian.csv",
                      [f"q_{j + 1}" for j in range(Q.shape[1])], Q.tolist())
        items = [("system", self.system.name or self.cfg.system_file),
                 ("time_grid", self.grid.rule)]
        items += [(k, v) for k, v in res.items() if k != "wall_ms"]
        if self.consts is not None:
            c = self.consts
            items += [("M_Q", c.M_Q), ("L_Q", c.L_Q), ("R_norm", c.R_norm),
                      ("constants", f"estimated on a {c.resolution}x{c.resolution} grid "
                                    "(sampled maxima, lower estimates of the suprema)")]
        items.append(("wall_ms", res["wall_ms"]))
        write_report(outdir / "report.txt", items)


def _sweep_row(res, record_timing):
    return [res["N"], res["delta_N"], res["delta_max"], res["sup_error"],
            res.get("l2_error_vs_oracle"), res.get("rate_bound"),
            res["wall_ms"] if record_timing else None]


def run(cfg, output_dir=None):
    """Solve every configured N, write per-run outputs; returns the result dicts."""
    outdir = Path(output_dir or cfg.output_dir)
    prob = Problem(cfg)
    results = []
    for N in cfg.N:
        res, extra = prob.solve(N)
        log.info("N=%d sup_error=%s", N, fmt(res["sup_error"]))
        prob.write(outdir / f"N{N}" if cfg.sweep else outdir, res, extra)
        results.append(res)
    if cfg.sweep:
        write_csv(outdir / "convergence.csv", SWEEP_HEADER,
                  [_sweep_row(r, cfg.record_timing) for r in results])
    return results


def sweep(cfg, output_dir=None):
    """Convergence table over the configured N list (``convergence.csv``)."""
    if not cfg.sweep:
        cfg = type(cfg)(**{**cfg.__dict__, "sweep": True})
    return run(cfg, output_dir)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ensemble-steer",
        description="Compute one open-loop input steering a parameter-dependent linear family.",
    )
    parser.add_argument("command", choices=("run", "sweep"))
    parser.add_argument("config", help="run configuration (JSON)")
    parser.add_argument("--output-dir", default=None, help="override the configured output dir")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_run_config(args.config)
        (run if args.command == "run" else sweep)(cfg, args.output_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EnsembleError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
