"""JSON system/run configuration parsing and CSV/report writers.

System file schema (unknown keys are rejected)::

    {
      "name": "scalar_exp",                # optional
      "n": 1, "m": 1, "T": 1.0,
      "interval": [0.0, 1.0],
      "A": [[[0.0, 1.0]]],                  # n x n polynomials, ascending coefficients
      "B": [[[1.0]]],                       # n x m polynomials
      "target": {...},                      # optional, see below
      "x0": {...}                           # optional initial state profile
    }

Profiles (``target`` and ``x0``)::

    {"kind": "polynomial", "coefficients": [[c0, c1, ...], ...]}   # n polynomials
    {"kind": "tabulated", "theta": [...], "values": [[...], ...]}  # linear interpolation
    {"kind": "kernel", "source": [[c0, ...], ...], "panels": 16, "order": 4}

``kernel`` (target only) builds ``f = R R* g`` from a polynomial source ``g``,
which makes the exact minimal-norm input available for error reports.
"""

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .collocation import SourceProfile
from .errors import ConfigError, EnsembleError
from .model import EnsembleSystem, ParameterInterval, PolynomialTarget, TabulatedTarget

__all__ = [
    "SystemSpec",
    "RunConfig",
    "BUILTIN_SYSTEMS",
    "load_system",
    "parse_system",
    "load_run_config",
    "parse_run_config",
    "fmt",
    "write_csv",
    "write_report",
]

BUILTIN_SYSTEMS = ("scalar_exp", "jordan2", "rotation")
METHODS = ("collocation", "weak", "strong", "averaging")


def fmt(x):
    """Fixed 17-significant-digit formatting used in every output file."""
    return format(float(x), ".16e")


def _line_of(text, key):
    if text is None:
        return None
    match = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def _loads(text, source):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, source) from None


class _Ctx:
    def __init__(self, text, source):
        self.text, self.source = text, source

    def error(self, msg, key=None):
        return ConfigError(msg, _line_of(self.text, key) if key else None, self.source)

    def check_keys(self, obj, allowed, required, where):
        if not isinstance(obj, dict):
            raise self.error(f"{where} must be a JSON object")
        for k in obj:
            if k not in allowed:
                raise self.error(f"unknown field {k!r} in {where}", k)
        for k in required:
            if k not in obj:
                raise self.error(f"missing required field {k!r} in {where}")

    def number(self, obj, key, kind=float, positive=False, minimum=None):
        val = obj[key]
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise self.error(f"field {key!r} must be a number", key)
        if kind is int and not float(val).is_integer():
            raise self.error(f"field {key!r} must be an integer", key)
        val = kind(val)
        if positive and not val > 0:
            raise self.error(f"field {key!r} must be positive", key)
        if minimum is not None and val < minimum:
            raise self.error(f"field {key!r} must be >= {minimum}", key)
        return val


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """A parsed system file: the family plus optional target and initial state."""

    system: EnsembleSystem
    target: object = None
    x0: object = None
    source: object = None
    quadrature: tuple = (16, 4)


def _poly_rows(ctx, rows, n, key):
    if not isinstance(rows, list) or len(rows) != n:
        raise ctx.error(f"{key!r} must list {n} polynomials", key)
    for r in rows:
        if not isinstance(r, list) or not r or not all(
            isinstance(c, (int, float)) and not isinstance(c, bool) for c in r
        ):
            raise ctx.error(f"{key!r} entries must be non-empty lists of numbers", key)
    width = max(len(r) for r in rows)
    out = np.zeros((n, width))
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def _parse_profile(ctx, obj, n, interval, key, allow_kernel):
    kinds = ("polynomial", "tabulated", "kernel") if allow_kernel else ("polynomial", "tabulated")
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ctx.error(f"{key!r} must be an object with a 'kind' field", key)
    kind = obj["kind"]
    if kind not in kinds:
        raise ctx.error(f"{key!r} kind must be one of {kinds}, got {kind!r}", "kind")
    if kind == "polynomial":
        ctx.check_keys(obj, ("kind", "coefficients"), ("coefficients",), key)
        return PolynomialTarget(_poly_rows(ctx, obj["coefficients"], n, "coefficients")), None, None
    if kind == "tabulated":
        ctx.check_keys(obj, ("kind", "theta", "values"), ("theta", "values"), key)
        try:
            prof = TabulatedTarget(np.asarray(obj["theta"], float), np.asarray(obj["values"], float))
        except (EnsembleError, ValueError, TypeError) as exc:
            raise ctx.error(f"bad tabulated {key!r}: {exc}", "theta") from None
        if prof.n != n:
            raise ctx.error(f"tabulated {key!r} must have {n} components", "values")
        return prof, None, None
    ctx.check_keys(obj, ("kind", "source", "panels", "order"), ("source",), key)
    src = SourceProfile(_poly_rows(ctx, obj["source"], n, "source"), interval)
    panels = ctx.number(obj, "panels", int, positive=True) if "panels" in obj else 16
    order = ctx.number(obj, "order", int, positive=True) if "order" in obj else 4
    return None, src, (panels, order)


def parse_system(data, text=None, source=None):
    """Validate a decoded system file and build a :class:`SystemSpec`."""
    ctx = _Ctx(text, source)
    ctx.check_keys(
        data,
        ("name", "n", "m", "T", "interval", "A", "B", "target", "x0"),
        ("n", "m", "T", "interval", "A", "B"),
        "system",
    )
    n = ctx.number(data, "n", int, positive=True)
    m = ctx.number(data, "m", int, positive=True)
    T = ctx.number(data, "T", positive=True)
    iv = data["interval"]
    if not (isinstance(iv, list) and len(iv) == 2):
        raise ctx.error("'interval' must be [lo, hi]", "interval")
    try:
        interval = ParameterInterval(float(iv[0]), float(iv[1]))
    except (EnsembleError, TypeError, ValueError) as exc:
        raise ctx.error(f"bad interval: {exc}", "interval") from None
    for key, cols in (("A", n), ("B", m)):
        mat = data[key]
        if not (isinstance(mat, list) and len(mat) == n and all(
            isinstance(r, list) and len(r) == cols for r in mat
        )):
            raise ctx.error(f"{key!r} must be a {n}x{cols} array of polynomials", key)
    try:
        system = EnsembleSystem.from_entries(
            data["A"], data["B"], T, interval, str(data.get("name", ""))
        )
    except (EnsembleError, TypeError, ValueError) as exc:
        raise ctx.error(f"bad system matrices: {exc}", "A") from None

    target = src = x0 = None
    quad = (16, 4)
    if "target" in data:
        target, src, q = _parse_profile(ctx, data["target"], n, interval, "target", True)
        quad = q or quad
    if "x0" in data:
        x0, _, _ = _parse_profile(ctx, data["x0"], n, interval, "x0", False)
    return SystemSpec(system, target, x0, src, quad)


def load_system(path_or_name):
    """Load a system file, or one of the built-in benchmarks by name."""
    p = Path(path_or_name)
    if p.is_file():
        text, source = p.read_text(), str(p)
    elif str(path_or_name) in BUILTIN_SYSTEMS:
        text = resources.files("ensemble_steer.benchmarks").joinpath(
            f"{path_or_name}.json"
        ).read_text()
        source = f"<builtin {path_or_name}>"
    else:
        raise ConfigError(f"no such system file or builtin: {path_or_name}")
    return parse_system(_loads(text, source), text, source)


@dataclass(frozen=True)
class FlowParams:
    t_final: float = 200.0
    step: float = 0.01
    tol: float = 1e-6
    eta_c: float = 1.0
    eta_p: float = 1.0
    start_index: int = 0


@dataclass(frozen=True)
class RunConfig:
    """A parsed run configuration."""

    system_file: str
    method: str
    N: tuple
    sweep: bool = False
    eval_points: int = 201
    time_panels: int = 32
    nodes_per_panel: int = 4
    solver: str = "svd"
    rtol: float = 1e-13
    flow: FlowParams = field(default_factory=FlowParams)
    rate_resolution: int = 128
    output_dir: str = "out"
    seed: int = 0
    export_gramian: bool = False
    record_timing: bool = False


_RUN_KEYS = (
    "system_file", "method", "N", "eval_points", "time_panels", "nodes_per_panel",
    "solver", "rtol", "flow", "rate_resolution", "output_dir", "seed",
    "export_gramian", "record_timing",
)
_FLOW_KEYS = ("t_final", "step", "tol", "eta_c", "eta_p", "start_index")


def parse_run_config(data, text=None, source=None, base_dir=None):
    ctx = _Ctx(text, source)
    ctx.check_keys(data, _RUN_KEYS, ("system_file", "method", "N"), "run config")
    method = data["method"]
    if method not in METHODS:
        raise ctx.error(f"unknown method {method!r}; expected one of {METHODS}", "method")
    raw_N = data["N"]
    sweep = isinstance(raw_N, list)
    Ns = raw_N if sweep else [raw_N]
    if not Ns or any(isinstance(x, bool) or not isinstance(x, int) or x < 1 for x in Ns):
        raise ctx.error("'N' must be a positive integer or a list of them", "N")
    if sweep and any(b <= a for a, b in zip(Ns, Ns[1:])):
        raise ctx.error("'N' sweep list must be strictly ascending", "N")
    kw = {}
    for key, kind, lo in (
        ("eval_points", int, 2), ("time_panels", int, 1), ("nodes_per_panel", int, 1),
        ("rate_resolution", int, 2), ("seed", int, None),
    ):
        if key in data:
            kw[key] = ctx.number(data, key, kind, minimum=lo)
    if "rtol" in data:
        kw["rtol"] = ctx.number(data, "rtol", positive=True)
    if "solver" in data:
        if data["solver"] not in ("svd", "cholesky"):
            raise ctx.error("'solver' must be 'svd' or 'cholesky'", "solver")
        kw["solver"] = data["solver"]
    for key in ("export_gramian", "record_timing"):
        if key in data:
            if not isinstance(data[key], bool):
                raise ctx.error(f"{key!r} must be true or false", key)
            kw[key] = data[key]
    if "output_dir" in data:
        if not isinstance(data["output_dir"], str):
            raise ctx.error("'output_dir' must be a string", "output_dir")
        kw["output_dir"] = data["output_dir"]
    if "flow" in data:
        fl = data["flow"]
        ctx.check_keys(fl, _FLOW_KEYS, (), "flow")
        fk = {}
        for key in ("t_final", "step", "tol", "eta_c"):
            if key in fl:
                fk[key] = ctx.number(fl, key, positive=True)
        if "eta_p" in fl:
            p = ctx.number(fl, "eta_p", positive=True)
            if p > 1:
                raise ctx.error("'eta_p' must lie in (0, 1]", "eta_p")
            fk["eta_p"] = p
        if "start_index" in fl:
            fk["start_index"] = ctx.number(fl, "start_index", int, minimum=0)
        kw["flow"] = FlowParams(**fk)
    system_file = data["system_file"]
    if not isinstance(system_file, str):
        raise ctx.error("'system_file' must be a string", "system_file")
    if base_dir is not None and system_file not in BUILTIN_SYSTEMS:
        candidate = Path(base_dir) / system_file
        if candidate.is_file():
            system_file = str(candidate)
    return RunConfig(system_file, method, tuple(Ns), sweep, **kw)


def load_run_config(path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", source=str(p)) from None
    return parse_run_config(_loads(text, str(p)), text, str(p), p.parent)


def write_csv(path, header, rows):
    """Write rows with every float in the fixed 17-digit format; ``None`` becomes empty."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for x in row:
            if x is None:
                cells.append("")
            elif isinstance(x, (int, np.integer)) and not isinstance(x, bool):
                cells.append(str(int(x)))
            else:
                cells.append(fmt(x))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_report(path, items):
    """Flat ``key = value`` text block."""
    out = []
    for key, val in items:
        if isinstance(val, float) or isinstance(val, np.floating):
            val = fmt(val)
        out.append(f"{key} = {val}")
    Path(path).write_text("\n".join(out) + "\n")
