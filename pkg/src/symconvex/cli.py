"""Command-line experiment runner.

Every command resolves its configuration from built-in defaults, then an
optional ``--config`` file (JSON or TOML), then command-line flags, and writes
``report.json``, ``series_*.csv`` and ``manifest.json`` into ``--out``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import sklearn

from . import __version__
from .diagnostics import caccioppoli_ratio, excess_scan, nikolskii_quotient
from .grid import Grid, bmo_seminorm, load_binary, load_csv, save_binary, save_csv
from .integrands import (
    convexity_and_gradient_check,
    get_integrand,
    growth_constants,
    mu_check,
    recession,
)
from .operators import sphere_samples, ellipticity_margin, get_operator, kk_reduction, sigma_min
from .relaxed import BVPiecewise1D, relaxed_energy_1d, relaxed_energy_grid
from .solver import (
    Problem,
    SolverError,
    ekeland_certificate,
    infimum_lower_bound,
    minimize_stabilized,
    viscosity_sweep,
)
from .spectral import TorusField, korn_ratio, ornstein_search, p2_bound, random_band_limited
from .trace import trace_blowup

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["main", "run", "load_config", "ConfigError", "NumericalFailure", "COMMANDS"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


DEFAULTS = {
    "ellipticity": {"operator": "eps", "n": 2},
    "kk-check": {"op1": "grad", "op2": "eps", "n": 2, "tol": 1e-10},
    "korn": {"operator": "eps", "p": 2.0, "resolution": 64, "samples": 1000, "band": 8, "seed": 0},
    "ornstein": {"operator": "eps", "resolution": 64, "budget": 2000, "doublings": 1,
                 "doubling_budget": 300, "restarts": 3, "seed": 0},
    "integrand-check": {"integrand": "mp:2", "dim": 3, "mu": 3.0, "samples": 10000,
                        "max_magnitude": 1e4, "min_magnitude": 0.0, "seed": 0},
    "relax-eval": {"integrand": "mp:2", "operator": "eps", "resolution": 33,
                   "grid": {"domain": "unit_square"}},
    "solve": {"operator": "eps", "integrand": "mp:2", "resolution": 33,
              "datum": {"family": "sine", "amplitude": 1.0},
              "stabilization": {"delta": 0.1}, "gtol": 1e-10, "max_iter": 5000,
              "diagnostics": {"caccioppoli": True, "nikolskii": True, "excess": True, "bmo": True},
              "seed": 0},
    "sweep": {"operator": "eps", "integrand": "mp:2", "resolution": 33,
              "datum": {"family": "shear_perturbed", "gamma": 0.5, "amplitude": 0.1},
              "deltas": [1e-1, 1e-2, 1e-3, 1e-4], "q_list": [1.5, 2.0],
              "bmo_region": [0.25, 0.75, 0.25, 0.75], "l1_factor": 1.1, "gtol": 1e-10,
              "max_iter": 5000, "ekeland": {"trials": 10}, "seed": 0},
    "trace-blowup": {"radii": [0.5, 0.9, 0.99, 0.999], "n_theta": 256, "fit_last": 3,
                     "resolutions": [65, 129], "subdisk": 0.9},
}
COMMANDS = tuple(DEFAULTS)
_SOLVER_COMMANDS = ("solve", "sweep")
_RANDOMIZED = ("korn", "ornstein", "integrand-check", "solve", "sweep")


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(text)
        return json.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc


_REPLACED = ("stabilization", "datum", "field")  # alternatives, never merged key by key


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in _REPLACED:
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(command: str, file_cfg: dict, overrides: dict) -> dict:
    if command not in DEFAULTS:
        raise ConfigError(f"unknown command {command!r}")
    file_cfg = dict(file_cfg)
    # a config may nest per-command sections
    section = file_cfg.pop(command, {})
    file_cfg.pop("command", None)
    cfg = _merge(_merge(DEFAULTS[command], file_cfg), section)
    cfg = _merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    validate_config(command, cfg)
    return cfg


def validate_config(command: str, cfg: dict) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    if command in _RANDOMIZED:
        need(isinstance(cfg.get("seed"), int) and cfg["seed"] >= 0, "a nonnegative integer seed is required")
    if "resolution" in cfg:
        need(isinstance(cfg["resolution"], int), "resolution must be an integer")
    if command in _SOLVER_COMMANDS:
        need(cfg["resolution"] >= 17, "solver commands need resolution N >= 17")
    try:
        for key in ("operator", "op1", "op2"):
            if key in cfg:
                get_operator(cfg[key], cfg.get("n", 2))
        if "integrand" in cfg:
            _integrand(cfg)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    if command == "sweep":
        d = cfg["deltas"]
        need(len(d) >= 1 and all(x > 0 for x in d) and all(b < a for a, b in zip(d, d[1:])),
             "deltas must be positive and strictly decreasing")
    if command == "solve":
        st = cfg["stabilization"]
        need(bool(st.get("delta")) != bool(st.get("alpha")), "stabilization needs exactly one of delta or alpha")
    if command == "ornstein":
        need(cfg["resolution"] >= 8 and cfg["budget"] >= 1, "ornstein needs resolution >= 8 and budget >= 1")
    if command == "trace-blowup":
        need(cfg["n_theta"] >= 256, "n_theta must be at least 256")


def _integrand(cfg, dim=None):
    desc = cfg["integrand"]
    if dim is None:
        dim = cfg.get("dim") or get_operator(cfg.get("operator", "eps"), 2).dim_W
    if isinstance(desc, dict):
        name = desc.get("name", "")
        if name == "mp":
            desc = f"mp:{desc['p']}"
        else:
            desc = name
    return get_integrand(desc, dim)


def make_datum(grid: Grid, desc: dict):
    """Datum families: affine, shear, shear_perturbed, sine, file."""
    fam = desc.get("family")
    if fam == "affine":
        A = np.asarray(desc.get("matrix", [[0.0, 0.5], [0.0, 0.0]]), dtype=float)
        b = np.asarray(desc.get("offset", [0.0, 0.0]), dtype=float)
        return grid.field(lambda x, y: (A[0, 0] * x + A[0, 1] * y + b[0], A[1, 0] * x + A[1, 1] * y + b[1]))
    if fam == "shear":
        g = float(desc.get("gamma", 0.5))
        return grid.field(lambda x, y: (g * y, 0.0 * x))
    if fam == "shear_perturbed":
        g = float(desc.get("gamma", 0.5))
        a = float(desc.get("amplitude", 0.1))
        return grid.field(lambda x, y: (g * y + a * np.sin(np.pi * y), a * np.sin(np.pi * x)))
    if fam == "sine":
        a = float(desc.get("amplitude", 1.0))
        return grid.field(lambda x, y: (a * np.sin(np.pi * y), 0.0 * x))
    if fam == "file":
        path = Path(desc["path"])
        field = load_binary(path)[0] if path.suffix == ".bin" else load_csv(path)
        if field.grid.N != grid.N:
            raise ConfigError(f"datum file has N={field.grid.N}, expected {grid.N}")
        return field
    raise ConfigError(f"unknown datum family {fam!r}")


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _write_series(out: Path, name: str, header, rows) -> None:
    with open(out / f"series_{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# commands; each returns (report, series, ok)


def cmd_ellipticity(cfg, out):
    op = get_operator(cfg["operator"], cfg["n"])
    rep = ellipticity_margin(op)
    xi = sphere_samples(op.n, max(64, 16 * op.n))
    s = sigma_min(op, xi)
    rows = [list(x) + [v] for x, v in zip(xi.tolist(), s.tolist())]
    _write_series(out, "sigma_min", [f"xi{k}" for k in range(op.n)] + ["sigma_min"], rows)
    return {"operator": op.name, "n": op.n, **rep.to_dict()}, True


def cmd_kk_check(cfg, out):
    op1 = get_operator(cfg["op1"], cfg["n"])
    op2 = get_operator(cfg["op2"], cfg["n"])
    rep = kk_reduction(op1, op2, tol=cfg["tol"])
    rows = [(i, j, v) for i, r in enumerate(rep.C.tolist()) for j, v in enumerate(r)] if rep.C is not None else []
    _write_series(out, "C", ["row", "col", "value"], rows)
    return {"op1": op1.name, "op2": op2.name, **rep.to_dict()}, True


def cmd_korn(cfg, out):
    op = get_operator(cfg["operator"], 2)
    N, p = cfg["resolution"], float(cfg["p"])
    rng = np.random.default_rng(cfg["seed"])
    shear = TorusField.from_function(N, lambda x, y: (np.sin(2 * np.pi * y), 0.0 * x))
    ratios = [korn_ratio(op, random_band_limited(N, 2, cfg["band"], rng, decay=1.0), p)
              for _ in range(cfg["samples"])]
    _write_series(out, "korn", ["sample", "ratio"], list(enumerate(ratios)))
    return {
        "operator": op.name,
        "p": p,
        "resolution": N,
        "shear_ratio": korn_ratio(op, shear, p),
        "max_random_ratio": max(ratios) if ratios else None,
        "samples": len(ratios),
        "p2_bound": p2_bound(op),
    }, True


def cmd_ornstein(cfg, out):
    op = get_operator(cfg["operator"], 2)
    N = cfg["resolution"]
    tr = ornstein_search(op, 1.0, N, cfg["budget"], cfg["seed"], restarts=cfg["restarts"])
    for k in range(cfg["doublings"]):
        N *= 2
        tr = ornstein_search(op, 1.0, N, cfg["doubling_budget"], cfg["seed"] + k + 1,
                             restarts=1, init=tr.best_field, trace=tr)
    tr.to_csv(out / "series_ratio.csv")
    resolutions = sorted({n for _, _, n in tr.entries})
    return {"operator": op.name, **tr.to_dict(),
            "best_by_resolution": {str(n): tr.best_at(n) for n in resolutions}}, True


def cmd_integrand_check(cfg, out):
    f = _integrand(cfg, cfg["dim"])
    rng = np.random.default_rng(cfg["seed"])
    Z = rng.standard_normal((100, f.dim)) * 10.0 ** rng.uniform(-2, 2, size=(100, 1))
    finf = recession(f, Z)
    _write_series(out, "recession", ["norm", "f_inf"], list(zip(np.linalg.norm(Z, axis=-1), finf)))
    conv = convexity_and_gradient_check(f, seed=cfg["seed"])
    report = {"declared": f.declared(), "convexity": conv.to_dict()}
    try:
        c1, c2 = growth_constants(f, seed=cfg["seed"])
        report["growth"] = {"c1": c1, "c2": c2}
    except ValueError as exc:
        report["growth"] = {"error": str(exc)}
    mu = mu_check(f, cfg["mu"], count=cfg["samples"], max_magnitude=cfg["max_magnitude"],
                  seed=cfg["seed"], min_magnitude=cfg["min_magnitude"])
    report["mu_check"] = mu.to_dict()
    return report, True


def cmd_relax_eval(cfg, out):
    if "bv" in cfg:
        f = _integrand(cfg, 1)
        u = BVPiecewise1D.from_dict(cfg["bv"])
        e = relaxed_energy_1d(f, u)
    else:
        grid = Grid(cfg["resolution"], cfg["grid"].get("domain", "unit_square"))
        op = get_operator(cfg["operator"], 2)
        f = _integrand(cfg, op.dim_W)
        u0 = make_datum(grid, cfg.get("datum", {"family": "shear"}))
        u = make_datum(grid, cfg.get("field", cfg.get("datum", {"family": "shear"})))
        e = relaxed_energy_grid(f, u, u0, grid, op)
    d = e.to_dict()
    _write_series(out, "energy", ["part", "value"], [(k, d[k]) for k in ("ac", "singular", "boundary", "total")])
    return {**d, "notes": e.notes}, True


def _problem(cfg, delta=None):
    grid = Grid(cfg["resolution"])
    op = get_operator(cfg["operator"], 2)
    f = _integrand(cfg, op.dim_W)
    u0 = make_datum(grid, cfg["datum"])
    st = cfg.get("stabilization", {})
    if delta is not None:
        st = {"delta": delta}
    kw = {"alpha": st["alpha"], "p": st.get("p", 2.0)} if st.get("alpha") else {"delta": st["delta"]}
    return Problem(grid, f, u0, op, gtol=cfg["gtol"], max_iter=cfg["max_iter"], seed=cfg["seed"], **kw)


def _diagnostics(cfg, problem, u):
    toggles = cfg.get("diagnostics", {})
    L = problem.grid.length
    c = problem.grid.center
    out = {}
    if toggles.get("caccioppoli"):
        out["caccioppoli"] = caccioppoli_ratio(u, 1.0, [tuple(c)], [0.2 * L, 0.1 * L, 0.05 * L]).to_dict()
    if toggles.get("nikolskii"):
        out["nikolskii"] = nikolskii_quotient(u, 1.5, 0.7, (1, 2, 4)).to_dict()
    if toggles.get("excess"):
        out["excess"] = {"regular_fraction": excess_scan(u, problem.integrand).regular_fraction}
    if toggles.get("bmo"):
        out["bmo"] = bmo_seminorm(u, (0.25, 0.75, 0.25, 0.75))
    return out


def cmd_solve(cfg, out):
    pb = _problem(cfg)
    rep = minimize_stabilized(pb)
    rep.diagnostics.update(_diagnostics(cfg, pb, rep.u))
    _write_series(out, "energy", ["iteration", "F_stab", "F"], rep.trajectory)
    save_csv(rep.u, out / "minimizer.csv")
    save_binary(rep.u, out / "minimizer.bin")
    return {"problem": {"N": pb.grid.N, "integrand": pb.integrand.name, "operator": pb.operator.name,
                        "stabilization": pb.stabilization}, **rep.to_dict()}, rep.converged


def cmd_sweep(cfg, out):
    pb = _problem(cfg, delta=cfg["deltas"][0])
    res = viscosity_sweep(pb, cfg["deltas"], cfg["q_list"], tuple(cfg["bmo_region"]), cfg["l1_factor"])
    certs = []
    if cfg.get("ekeland"):
        for rep, delta in zip(res.reports, res.deltas):
            p = pb.replace(delta=delta)
            lo, Fs = infimum_lower_bound(p, rep.u)
            eps = max(Fs - lo, 0.0) if np.isfinite(lo) else 1.0
            cert = ekeland_certificate(p, rep.u, eps, trials=cfg["ekeland"].get("trials", 10), seed=cfg["seed"])
            certs.append({"delta": delta, **cert.to_dict()})
    keys = list(res.summary[0]) if res.summary else []
    _write_series(out, "sweep", keys, [[s.get(k, "") for k in keys] for s in res.summary])
    report = {**res.to_dict(), "ekeland": certs}
    ok = (not res.aborted and res.checks["F_nonincreasing"] and res.checks["L1_bounded"]
          and all(c["certified"] for c in certs))
    return report, ok


def cmd_trace_blowup(cfg, out):
    rep = trace_blowup(cfg["radii"], cfg["n_theta"], cfg["fit_last"], cfg["resolutions"], cfg["subdisk"])
    _write_series(out, "ring", ["r", "I"], list(zip(rep.radii, rep.ring_refined)))
    _write_series(out, "residual", ["N", "sup_eps_dev"], list(zip(rep.resolutions, rep.residuals)))
    ok = rep.ring_converged and rep.area_converged
    return {**rep.to_dict(), "quadrature_converged": ok}, ok


_HANDLERS = {
    "ellipticity": cmd_ellipticity,
    "kk-check": cmd_kk_check,
    "korn": cmd_korn,
    "ornstein": cmd_ornstein,
    "integrand-check": cmd_integrand_check,
    "relax-eval": cmd_relax_eval,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "trace-blowup": cmd_trace_blowup,
}


def run(command: str, cfg: dict, out) -> int:
    """Run a resolved configuration and write the artifacts; returns the exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        report, ok = _HANDLERS[command](cfg, out)
        if not ok:
            status = EXIT_NUMERICAL
    except (ArithmeticError, SolverError, np.linalg.LinAlgError) as exc:
        report = {"error": type(exc).__name__, "message": str(exc), "command": command}
        status = EXIT_NUMERICAL
    except (ValueError, TypeError, KeyError) as exc:
        report = {"error": type(exc).__name__, "message": str(exc), "command": command}
        status = EXIT_CONFIG
    report = {"command": command, "status": status, **report}
    _dump(out / "report.json", report)
    _dump(out / "manifest.json", {
        "command": command,
        "config": cfg,
        "argv": sys.argv[1:],
        "versions": {"symconvex": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__, "scikit-learn": sklearn.__version__},
        "wall_clock_seconds": time.perf_counter() - t0,
        "status": status,
    })
    return status


# ---------------------------------------------------------------------------
# argument parsing


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML configuration file")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--resolution", type=int, help="grid resolution N")

    parser = argparse.ArgumentParser(prog="symconvex", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ellipticity", parents=[common], help="ellipticity margin of an operator")
    p.add_argument("--op", dest="operator", help="built-in name or inline JSON")
    p.add_argument("--n", type=int)

    p = sub.add_parser("kk-check", parents=[common], help="least-squares multiplier between two operators")
    p.add_argument("--op1")
    p.add_argument("--op2")
    p.add_argument("--n", type=int)

    p = sub.add_parser("korn", parents=[common], help="Korn ratios on the torus")
    p.add_argument("--op", dest="operator")
    p.add_argument("--p", type=float)
    p.add_argument("--samples", type=int)

    p = sub.add_parser("ornstein", parents=[common], help="L1 ratio maximisation")
    p.add_argument("--op", dest="operator")
    p.add_argument("--budget", type=int)
    p.add_argument("--doublings", type=int)

    p = sub.add_parser("integrand-check", parents=[common], help="growth, recession and mu-ellipticity checks")
    p.add_argument("--integrand")
    p.add_argument("--dim", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--min-magnitude", dest="min_magnitude", type=float)

    p = sub.add_parser("relax-eval", parents=[common], help="relaxed energy of a BV/grid object")
    p.add_argument("--integrand")

    for name, text in (("solve", "stabilised Dirichlet solve"), ("sweep", "vanishing-viscosity sweep")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--integrand")
        p.add_argument("--op", dest="operator")
        p.add_argument("--gtol", type=float)
        if name == "solve":
            p.add_argument("--delta", type=float)
            p.add_argument("--alpha", type=float)
        else:
            p.add_argument("--deltas", type=_floats, help="comma-separated, decreasing")

    p = sub.add_parser("trace-blowup", parents=[common], help="ring integrals of |1/(z-1)|")
    p.add_argument("--radii", type=_floats)
    p.add_argument("--n-theta", dest="n_theta", type=int)
    p.add_argument("--resolutions", type=_ints)
    return parser


def _error_exit(out, command, exc) -> int:
    err = {"command": command, "status": EXIT_CONFIG, "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(err), file=sys.stderr)
    try:
        Path(out).mkdir(parents=True, exist_ok=True)
        _dump(Path(out) / "error.json", err)
    except OSError:
        pass
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    ns = vars(args)
    overrides = {k: v for k, v in ns.items() if k not in ("command", "config", "out")}
    if command == "solve":
        d, a = overrides.pop("delta", None), overrides.pop("alpha", None)
        if d is not None or a is not None:
            overrides["stabilization"] = {"delta": d, "alpha": a}
    try:
        file_cfg = load_config(args.config) if args.config else {}
        cfg = resolve_config(command, file_cfg, overrides)
    except ConfigError as exc:
        return _error_exit(args.out, command, exc)
    status = run(command, cfg, args.out)
    print(json.dumps({"command": command, "status": status, "out": str(args.out)}))
    return status


if __name__ == "__main__":
    sys.exit(main())
