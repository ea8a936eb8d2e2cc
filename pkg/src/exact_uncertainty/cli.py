"""Command-line entry point: analyze, evolve, verify-theorem.

Every run writes into one output directory. Settings come from flags, from a
flat ``key = value`` file given with --config (flags win), and from built-in
defaults, in that order of precedence. The output root can be redirected
with the EXACT_UNCERTAINTY_OUT environment variable.

Exit codes: 0 success, 1 other failure, 2 bad configuration or state spec,
3 node formation, 4 unstable step, 5 inconsistent evidence.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import serialize
from .dynamics import SolverConfig, cross_validate, evolve_madelung, evolve_schrodinger, parse_potential_spec
from .errors import ExactUncertaintyError, InvalidArgument
from .grid import Grid1D
from .states import fields_to_wavefunction, make_state, parse_state_spec, wavefunction_to_fields
from .theorem import hbar_from_c, verify_theorem
from .uncertainty import (
    classical_momentum_field,
    conjugate_report,
    cramer_rao_check,
    kinetic_decomposition,
    variance_decomposition,
)

ENV_OUT = "EXACT_UNCERTAINTY_OUT"

# name: (type, default); None defaults are resolved per command
OPTIONS = {
    "state": (str, "gaussian"),
    "hbar": (float, None),
    "C": (float, None),
    "mass": (float, 1.0),
    "x_min": (float, None),
    "x_max": (float, None),
    "n": (int, None),
    "potential": (str, "free"),
    "solver": (str, "schrodinger"),
    "steps": (int, 1000),
    "dt": (float, None),
    "t_final": (float, None),
    "store_every": (int, None),
    "cfl": (float, 0.55),
    "self_convergence": (bool, False),
    "k": (list, [0.5, 2.0, 3.0]),
    "seed": (int, 0),
    "out": (str, None),
    "workers": (int, None),
}
GRID_DEFAULTS = {
    "analyze": (-20.0, 20.0, 1024),
    "evolve": (-20.0, 20.0, 1024),
    "verify-theorem": (-40.0, 40.0, 2048),
}
SWEEPABLE = ("hbar", "C", "mass", "x_min", "x_max", "n", "steps", "dt", "t_final", "seed", "state", "potential")


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise InvalidArgument(f"not a boolean: {text!r}")


def _convert(key: str, value):
    kind = OPTIONS[key][0]
    try:
        if kind is bool:
            return value if isinstance(value, bool) else _bool(value)
        if kind is list:
            if isinstance(value, (list, tuple)):
                return [float(v) for v in value]
            return [float(v) for v in str(value).replace(",", " ").split()]
        return kind(value)
    except ValueError:
        raise InvalidArgument(f"bad value for {key}: {value!r}") from None


def read_config(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; keys match flag names."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidArgument(f"cannot read config {path}: {exc}") from None
    for num, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"{path}:{num}: expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in OPTIONS:
            raise InvalidArgument(f"{path}:{num}: unknown key {key!r}")
        out[key] = _convert(key, val)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="exact-uncertainty", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value file; flags override it")
        units = p.add_mutually_exclusive_group()
        units.add_argument("--hbar", type=float, help="Planck constant (default 1)")
        units.add_argument("--C", type=float, help="fluctuation constant; hbar = 2 sqrt(C)")
        p.add_argument("--mass", type=float)
        p.add_argument("--x-min", dest="x_min", type=float)
        p.add_argument("--x-max", dest="x_max", type=float)
        p.add_argument("--n", type=int, help="grid points, a power of two")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (relative to $%s if set)" % ENV_OUT)
        p.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2,...",
                       help="run once per value, each in its own subdirectory")
        p.add_argument("--workers", type=int, help="parallel sweep workers")

    a = sub.add_parser("analyze", help="uncertainty report for one state")
    common(a)
    a.add_argument("--state", help="kind:key=val,... (default gaussian)")

    e = sub.add_parser("evolve", help="run the Schrodinger and/or Madelung solver")
    common(e)
    e.add_argument("--state")
    e.add_argument("--potential", help="free | harmonic:omega=..,x0=.. | well:a=..,b=.. | sampled:path=..")
    e.add_argument("--solver", choices=["schrodinger", "madelung", "both"])
    e.add_argument("--steps", type=int)
    step = e.add_mutually_exclusive_group()
    step.add_argument("--dt", type=float)
    step.add_argument("--t-final", dest="t_final", type=float, help="sets dt = t_final / steps")
    e.add_argument("--store-every", dest="store_every", type=int)
    e.add_argument("--cfl", type=float, help="Madelung stability safety factor")
    e.add_argument("--self-convergence", dest="self_convergence", action="store_const", const=True,
                   help="with --solver both, also run dt/4 for self-convergence orders")

    t = sub.add_parser("verify-theorem", help="additivity, scaling and coefficient filter")
    common(t)
    t.add_argument("--k", type=float, nargs="+", help="dilation factors (default 0.5 2 3)")
    return parser


def resolve(command: str, flags: dict, config: dict) -> dict:
    """Merge flags over config over defaults and check the unit choice."""
    cfg = {}
    for key, (_, default) in OPTIONS.items():
        if flags.get(key) is not None:
            cfg[key] = _convert(key, flags[key])
        elif key in config:
            cfg[key] = config[key]
        else:
            cfg[key] = default
    # a unit given as a flag displaces the other one coming from the config
    if flags.get("hbar") is not None:
        cfg["C"] = None
    elif flags.get("C") is not None:
        cfg["hbar"] = None
    if cfg["hbar"] is not None and cfg["C"] is not None:
        raise InvalidArgument("give either hbar or C, not both")
    if cfg["C"] is not None:
        cfg["hbar"] = hbar_from_c(cfg["C"])
    else:
        cfg["hbar"] = 1.0 if cfg["hbar"] is None else cfg["hbar"]
        if not cfg["hbar"] > 0:
            raise InvalidArgument("hbar must be positive")
        cfg["C"] = cfg["hbar"] ** 2 / 4
    x_min, x_max, n = GRID_DEFAULTS[command]
    cfg["x_min"] = x_min if cfg["x_min"] is None else cfg["x_min"]
    cfg["x_max"] = x_max if cfg["x_max"] is None else cfg["x_max"]
    cfg["n"] = n if cfg["n"] is None else cfg["n"]
    if cfg["dt"] is not None and cfg["t_final"] is not None:
        if flags.get("dt") is not None:
            cfg["t_final"] = None
        elif flags.get("t_final") is not None:
            cfg["dt"] = None
        else:
            raise InvalidArgument("give either dt or t_final, not both")
    if cfg["solver"] not in ("schrodinger", "madelung", "both"):
        raise InvalidArgument(f"unknown solver {cfg['solver']!r}")
    cfg["command"] = command
    return cfg


def output_dir(out: str | None, command: str) -> Path:
    root = os.environ.get(ENV_OUT)
    path = Path(out or f"runs/{command}")
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _grid(cfg: dict) -> Grid1D:
    return Grid1D(cfg["x_min"], cfg["x_max"], cfg["n"])


def _config_record(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if k not in ("out", "workers")}


# -- commands ------------------------------------------------------------------


def cmd_analyze(cfg: dict, out: Path) -> int:
    grid = _grid(cfg)
    hbar, mass = cfg["hbar"], cfg["mass"]
    spec = parse_state_spec(cfg["state"])
    psi = make_state(spec, grid, hbar)
    report = variance_decomposition(psi, hbar)
    kinetic = kinetic_decomposition(psi, hbar, mass)
    m = wavefunction_to_fields(psi, hbar)
    dX, deltaX, cr_ok = cramer_rao_check(m.p)
    try:
        conj = conjugate_report(psi, hbar).__dict__
    except ExactUncertaintyError as err:
        conj = {"skipped": err.name, "message": str(err)}
    failures = report.invariant_failures()
    if kinetic.residual > report.tolerances["variance_residual_rel"]:
        failures.append("kinetic decomposition residual too large")

    out.mkdir(parents=True, exist_ok=True)
    serialize.write_json(
        out / "report.json",
        {
            "config": _config_record(cfg),
            "state": spec.to_string(),
            "report": report.to_dict(),
            "kinetic": kinetic.__dict__,
            "cramer_rao": {"dX": dX, "deltaX": deltaX, "holds": cr_ok},
            "conjugate": conj,
            "invariants": {"passed": not failures, "failures": failures},
        },
    )
    fields = out / "fields"
    fields.mkdir(exist_ok=True)
    x = grid.x
    pcl = classical_momentum_field(psi, hbar).values
    serialize.write_csv(fields / "p.csv", ["x", "p"], zip(x, m.p.values))
    serialize.write_csv(fields / "s.csv", ["x", "s"], zip(x, m.s.values))
    serialize.write_csv(fields / "P_cl.csv", ["x", "P_cl"], zip(x, pcl))
    return 0 if not failures else 1


def _solver_config(cfg: dict) -> SolverConfig:
    steps = cfg["steps"]
    if cfg["t_final"] is not None:
        dt = cfg["t_final"] / steps if steps > 0 else 0.0
    else:
        dt = 1e-3 if cfg["dt"] is None else cfg["dt"]
    store = cfg["store_every"] or max(steps // 64, 1)
    return SolverConfig(dt, steps, cfg["mass"], cfg["hbar"], cfg["solver"], store, cfg["cfl"])


def _write_trace(trace, out: Path, name: str = "trace.csv"):
    trace.to_csv(out / name)
    trace.dump_fields(out / "fields")


def cmd_evolve(cfg: dict, out: Path) -> int:
    grid = _grid(cfg)
    hbar, C = cfg["hbar"], cfg["C"]
    psi = make_state(parse_state_spec(cfg["state"]), grid, hbar)
    V = parse_potential_spec(cfg["potential"])
    scfg = _solver_config(cfg)
    out.mkdir(parents=True, exist_ok=True)
    record = {"config": _config_record(cfg), "potential": V.to_string()}
    try:
        if cfg["solver"] == "both":
            cv = cross_validate(psi, V, scfg, C, cfg["self_convergence"])
            _write_trace(cv.traces["schrodinger"], out)
            _write_trace(cv.traces["madelung"], out, "trace_madelung.csv")
            record["comparison"] = cv.to_dict()
        elif cfg["solver"] == "schrodinger":
            trace = evolve_schrodinger(psi, V, scfg)
            _write_trace(trace, out)
            record["summary"] = trace.summary()
        else:
            m0 = wavefunction_to_fields(psi, hbar)
            trace = evolve_madelung(m0, V, scfg, C)
            _write_trace(trace, out)
            record["summary"] = trace.summary()
            final = fields_to_wavefunction(trace.states[-1], hbar)
            record["summary"]["final_norm"] = grid.integrate(final.density)
    except ExactUncertaintyError as err:
        # keep whatever the solver produced before it stopped
        if err.trace is not None and err.trace.times:
            _write_trace(err.trace, out)
            record["summary"] = err.trace.summary()
        record["error"] = {"error": err.name, "message": str(err)}
        serialize.write_json(out / "report.json", record)
        raise
    serialize.write_json(out / "report.json", record)
    return 0


def cmd_verify_theorem(cfg: dict, out: Path) -> int:
    scaling_grid = _grid(cfg)
    add_n = min(cfg["n"], 1024)
    additivity_grid = Grid1D(cfg["x_min"] / 2, cfg["x_max"] / 2, add_n)
    res = verify_theorem(cfg["k"], cfg["seed"], scaling_grid, additivity_grid, cfg["C"])
    out.mkdir(parents=True, exist_ok=True)
    serialize.write_json(out / "verdict.json", {"config": _config_record(cfg), **res})
    return 0 if res["passed"] else 1


COMMANDS = {"analyze": cmd_analyze, "evolve": cmd_evolve, "verify-theorem": cmd_verify_theorem}


def run(cfg: dict, out: Path) -> int:
    """One command in one directory; errors become error.json plus an exit code."""
    try:
        return COMMANDS[cfg["command"]](cfg, out)
    except ExactUncertaintyError as err:
        out.mkdir(parents=True, exist_ok=True)
        serialize.write_json(out / "error.json", {"error": err.name, "code": err.exit_code, "message": str(err)})
        print(f"{err.name}: {err}", file=sys.stderr)
        return err.exit_code


def _parse_sweeps(items: list[str]) -> list[tuple[str, list[str]]]:
    out = []
    for item in items:
        if "=" not in item:
            raise InvalidArgument(f"sweep must be key=v1,v2,..., got {item!r}")
        key, vals = item.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in SWEEPABLE:
            raise InvalidArgument(f"cannot sweep {key!r}; choose from {', '.join(SWEEPABLE)}")
        # state and potential specs contain commas themselves, so they split on ';'
        sep = ";" if key in ("state", "potential") else ","
        values = [v.strip() for v in vals.split(sep) if v.strip()]
        if not values:
            raise InvalidArgument(f"empty sweep for {key}")
        out.append((key, values))
    return out


def _sweep_points(command, flags, config, sweeps):
    points = [({}, [])]
    for key, values in sweeps:
        points = [({**over, key: v}, parts + [f"{key}={v}"]) for over, parts in points for v in values]
    for over, parts in points:
        merged = {**flags, **over}
        if "C" in over:
            merged["hbar"] = None
        if "hbar" in over:
            merged["C"] = None
        yield resolve(command, merged, config), "_".join(re.sub(r"[^\w.=+-]", "-", p) for p in parts)


def _sweep_worker(args):
    cfg, out = args
    return run(cfg, Path(out))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k in OPTIONS}
    out = output_dir(args.out, args.command)
    try:
        config = read_config(args.config) if args.config else {}
        if not args.sweep:
            cfg = resolve(args.command, flags, config)
        else:
            sweeps = _parse_sweeps(args.sweep)
            jobs = [(cfg, str(out / sub)) for cfg, sub in _sweep_points(args.command, flags, config, sweeps)]
    except ExactUncertaintyError as err:
        out.mkdir(parents=True, exist_ok=True)
        serialize.write_json(out / "error.json", {"error": err.name, "code": err.exit_code, "message": str(err)})
        print(f"{err.name}: {err}", file=sys.stderr)
        return err.exit_code
    if not args.sweep:
        return run(cfg, out)

    workers = flags.get("workers") or config.get("workers") or min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_sweep_worker, jobs))
    else:
        codes = [_sweep_worker(j) for j in jobs]
    out.mkdir(parents=True, exist_ok=True)
    serialize.write_json(
        out / "sweep.json",
        {"runs": [{"directory": Path(d).name, "exit_code": c} for (_, d), c in zip(jobs, codes)]},
    )
    return int(np.max(codes))


if __name__ == "__main__":
    sys.exit(main())
