"""Command line entry point: ``igabem solve | study | verify``.

Config file grammar (plain text, one ``key = value`` per line, ``#`` starts
a comment, blank lines ignored)::

    geometry = ball
    degree = 2
    level = 1              # solve
    levels = 0..3          # study, inclusive range or comma list
    radius = 1.5
    npoints = 20
    format = csv
    out = report.csv
    material = saturation
    material.nu_min = 0.5
    material.s0 = 0.5
    solver.tol = 1e-6
    solver.maxit = 20000
    solver.gauge = consistent-krylov
    solver.eps = 1e-8
    picard.tol = 1e-8
    picard.maxit = 50
    picard.damping = 1.0
    deterministic = true
    seed = 0

Command line flags override values from the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bem import dump_operators
from .fem import ReluctivityModel
from .harness import (
    StudyConfig,
    emit_report,
    fibonacci_sphere,
    magnetized_ball_data,
    magnetized_ball_solution,
    run_convergence_study,
    solve_benchmark,
)
from .solver import PicardOptions, SolveOptions, evaluate_exterior, write_iteration_log
from .verify import SUITES, run_verification

FLOAT_KEYS = {"radius", "solver.tol", "solver.eps", "picard.tol", "picard.damping", "material.nu_min",
              "material.s0", "time_cap"}
INT_KEYS = {"degree", "level", "npoints", "solver.maxit", "picard.maxit", "seed"}
BOOL_KEYS = {"deterministic"}
STR_KEYS = {"geometry", "levels", "format", "out", "material", "solver.gauge", "dump_operators", "log_iterations"}


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict:
    """Parse the key-value grammar documented in the module docstring."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        if key in FLOAT_KEYS:
            out[key] = float(value)
        elif key in INT_KEYS:
            out[key] = int(value)
        elif key in BOOL_KEYS:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"line {lineno}: {key} expects a boolean")
            out[key] = value.lower() in ("true", "1", "yes")
        elif key in STR_KEYS:
            out[key] = value
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return out


def parse_levels(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ".." in text:
        a, b = text.split("..", 1)
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(t) for t in text.split(",") if t.strip())


def _merged(args: argparse.Namespace) -> dict:
    cfg = parse_config(Path(args.config).read_text()) if getattr(args, "config", None) else {}
    flag_map = {
        "geometry": "geometry", "degree": "degree", "level": "level", "levels": "levels", "radius": "radius",
        "npoints": "npoints", "format": "format", "out": "out", "material": "material", "tol": "solver.tol",
        "maxit": "solver.maxit", "gauge": "solver.gauge", "eps": "solver.eps", "picard_tol": "picard.tol",
        "picard_maxit": "picard.maxit", "damping": "picard.damping", "seed": "seed",
        "dump_operators": "dump_operators", "log_iterations": "log_iterations", "time_cap": "time_cap",
    }
    for attr, key in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "nondeterministic", False):
        cfg["deterministic"] = False
    return cfg


def _options(cfg: dict) -> tuple[SolveOptions, PicardOptions, ReluctivityModel]:
    solver = SolveOptions(
        tol=cfg.get("solver.tol", 1e-6),
        maxit=cfg.get("solver.maxit", 20000),
        gauge=cfg.get("solver.gauge", "consistent-krylov"),
        eps=cfg.get("solver.eps", 1e-8),
        deterministic=cfg.get("deterministic", True),
    )
    picard = PicardOptions(tol=cfg.get("picard.tol", 1e-8), maxit=cfg.get("picard.maxit", 50),
                           damping=cfg.get("picard.damping", 1.0))
    params = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("material.")}
    material = ReluctivityModel.from_config(cfg.get("material", "identity"), params)
    return solver, picard, material


def cmd_solve(args: argparse.Namespace) -> int:
    cfg = _merged(args)
    if cfg.get("geometry", "ball") != "ball":
        raise ConfigError("only the ball geometry is available")
    solver, picard, material = _options(cfg)
    p, lv = cfg.get("degree", 1), cfg.get("level", 1)
    sol, system, spaces, ops = solve_benchmark(p, lv, material, solver, picard)
    if cfg.get("dump_operators"):
        dump_operators(ops, cfg["dump_operators"])
    if cfg.get("log_iterations"):
        write_iteration_log(sol, cfg["log_iterations"])
    pts = fibonacci_sphere(cfg.get("npoints", 20), cfg.get("radius", 1.5), cfg.get("seed", 0))
    vals = evaluate_exterior(sol, pts, magnetized_ball_data(material), spaces, ops)
    err = float(np.max(np.linalg.norm(vals - magnetized_ball_solution(pts), axis=1)))
    summary = {
        "degree": p, "level": lv, "material": material.kind, "dofs_volume": spaces.n_volume,
        "dofs_bem": spaces.n_bem, "iterations": sol.iterations, "residual": sol.log.get("residual"),
        "max_exterior_error": err,
    }
    if "picard_iterations" in sol.log:
        summary["picard_iterations"] = sol.log["picard_iterations"]
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_study(args: argparse.Namespace) -> int:
    cfg = _merged(args)
    solver, picard, material = _options(cfg)
    if "out" not in cfg:
        raise ConfigError("study needs --out")
    config = StudyConfig(
        geometry=cfg.get("geometry", "ball"),
        degree=cfg.get("degree", 1),
        levels=parse_levels(cfg.get("levels", "0..2")),
        radius=cfg.get("radius", 1.5),
        npoints=cfg.get("npoints", 20),
        seed=cfg.get("seed", 0),
        material=material.kind,
        material_params={k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("material.")},
        solver=solver,
        picard=picard,
        out=cfg["out"],
        format=cfg.get("format", "csv"),
        deterministic=cfg.get("deterministic", True),
        time_cap=cfg.get("time_cap"),
        dump_operators=cfg.get("dump_operators"),
    )
    report = run_convergence_study(config)
    emit_report(report, config.out, config.format)
    failed = [r for r in report.levels if r.failure]
    rate = "n/a" if report.rate is None else f"{report.rate:.3f}"
    sys.stderr.write(f"fitted order {rate}; {len(failed)} failed level(s)\n")
    return 1 if failed else 0


def cmd_verify(args: argparse.Namespace) -> int:
    checks = run_verification(args.suite)
    for c in checks:
        sys.stdout.write(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}\n")
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="igabem", description="Spline FEM-BEM coupling for curl-curl magnetostatics")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key-value config file (flags override)")
        p.add_argument("--geometry", choices=["ball"])
        p.add_argument("--degree", type=int)
        p.add_argument("--material", choices=["identity", "saturation"])
        p.add_argument("--tol", type=float)
        p.add_argument("--maxit", type=int)
        p.add_argument("--gauge", choices=["consistent-krylov", "epsilon-regularization"])
        p.add_argument("--eps", type=float)
        p.add_argument("--picard-tol", dest="picard_tol", type=float)
        p.add_argument("--picard-maxit", dest="picard_maxit", type=int)
        p.add_argument("--damping", type=float)
        p.add_argument("--radius", type=float)
        p.add_argument("--npoints", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--dump-operators", dest="dump_operators", metavar="DIR")
        p.add_argument("--nondeterministic", action="store_true", help="record wall times in reports")

    ps = sub.add_parser("solve", help="solve the magnetized-ball benchmark at one level")
    common(ps)
    ps.add_argument("--level", type=int)
    ps.add_argument("--log-iterations", dest="log_iterations", metavar="PATH")
    ps.set_defaults(func=cmd_solve)

    pst = sub.add_parser("study", help="convergence study over a level range")
    common(pst)
    pst.add_argument("--levels", help="A..B or comma list")
    pst.add_argument("--format", choices=["csv", "json"])
    pst.add_argument("--time-cap", dest="time_cap", type=float)
    pst.set_defaults(func=cmd_study)

    pv = sub.add_parser("verify", help="run property suites")
    pv.add_argument("--suite", choices=list(SUITES) + ["all"], default="all")
    pv.set_defaults(func=cmd_verify)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return int(args.func(args))
    except (ConfigError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
