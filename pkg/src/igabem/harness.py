"""Analytic oracle, convergence studies, rate fitting and reports.

The benchmark is the uniformly magnetized unit ball with ``m = (0, 0, 1)``:
the vector potential is ``m x x / 3`` inside and ``m x x / (3 |x|^3)``
outside, so only the azimuthal spherical component is populated. The Neumann
jump across the sphere is ``m x n`` and there is no volume source.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bem import Density, assemble_operators, dump_operators, eval_representation
from .derham import l2_project
from .fem import (
    ProblemData,
    ReluctivityModel,
    build_coupling_spaces,
    project_tangential,
    two_form_quadrature,
)
from .geometry import build_unit_ball
from .solver import (
    PicardOptions,
    SolveOptions,
    assemble_block,
    evaluate_exterior,
    solve_linear,
    solve_picard,
)

log = logging.getLogger(__name__)

MAGNETIZATION = np.array([0.0, 0.0, 1.0])
CSV_COLUMNS = ("level", "h", "dofs_volume", "dofs_bem", "error", "per_step_rate", "iterations", "seconds")
EPS_FLOOR = 100.0 * np.finfo(float).eps


# --------------------------------------------------------------------------
# analytic solution
# --------------------------------------------------------------------------


def magnetized_ball_solution(points: np.ndarray, m: np.ndarray = MAGNETIZATION) -> np.ndarray:
    """Cartesian vector potential of the magnetized unit ball.

    ``m x x / 3`` for ``|x| <= 1`` and ``m x x / (3 |x|^3)`` outside; in
    spherical components this is ``(rho/3) sin(theta)`` and
    ``sin(theta) / (3 rho^2)`` in the azimuthal direction.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(x, axis=1)
    mx = np.cross(np.broadcast_to(m, x.shape), x)
    fac = np.where(r <= 1.0, 1.0 / 3.0, 1.0 / (3.0 * np.maximum(r, 1.0) ** 3))
    return mx * fac[:, None]


def magnetized_ball_curl(points: np.ndarray, m: np.ndarray = MAGNETIZATION) -> np.ndarray:
    """Interior flux density ``curl(m x x / 3) = 2 m / 3``."""
    x = np.atleast_2d(points)
    return np.tile(2.0 * np.asarray(m) / 3.0, (x.shape[0], 1))


def magnetized_ball_data(material: ReluctivityModel | None = None, m: np.ndarray = MAGNETIZATION) -> ProblemData:
    """Benchmark data: no source, no Dirichlet jump, Neumann jump ``m x n``."""
    m = np.asarray(m, dtype=float)
    return ProblemData(f=None, u0=None, phi0=lambda x, n: np.cross(np.broadcast_to(m, n.shape), n),
                       reluctivity=material or ReluctivityModel.identity())


def exterior_traces(spaces, ops, m: np.ndarray = MAGNETIZATION) -> tuple[Density, Density]:
    """L2-projected exact exterior Cauchy data on the unit sphere.

    Returns tangential ``gamma_D u^e = m x x / 3`` and flux
    ``gamma_N u^e = curl u^e x n = -(m x n) / 3`` densities.
    """
    m = np.asarray(m, dtype=float)

    def dirichlet(x, n):
        return magnetized_ball_solution(x, m)

    def neumann(x, n):
        return -np.cross(np.broadcast_to(m, n.shape), n) / 3.0

    surf = spaces.surface
    g = project_tangential(surf.tangential, dirichlet)
    flux = l2_project(surf.flux, lambda x: neumann(x, x / np.linalg.norm(x, axis=1)[:, None]))
    return Density(g, surf.tangential), Density(flux, surf.flux)


# --------------------------------------------------------------------------
# evaluation points
# --------------------------------------------------------------------------


def fibonacci_sphere(n: int = 20, radius: float = 1.5, seed: int = 0) -> np.ndarray:
    """``n`` nearly uniform points on a sphere: golden-angle spiral, seeded rotation.

    The spiral ``z_k = 1 - (2k + 1)/n``, ``phi_k = k * pi (3 - sqrt 5)`` is
    rotated by an orthogonal matrix drawn from ``seed`` so no point sits on a
    coordinate axis; the set is a pure function of ``(n, radius, seed)``.
    """
    if n < 1 or radius <= 0.0:
        raise ValueError("need n >= 1 and a positive radius")
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    rxy = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    ang = k * math.pi * (3.0 - math.sqrt(5.0))
    p = np.stack([rxy * np.cos(ang), rxy * np.sin(ang), z], axis=1)
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    p = p @ q.T
    p /= np.linalg.norm(p, axis=1)[:, None]
    return radius * p


# --------------------------------------------------------------------------
# configuration and reports
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyConfig:
    """Convergence study settings.

    ``time_cap`` (seconds, optional) skips a level whose projected time,
    16 times the previous level, exceeds it. ``analytic_densities`` replaces
    the solve by projected exact traces (oracle short-circuit).
    """

    geometry: str = "ball"
    degree: int = 1
    levels: tuple[int, ...] = (0, 1, 2)
    radius: float = 1.5
    npoints: int = 20
    seed: int = 0
    material: str = "identity"
    material_params: dict = field(default_factory=dict)
    solver: SolveOptions = field(default_factory=SolveOptions)
    picard: PicardOptions = field(default_factory=PicardOptions)
    out: str | None = None
    format: str = "csv"
    deterministic: bool = True
    time_cap: float | None = None
    analytic_densities: bool = False
    interior_check: bool = False
    dump_operators: str | None = None

    def __post_init__(self) -> None:
        levels = tuple(int(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise ValueError("levels must be non-empty")
        if any(b <= a for a, b in zip(levels, levels[1:])) or levels[0] < 0:
            raise ValueError("levels must be non-negative and strictly increasing")
        if not self.radius > 1.0:
            raise ValueError("evaluation radius must exceed 1")
        if self.geometry != "ball":
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.degree < 1 or self.npoints < 1:
            raise ValueError("need degree >= 1 and npoints >= 1")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")

    def echo(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d


@dataclass
class LevelResult:
    level: int
    h: float
    dofs_volume: int
    dofs_bem: int
    error: float | None
    iterations: int
    seconds: float
    curl_error: float | None = None
    failure: str | None = None


@dataclass
class RateFit:
    order: float
    stderr: float
    per_step: list[float]


@dataclass
class ConvergenceReport:
    levels: list[LevelResult]
    rate: float | None
    rate_stderr: float | None
    per_step_rates: list[float | None]
    config: dict
    curl_rate: float | None = None

    def errors(self) -> list[float | None]:
        return [r.error for r in self.levels]


def fit_rate(h, errors) -> RateFit:
    """Least-squares slope of ``log(error)`` against ``log(1/h)``.

    Points with error below ``100 eps`` are ignored. ``per_step`` holds
    ``log2(e_l / e_{l+1})`` for consecutive usable pairs (scaled by the
    actual refinement ratio).
    """
    h = np.asarray(h, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.shape != e.shape:
        raise ValueError("h and errors must have the same length")
    ok = np.isfinite(e) & (e > EPS_FLOOR)
    if np.count_nonzero(ok) < 2:
        raise ValueError("fit_rate needs at least two usable error values")
    x = np.log(1.0 / h[ok])
    y = np.log(e[ok])
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    order = -float(coef[0])
    n = x.size
    if n > 2:
        resid = y - A @ coef
        s2 = float(resid @ resid) / (n - 2)
        stderr = float(np.sqrt(s2 / np.sum((x - x.mean()) ** 2)))
    else:
        stderr = 0.0
    hs, es = h[ok], e[ok]
    per_step = [float(np.log(es[i] / es[i + 1]) / np.log(hs[i] / hs[i + 1])) for i in range(n - 1)]
    if order == 0.0:
        order = 0.0  # normalize -0.0
    return RateFit(order, stderr, per_step)


def _per_step_column(levels: list[LevelResult]) -> list[float | None]:
    out: list[float | None] = []
    for i, r in enumerate(levels):
        if i == 0:
            out.append(None)
            continue
        a, b = levels[i - 1], r
        if a.error and b.error and a.error > EPS_FLOOR and b.error > EPS_FLOOR:
            out.append(float(np.log(a.error / b.error) / np.log(a.h / b.h)))
        else:
            out.append(None)
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_to_csv(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r, rate in zip(report.levels, report.per_step_rates):
        w.writerow([_fmt(r.level), _fmt(r.h), _fmt(r.dofs_volume), _fmt(r.dofs_bem), _fmt(r.error),
                    _fmt(rate), _fmt(r.iterations), _fmt(r.seconds)])
    return buf.getvalue()


def report_to_dict(report: ConvergenceReport) -> dict:
    return {
        "columns": list(CSV_COLUMNS),
        "levels": [asdict(r) for r in report.levels],
        "per_step_rates": report.per_step_rates,
        "rate": report.rate,
        "rate_stderr": report.rate_stderr,
        "curl_rate": report.curl_rate,
        "config": report.config,
    }


def report_from_dict(d: dict) -> ConvergenceReport:
    names = {f.name for f in fields(LevelResult)}
    levels = [LevelResult(**{k: v for k, v in r.items() if k in names}) for r in d["levels"]]
    return ConvergenceReport(levels, d.get("rate"), d.get("rate_stderr"), list(d.get("per_step_rates", [])),
                             d.get("config", {}), d.get("curl_rate"))


def emit_report(report: ConvergenceReport, path: str | Path, format: str = "csv") -> Path:
    """Write the report as CSV (fixed columns) or JSON (same fields plus the fit)."""
    path = Path(path)
    if format == "csv":
        text = report_to_csv(report)
    elif format == "json":
        text = json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    else:
        raise ValueError("format must be csv or json")
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def read_report(path: str | Path) -> ConvergenceReport:
    """Parse a JSON report written by ``emit_report``."""
    return report_from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# studies
# --------------------------------------------------------------------------


def _curl_error(spaces, u: np.ndarray) -> float:
    """||curl u_h - 2m/3||_L2 over the ball."""
    vc = spaces.volume
    quad = two_form_quadrature(vc.spaces[2])
    exact = l2_project(vc.spaces[2], magnetized_ball_curl)
    return curl_energy_norm_from_2form(quad, vc.curl.matrix @ u - exact)


def curl_energy_norm_from_2form(quad, coeffs: np.ndarray) -> float:
    pr = quad.proxies(coeffs)
    return float(np.sqrt(max(quad.inner(pr, pr), 0.0)))


def solve_benchmark(degree: int, level: int, material: ReluctivityModel | None = None,
                    options: SolveOptions | None = None, picard: PicardOptions | None = None,
                    domain=None, scalar: str | None = None):
    """Assemble and solve the magnetized-ball benchmark at one (degree, level).

    Returns ``(solution, system, spaces, ops)``.
    """
    volume, boundary = domain or build_unit_ball(level, degree)
    spaces = build_coupling_spaces(volume, boundary, degree, level)
    ops = assemble_operators(spaces.surface, level, scalar=scalar)
    data = magnetized_ball_data(material)
    system = assemble_block(data, spaces, ops)
    if data.reluctivity.is_linear:
        sol = solve_linear(system, options)
    else:
        cc = None
        if ops.V0_density is not None:
            from .bem import steklov_contraction_estimate

            cc = steklov_contraction_estimate(ops).C_C0
        sol = solve_picard(system, options, picard, cc)
    return sol, system, spaces, ops


def run_convergence_study(config: StudyConfig, on_level=None) -> ConvergenceReport:
    """Solve the benchmark on each level and measure the exterior max error.

    ``on_level(level, solution, spaces, ops)`` is called after each solved
    level (solution is ``None`` with analytic densities).
    """
    points = fibonacci_sphere(config.npoints, config.radius, config.seed)
    exact = magnetized_ball_solution(points)
    material = ReluctivityModel.from_config(config.material, config.material_params)
    domain = build_unit_ball(0, config.degree)
    results: list[LevelResult] = []
    last_time = None
    for level in config.levels:
        h = 2.0 ** (-level)
        if config.time_cap is not None and last_time is not None and 16.0 * last_time > config.time_cap:
            results.append(LevelResult(level, h, 0, 0, None, 0, 0.0, failure="skipped: projected time over cap"))
            continue
        t0 = time.perf_counter()
        try:
            volume, boundary = domain
            spaces = build_coupling_spaces(volume, boundary, config.degree, level)
            ops = assemble_operators(spaces.surface, level, scalar=None)
            if config.dump_operators:
                dump_operators(ops, Path(config.dump_operators) / f"p{config.degree}_l{level}")
            data = magnetized_ball_data(material)
            curl_err = None
            if config.analytic_densities:
                dirichlet, neumann = exterior_traces(spaces, ops)
                values = eval_representation(points, dirichlet, neumann, "exterior", spaces.surface, ops.bmesh)
                iterations = 0
            else:
                system = assemble_block(data, spaces, ops)
                if material.is_linear:
                    sol = solve_linear(system, config.solver)
                else:
                    sol = solve_picard(system, config.solver, config.picard)
                values = evaluate_exterior(sol, points, data, spaces, ops)
                iterations = sol.iterations
                if on_level is not None:
                    on_level(level, sol, spaces, ops)
                if config.interior_check:
                    curl_err = _curl_error(spaces, sol.u)
            err = float(np.max(np.linalg.norm(values - exact, axis=1)))
            seconds = time.perf_counter() - t0
            last_time = seconds
            log.info("level %d: error %.3e, %d iterations, %.1f s", level, err, iterations, seconds)
            results.append(LevelResult(level, h, spaces.n_volume, spaces.n_bem, err, iterations,
                                       0.0 if config.deterministic else round(seconds, 3), curl_err))
        except Exception as exc:  # partial report with annotation
            log.error("level %d failed: %s", level, exc)
            results.append(LevelResult(level, h, 0, 0, None, 0, 0.0, failure=f"{type(exc).__name__}: {exc}"))
    return _finish_report(results, config)


def _finish_report(results: list[LevelResult], config: StudyConfig) -> ConvergenceReport:
    usable = [r for r in results if r.error is not None and r.error > EPS_FLOOR]
    rate = stderr = None
    if len(usable) >= 2 and not config.analytic_densities:
        fit = fit_rate([r.h for r in usable], [r.error for r in usable])
        rate, stderr = fit.order, fit.stderr
    curl_rate = None
    cu = [r for r in results if r.curl_error is not None and r.curl_error > EPS_FLOOR]
    if len(cu) >= 2:
        curl_rate = fit_rate([r.h for r in cu], [r.curl_error for r in cu]).order
    return ConvergenceReport(results, rate, stderr, _per_step_column(results), config.echo(), curl_rate)
