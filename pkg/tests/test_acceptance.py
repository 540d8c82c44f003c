"""Acceptance criteria 1-10; one PASS/FAIL line each in the terminal summary."""

import time

import numpy as np
import pytest

from igabem.bem import assemble_operators, steklov_contraction_estimate
from igabem.cli import main
from igabem.fem import ReluctivityModel, build_coupling_spaces
from igabem.harness import (
    StudyConfig,
    exterior_traces,
    magnetized_ball_data,
    magnetized_ball_solution,
    run_convergence_study,
    solve_benchmark,
)
from igabem.solver import PicardOptions, SolveOptions, evaluate_exterior
from igabem.verify import suite_calderon, suite_exactness, suite_operators, suite_potential

PROBE = np.array([[1.5, 0.0, 0.0]])


def summarize(checks):
    bad = [c for c in checks if not c.passed]
    return not bad, "; ".join(f"{c.name}: {c.detail}" for c in (bad or checks[:3]))


@pytest.fixture(scope="module")
def studies():
    """The two convergence studies; the p=2 level-3 solution is also evaluated at (1.5, 0, 0)."""
    probe = {}

    def hook(level, sol, spaces, ops):
        if level == 3:
            probe["value"] = evaluate_exterior(sol, PROBE, magnetized_ball_data(), spaces, ops)[0]

    t0 = time.perf_counter()
    p1 = run_convergence_study(StudyConfig(degree=1, levels=(0, 1, 2, 3, 4)))
    p2 = run_convergence_study(StudyConfig(degree=2, levels=(0, 1, 2, 3)), on_level=hook)
    return p1, p2, probe, time.perf_counter() - t0


@pytest.mark.criterion(1)
def test_exterior_super_convergence(studies, criterion):
    p1, p2, _, seconds = studies
    ok = (p1.rate is not None and 1.5 <= p1.rate <= 2.5 and p2.rate is not None and 3.3 <= p2.rate <= 4.7
          and seconds <= 1800.0)
    assert criterion(1, ok, f"p=1 order {p1.rate:.3f}, p=2 order {p2.rate:.3f}, {seconds:.0f} s")


@pytest.mark.criterion(2)
def test_exterior_point_value(studies, criterion):
    _, _, probe, _ = studies
    exact = magnetized_ball_solution(PROBE)[0]
    rel = float(np.linalg.norm(probe["value"] - exact) / np.linalg.norm(exact))
    assert criterion(2, rel <= 1e-3, f"value {np.array2string(probe['value'], precision=6)}, rel. error {rel:.2e}")


@pytest.mark.criterion(3)
def test_exact_sequence(criterion):
    ok, detail = summarize(suite_exactness())
    assert criterion(3, ok, detail)


@pytest.mark.criterion(4)
def test_operator_structure(criterion):
    t0 = time.perf_counter()
    ok, detail = summarize(suite_operators(levels=(0, 1, 2)))
    seconds = time.perf_counter() - t0
    assert criterion(4, ok and seconds <= 120.0, f"{detail}; {seconds:.0f} s")


@pytest.mark.criterion(5)
def test_contraction(criterion):
    t0 = time.perf_counter()
    ok, detail = summarize(suite_calderon(levels=(0, 1)))
    seconds = time.perf_counter() - t0
    assert criterion(5, ok and seconds <= 60.0, f"{detail}; {seconds:.0f} s")


@pytest.mark.criterion(6)
def test_shell_potential(criterion):
    ok, detail = summarize(suite_potential(level=2))
    assert criterion(6, ok, detail)


@pytest.mark.criterion(7)
def test_exterior_residual_decay(ball, criterion):
    # quadratic splines; the linear level-0 mesh is pre-asymptotic for this quantity
    eucl, dual = [], []
    for lv in (0, 1, 2):
        spaces = build_coupling_spaces(*ball, 2, lv)
        ops = assemble_operators(spaces.surface, lv, scalar=None)
        g, phi = exterior_traces(spaces, ops)
        r = ops.solenoidal.matrix.T @ (ops.A @ phi.coeffs + 0.5 * (ops.M @ g.coeffs) + ops.C0_quotient @ g.coeffs)
        eucl.append(float(np.linalg.norm(r)))
        dual.append(float(np.sqrt(r @ np.linalg.solve(ops.A0, r))))
    ratios = [b / a for a, b in zip(eucl, eucl[1:])] + [b / a for a, b in zip(dual, dual[1:])]
    ok = max(ratios) <= 0.6
    assert criterion(7, ok, "p=2 residuals " + ", ".join(f"{v:.2e}" for v in eucl)
                     + "; ratios " + ", ".join(f"{v:.3f}" for v in ratios))


@pytest.mark.criterion(8)
def test_gauge_robustness(criterion):
    a, _, spaces, _ = solve_benchmark(1, 1, None, SolveOptions(tol=1e-12))
    b, _, _, _ = solve_benchmark(1, 1, None, SolveOptions(gauge="epsilon-regularization"))
    C = spaces.volume.curl.matrix
    dc = float(np.linalg.norm(C @ (a.u - b.u)) / np.linalg.norm(C @ a.u))
    dp = float(np.linalg.norm(a.phi - b.phi) / np.linalg.norm(a.phi))
    assert criterion(8, max(dc, dp) <= 1e-5, f"curl u rel. diff {dc:.1e}, phi rel. diff {dp:.1e}")


@pytest.mark.criterion(9)
def test_nonlinear_solve(criterion):
    model = ReluctivityModel.saturation()
    picard = PicardOptions()
    sol, _, _, ops = solve_benchmark(1, 1, model, SolveOptions(tol=1e-10), picard, scalar="density")
    cc = steklov_contraction_estimate(ops).C_C0
    mono, _ = model.probe_constants()
    incs = sol.log["increments"]
    res = sol.log["nonlinear_residual"]
    ok = (cc is not None and mono > 0.25 * cc and incs[-1] < 1e-8 and sol.log["picard_iterations"] <= 50
          and res <= 10.0 * picard.tol)
    assert criterion(9, ok, f"probed C_M {mono:.3f} > C_C0/4 = {0.25 * cc:.3f}; {sol.log['picard_iterations']} "
                            f"iterations, last increment {incs[-1]:.1e}, nonlinear residual {res:.1e}")


@pytest.mark.criterion(10)
def test_determinism(tmp_path, criterion):
    path = tmp_path / "report.csv"
    runs = []
    for _ in range(2):
        code = main(["study", "--degree", "1", "--levels", "0..2", "--out", str(path)])
        runs.append((code, path.read_bytes()))
    ok = runs[0][0] == runs[1][0] == 0 and runs[0][1] == runs[1][1]
    assert criterion(10, ok, f"{len(runs[0][1])} bytes, identical: {runs[0][1] == runs[1][1]}")
