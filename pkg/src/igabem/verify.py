"""Property suites behind ``igabem verify``.

Each suite returns a list of :class:`Check` records; a suite passes when
every check does.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .bem import (
    BoundaryMesh,
    Density,
    assemble_operators,
    gradient_free_complement,
    single_layer_potential,
    steklov_contraction_estimate,
)
from .derham import (
    SURFACE_KINDS,
    VOLUME_KINDS,
    DiscreteSpace,
    build_surface_complex,
    build_volume_complex,
    interface_conformity,
)
from .geometry import build_unit_ball

SUITES = ("exactness", "operators", "potential", "calderon")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


def _nnz(M) -> int:
    M = M.tocsr().copy()
    M.eliminate_zeros()
    return int(M.nnz)


def suite_exactness(levels=(0, 1), degrees=(1, 2), conformity_tol: float = 1e-11) -> list[Check]:
    """Incidence compositions are exactly zero; fields conform across interfaces."""
    volume, boundary = build_unit_ball()
    out = []
    for p in degrees:
        for lv in levels:
            vc = build_volume_complex(volume, p, lv)
            sc = build_surface_complex(boundary, p, lv)
            nz = [_nnz(vc.curl.matrix @ vc.grad.matrix), _nnz(vc.div.matrix @ vc.curl.matrix),
                  _nnz(sc.curl_scalar.matrix @ sc.grad.matrix), _nnz(sc.div.matrix @ sc.curl_vec.matrix)]
            out.append(Check(f"compositions p={p} l={lv}", sum(nz) == 0, f"nonzeros {nz}"))
            worst = max(max(interface_conformity(DiscreteSpace(volume, k, p, lv)) for k in VOLUME_KINDS),
                        max(interface_conformity(DiscreteSpace(boundary, k, p, lv)) for k in SURFACE_KINDS))
            out.append(Check(f"conformity p={p} l={lv}", worst <= conformity_tol, f"max jump {worst:.2e}"))
    return out


def suite_operators(levels=(0, 1, 2), degree: int = 1, sym_tol: float = 1e-10) -> list[Check]:
    """Symmetry of V0 and A0, positivity of A0 and of N0 on the gradient-free complement."""
    _, boundary = build_unit_ball()
    out = []
    for lv in levels:
        sc = build_surface_complex(boundary, degree, lv)
        ops = assemble_operators(sc, lv, scalar="density")
        V0 = ops.V0_density
        A0 = ops.A0
        sv = np.abs(V0 - V0.T).max() / np.abs(V0).max()
        sa = np.abs(A0 - A0.T).max() / np.abs(A0).max()
        out.append(Check(f"V0 symmetric l={lv}", sv <= sym_tol, f"defect {sv:.2e}"))
        out.append(Check(f"A0 symmetric l={lv}", sa <= sym_tol, f"defect {sa:.2e}"))
        lam_a = float(sla.eigvalsh(0.5 * (A0 + A0.T))[0])
        out.append(Check(f"A0 positive l={lv}", lam_a > 0.0, f"min eigenvalue {lam_a:.3e}"))
        Z = gradient_free_complement(sc)
        N0 = Z.T @ ops.N0 @ Z
        lam_n = float(sla.eigvalsh(0.5 * (N0 + N0.T))[0])
        out.append(Check(f"N0 positive on complement l={lv}", lam_n > 0.0, f"min eigenvalue {lam_n:.3e}"))
        # structurally zero through curl_G grad_G = 0; the dense product only shows roundoff
        structural = _nnz(sc.curl_scalar.matrix @ sc.grad.matrix)
        kern = float(np.abs(ops.N0 @ sc.grad.matrix.toarray()).max())
        ok = structural == 0 and kern <= 1e-14 * float(np.abs(ops.N0).max())
        out.append(Check(f"N0 kills gradients l={lv}", ok, f"max {kern:.1e}"))
    return out


def shell_potential(level: int = 2, degree: int = 1, radii=(0.0, 2.0, 5.0)) -> np.ndarray:
    """Single layer potential of the unit density on the sphere at points on the x axis."""
    _, boundary = build_unit_ball()
    sc = build_surface_complex(boundary, degree, level)
    bm = BoundaryMesh(boundary, level)
    ones = np.ones(sc.scalar.dim)
    pts = np.array([[r, 0.0, 0.0] for r in radii])
    return single_layer_potential(pts, Density(ones, sc.scalar), bm)


def suite_potential(level: int = 2, tol: float = 1e-3) -> list[Check]:
    """Shell potential equals 1 / max(1, r)."""
    radii = (0.0, 2.0, 5.0)
    vals = shell_potential(level, 1, radii)
    out = []
    for r, v in zip(radii, vals):
        exact = 1.0 / max(1.0, r)
        out.append(Check(f"shell potential r={r:g}", abs(v - exact) <= tol, f"value {v:.6f} vs {exact:.6f}"))
    return out


def suite_calderon(levels=(0, 1), degree: int = 1) -> list[Check]:
    """Measured contraction ratio below 1 and C_C0 in [1/2, 1)."""
    _, boundary = build_unit_ball()
    out = []
    for lv in levels:
        sc = build_surface_complex(boundary, degree, lv)
        ops = assemble_operators(sc, lv, scalar="density")
        diag = steklov_contraction_estimate(ops)
        out.append(Check(f"contraction ratio l={lv}", diag.measured_ratio < 1.0, f"ratio {diag.measured_ratio:.4f}"))
        ok = diag.C_C0 is not None and 0.5 <= diag.C_C0 < 1.0
        out.append(Check(f"C_C0 window l={lv}", ok, "C_C0 undefined" if diag.C_C0 is None else f"C_C0 {diag.C_C0:.4f}, C_N0 {diag.C_N0:.4f}"))
    return out


SUITE_FUNCS: dict[str, Callable[[], list[Check]]] = {
    "exactness": suite_exactness,
    "operators": suite_operators,
    "potential": suite_potential,
    "calderon": suite_calderon,
}


def run_verification(suite: str = "all") -> list[Check]:
    names = SUITES if suite == "all" else (suite,)
    out = []
    for name in names:
        if name not in SUITE_FUNCS:
            raise ValueError(f"unknown suite {name!r}")
        out.extend(SUITE_FUNCS[name]())
    return out
