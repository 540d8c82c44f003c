"""Galerkin boundary element operators for the Laplace kernel on spline surfaces.

All operators are assembled from one pair loop over surface elements. Three
symmetric kernels share it:

* scalar single layer  ``V[i, j] = <<G s_i(x) s_j(y)>>``,
* vector single layer  ``A[i, j] = <<G psi_i(x) . psi_j(y)>>`` on the flux space,
* double layer pairing ``K[i, j] = <<psi_i(x) . (grad_x G x psi_j(y))>>``.

The last one is symmetric because ``grad_x G`` is odd under ``x <-> y``. The
pairing of the Maxwell double layer trace with tangential fields follows from
``K`` and the rotation ``xi -> xi x n`` (tangential -> flux), which is an
exact incidence of the surface complex.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba as nb
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .derham import (
    DiscreteSpace,
    SolenoidalBasis,
    assemble_mass,
    SurfaceComplex,
    build_solenoidal_basis,
    patch_quadrature,
    element_basis,
)
from .geometry import GeometryError, MultipatchDomain, eval_homogeneous
from .quadrature import (
    Adjacency,
    SurfaceMesh,
    canonical_pair_rule,
    classify_pair,
    gauss_rule,
    regular_order,
)

FOUR_PI = 4.0 * np.pi
ON_SURFACE_TOL = 1e-12
KIND_CODE = {"value": 0, "covariant": 1, "piola": 2, "density": 3}


def laplace_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """G(x, y) = 1 / (4 pi |x - y|) for broadcastable point arrays (..., 3)."""
    return 1.0 / (FOUR_PI * np.linalg.norm(np.asarray(x) - np.asarray(y), axis=-1))


def laplace_kernel_gradient(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """grad_x G(x, y) = -(x - y) / (4 pi |x - y|^3)."""
    r = np.asarray(x) - np.asarray(y)
    d = np.linalg.norm(r, axis=-1, keepdims=True)
    return -r / (FOUR_PI * d ** 3)


@dataclass(frozen=True)
class QuadratureOrders:
    """Gauss points per direction for well-separated and touching pairs."""

    regular: int
    singular: int

    @classmethod
    def default(cls, degree: int, level: int | None = None) -> "QuadratureOrders":
        """Default orders; coarse meshes get extra points on touching pairs.

        Large curved elements make the regularized singular integrands less
        smooth, so the touching-pair order is ``max(degree + 4, 10 - 2 level)``
        when the level is known.
        """
        singular = degree + 4
        if level is not None:
            singular = max(singular, 10 - 2 * int(level))
        return cls(degree + 2, singular)

    def scaled(self, factor: int) -> "QuadratureOrders":
        return QuadratureOrders(self.regular * factor, self.singular * factor)


# --------------------------------------------------------------------------
# element data for the numba kernels
# --------------------------------------------------------------------------


def _bernstein_matrix(deg: int, u: np.ndarray) -> np.ndarray:
    from math import comb

    k = np.arange(deg + 1)
    c = np.array([comb(deg, int(i)) for i in k], dtype=float)
    return c * u[:, None] ** k * (1.0 - u[:, None]) ** (deg - k)


@dataclass(frozen=True, eq=False)
class SpaceTables:
    """Per-element Bernstein extraction of a surface space (numba friendly)."""

    space: DiscreteSpace
    kind: int
    degs: np.ndarray  # (ncomp, 2)
    ext: np.ndarray  # (ncomp, 2, nE, p+1, p+1)
    local_dofs: np.ndarray  # (nelem, nloc) broken indices

    @property
    def nloc(self) -> int:
        return self.local_dofs.shape[1]


def build_space_tables(space: DiscreteSpace, mesh: SurfaceMesh) -> SpaceTables:
    if space.d != 2:
        raise ValueError("surface space expected")
    nE = space.n_elements
    p = space.degree
    ncomp = space.ncomp
    degs = np.zeros((ncomp, 2), dtype=np.int64)
    ext = np.zeros((ncomp, 2, nE, p + 1, p + 1))
    firsts = np.zeros((ncomp, 2, nE), dtype=np.int64)
    for c in range(ncomp):
        for a in range(2):
            ax = space.axes[c][a]
            q = ax.knots.degree
            degs[c, a] = q
            u = (np.arange(q + 1) + 0.5) / (q + 1)
            Bm = _bernstein_matrix(q, u)
            for e in range(nE):
                first, tab = ax.element_eval(np.full(q + 1, e), u, 0)
                ext[c, a, e, : q + 1, : q + 1] = np.linalg.solve(Bm, tab[:, 0, :]).T
                firsts[c, a, e] = first[0]
    k, i, j = mesh.elements.T
    cols = []
    for c in range(ncomp):
        shape = space.comp_shapes[c]
        for al in range(degs[c, 0] + 1):
            for be in range(degs[c, 1] + 1):
                cols.append(k * space.patch_size + space.comp_offsets[c]
                            + (firsts[c, 0, i] + al) * shape[1] + firsts[c, 1, j] + be)
    local = np.stack(cols, axis=1).astype(np.int64)
    return SpaceTables(space, KIND_CODE[space.kind], degs, ext, local)


class BoundaryMesh:
    """Surface mesh with per-element rational Bezier nets and bounding spheres."""

    def __init__(self, boundary: MultipatchDomain, level: int):
        self.boundary = boundary
        self.level = level
        self.mesh = SurfaceMesh(boundary, level)
        self.nE = 2 ** level
        nE = self.nE
        grid = np.arange(nE + 1) / nE
        for patch in boundary.patches:
            for a in range(2):
                bp = patch.knots[a].breakpoints
                if not np.all(np.isin(np.round(bp * nE, 9) % 1.0, [0.0])):
                    raise GeometryError("geometry breakpoints must lie on the dyadic element grid")
        del grid
        gmax = max(max(p.knots.degrees) for p in boundary.patches)
        self.geo, self.geo_degree = self._bezier_nets(gmax)
        E = self.mesh.nelem
        # bounding spheres from a sample grid
        s = np.linspace(0.0, 1.0, 7)
        su, sv = np.meshgrid(s, s, indexing="ij")
        pts = eval_element_points(self, np.repeat(np.arange(E), su.size),
                                  np.tile(np.stack([su.ravel(), sv.ravel()], 1), (E, 1)))[0].reshape(E, -1, 3)
        self.centers = pts.mean(axis=1)
        # inflate slightly to cover curvature between samples
        self.radii = 1.05 * np.linalg.norm(pts - self.centers[:, None, :], axis=2).max(axis=1)

    def _bezier_nets(self, gmax: int) -> tuple[np.ndarray, int]:
        """Homogeneous Bezier nets per element at the lowest exact degree.

        Degree-elevated patches (like the sphere caps) are detected by
        refitting at lower degree and comparing on a check grid.
        """
        nE = self.nE
        E = self.mesh.nelem
        check = (np.arange(gmax + 2) + 0.25) / (gmax + 2)
        cu, cv = np.meshgrid(check, check, indexing="ij")
        cloc = np.stack([cu.ravel(), cv.ravel()], axis=1)
        best = None
        for g in range(gmax, 0, -1):
            u = (np.arange(g + 1) + 0.5) / (g + 1)
            Binv = np.linalg.inv(_bernstein_matrix(g, u))
            uu, vv = np.meshgrid(u, u, indexing="ij")
            loc = np.stack([uu.ravel(), vv.ravel()], axis=1)
            geo = np.zeros((E, g + 1, g + 1, 4))
            err = 0.0
            Bc = _bernstein_matrix(g, check)
            for e, (k, i, j) in enumerate(self.mesh.elements):
                patch = self.boundary.patches[k]
                hom = eval_homogeneous(patch, (loc + np.array([i, j])) / nE).reshape(g + 1, g + 1, 4)
                geo[e] = np.einsum("ai,bj,ijk->abk", Binv, Binv, hom)
                ref = eval_homogeneous(patch, (cloc + np.array([i, j])) / nE).reshape(check.size, check.size, 4)
                fit = np.einsum("ai,bj,ijk->abk", Bc, Bc, geo[e])
                err = max(err, float(np.abs(fit - ref).max() / np.abs(ref).max()))
            if err > 1e-13:
                break
            best = (geo, g)
        if best is None:
            raise GeometryError("could not extract element Bezier nets")
        return best

    @cached_property
    def touching(self) -> np.ndarray:
        return self.mesh.touching_pairs()


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------


@nb.njit(cache=True, fastmath=True)
def _bernstein(deg, u, b, db, lo):
    """Bernstein values and derivatives of degree ``deg``; ``lo`` is scratch."""
    b[0] = 1.0
    for k in range(1, deg + 1):
        saved = 0.0
        for r in range(k):
            tmp = b[r]
            b[r] = saved + (1.0 - u) * tmp
            saved = u * tmp
        b[k] = saved
    if deg == 0:
        db[0] = 0.0
        return
    lo[0] = 1.0
    for k in range(1, deg):
        saved = 0.0
        for r in range(k):
            tmp = lo[r]
            lo[r] = saved + (1.0 - u) * tmp
            saved = u * tmp
        lo[k] = saved
    db[0] = -deg * lo[0]
    for i in range(1, deg):
        db[i] = deg * (lo[i - 1] - lo[i])
    db[deg] = deg * lo[deg - 1]


@nb.njit(cache=True, fastmath=True)
def _bernstein_values(deg, u, b):
    b[0] = 1.0
    for k in range(1, deg + 1):
        saved = 0.0
        for r in range(k):
            tmp = b[r]
            b[r] = saved + (1.0 - u) * tmp
            saved = u * tmp
        b[k] = saved


@nb.njit(cache=True, fastmath=True)
def _geo_eval(geo, g, u, v, nE, x, J, bu, dbu, bv, dbv, lo):
    """Point and patch-parameter Jacobian on an element (last five are scratch)."""
    _bernstein(g, u, bu, dbu, lo)
    _bernstein(g, v, bv, dbv, lo)
    P0 = P1 = P2 = P3 = 0.0
    U0 = U1 = U2 = U3 = 0.0
    V0 = V1 = V2 = V3 = 0.0
    for i in range(g + 1):
        for j in range(g + 1):
            c = bu[i] * bv[j]
            cu = dbu[i] * bv[j]
            cv = bu[i] * dbv[j]
            h0 = geo[i, j, 0]
            h1 = geo[i, j, 1]
            h2 = geo[i, j, 2]
            h3 = geo[i, j, 3]
            P0 += c * h0
            P1 += c * h1
            P2 += c * h2
            P3 += c * h3
            U0 += cu * h0
            U1 += cu * h1
            U2 += cu * h2
            U3 += cu * h3
            V0 += cv * h0
            V1 += cv * h1
            V2 += cv * h2
            V3 += cv * h3
    iw = 1.0 / P3
    x[0] = P0 * iw
    x[1] = P1 * iw
    x[2] = P2 * iw
    s = iw * nE
    J[0, 0] = (U0 - x[0] * U3) * s
    J[1, 0] = (U1 - x[1] * U3) * s
    J[2, 0] = (U2 - x[2] * U3) * s
    J[0, 1] = (V0 - x[0] * V3) * s
    J[1, 1] = (V1 - x[1] * V3) * s
    J[2, 1] = (V2 - x[2] * V3) * s


@nb.njit(cache=True, fastmath=True)
def _basis_eval(kind, degs, ext, i, j, u, v, J, sval, vval, bu, bv, fb_all):
    """Physical basis values times the surface measure.

    Scalars (value: phi * sqrt g, density: phi) go to ``sval``; flux fields
    (J phi) go to ``vval``. Tangential fields are not needed by the kernels.
    ``bu``, ``bv``, ``fb_all`` are scratch vectors of length >= p + 1.
    """
    ncomp = degs.shape[0]
    sg = 1.0
    if kind == 0:
        c0 = J[1, 0] * J[2, 1] - J[2, 0] * J[1, 1]
        c1 = J[2, 0] * J[0, 1] - J[0, 0] * J[2, 1]
        c2 = J[0, 0] * J[1, 1] - J[1, 0] * J[0, 1]
        sg = np.sqrt(c0 * c0 + c1 * c1 + c2 * c2)
    n = 0
    for c in range(ncomp):
        q0 = degs[c, 0]
        q1 = degs[c, 1]
        _bernstein_values(q0, u, bu)
        _bernstein_values(q1, v, bv)
        for be in range(q1 + 1):
            fb = 0.0
            for r in range(q1 + 1):
                fb += ext[c, 1, j, be, r] * bv[r]
            fb_all[be] = fb
        for al in range(q0 + 1):
            fa = 0.0
            for r in range(q0 + 1):
                fa += ext[c, 0, i, al, r] * bu[r]
            for be in range(q1 + 1):
                val = fa * fb_all[be]
                if kind == 2:
                    vval[n, 0] = J[0, c] * val
                    vval[n, 1] = J[1, c] * val
                    vval[n, 2] = J[2, c] * val
                else:
                    sval[n] = val * sg
                n += 1


@nb.njit(cache=True, fastmath=True)
def _element_tables(elems, geo, g, nE, upts, wts, s_kind, s_degs, s_ext, s_nloc,
                    v_degs, v_ext, v_nloc):
    E = elems.shape[0]
    m = upts.shape[0]
    X = np.empty((E, m, 3))
    S = np.zeros((E, m, max(s_nloc, 1)))
    V = np.zeros((E, m, max(v_nloc, 1), 3))
    x = np.empty(3)
    J = np.empty((3, 2))
    sdummy = np.empty(1)
    vdummy = np.empty((1, 3))
    W = np.empty((6, max(g, s_degs.max(), v_degs.max()) + 2))
    w0 = W[0]
    w1 = W[1]
    w2 = W[2]
    w3 = W[3]
    w4 = W[4]
    w5 = W[5]
    area = 1.0 / (nE * nE)
    for e in range(E):
        i = elems[e, 1]
        j = elems[e, 2]
        for q in range(m):
            _geo_eval(geo[e], g, upts[q, 0], upts[q, 1], nE, x, J, w0, w1, w2, w3, w4)
            for k in range(3):
                X[e, q, k] = x[k]
            w = wts[q] * area
            if s_nloc > 0:
                _basis_eval(s_kind, s_degs, s_ext, i, j, upts[q, 0], upts[q, 1], J, S[e, q], vdummy, w0, w2, w5)
                for a in range(s_nloc):
                    S[e, q, a] *= w
            if v_nloc > 0:
                _basis_eval(2, v_degs, v_ext, i, j, upts[q, 0], upts[q, 1], J, sdummy, V[e, q], w0, w2, w5)
                for a in range(v_nloc):
                    for k in range(3):
                        V[e, q, a, k] *= w
    return X, S, V


@nb.njit(cache=True, fastmath=True)
def _far_pairs(pairs, X, S, V, s_loc, v_loc, s_nloc, v_nloc, Vs, A, K):
    inv4pi = 1.0 / (4.0 * np.pi)
    m = X.shape[1]
    Gw = np.empty((m, m))
    gw = np.empty((3, m, m))
    Ts = np.empty((m, max(s_nloc, 1)))
    Tv = np.empty((m, max(v_nloc, 1), 3))
    U = np.empty((3, 3, m, max(v_nloc, 1)))
    for p in range(pairs.shape[0]):
        a = pairs[p, 0]
        b = pairs[p, 1]
        for q in range(m):
            for r in range(m):
                d0 = X[a, q, 0] - X[b, r, 0]
                d1 = X[a, q, 1] - X[b, r, 1]
                d2 = X[a, q, 2] - X[b, r, 2]
                d = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                G = inv4pi / d
                Gw[q, r] = G
                f = -G / (d * d)
                gw[0, q, r] = f * d0
                gw[1, q, r] = f * d1
                gw[2, q, r] = f * d2
        if s_nloc > 0:
            for q in range(m):
                for j in range(s_nloc):
                    acc = 0.0
                    for r in range(m):
                        acc += Gw[q, r] * S[b, r, j]
                    Ts[q, j] = acc
            for i in range(s_nloc):
                gi = s_loc[a, i]
                for j in range(s_nloc):
                    acc = 0.0
                    for q in range(m):
                        acc += S[a, q, i] * Ts[q, j]
                    gj = s_loc[b, j]
                    Vs[gi, gj] += acc
                    if a != b:
                        Vs[gj, gi] += acc
        if v_nloc > 0:
            for q in range(m):
                for j in range(v_nloc):
                    for k in range(3):
                        acc = 0.0
                        for r in range(m):
                            acc += Gw[q, r] * V[b, r, j, k]
                        Tv[q, j, k] = acc
                    for c in range(3):
                        for k in range(3):
                            if c == k:
                                continue
                            acc = 0.0
                            for r in range(m):
                                acc += gw[c, q, r] * V[b, r, j, k]
                            U[c, k, q, j] = acc
            for i in range(v_nloc):
                gi = v_loc[a, i]
                for j in range(v_nloc):
                    accA = 0.0
                    accK = 0.0
                    for q in range(m):
                        x0 = V[a, q, i, 0]
                        x1 = V[a, q, i, 1]
                        x2 = V[a, q, i, 2]
                        accA += x0 * Tv[q, j, 0] + x1 * Tv[q, j, 1] + x2 * Tv[q, j, 2]
                        # g . (vb x va) = sum eps_{c k l} g_c vb_k va_l
                        accK += (U[0, 1, q, j] * x2 - U[0, 2, q, j] * x1
                                 + U[1, 2, q, j] * x0 - U[1, 0, q, j] * x2
                                 + U[2, 0, q, j] * x1 - U[2, 1, q, j] * x0)
                    gj = v_loc[b, j]
                    A[gi, gj] += accA
                    K[gi, gj] += accK
                    if a != b:
                        A[gj, gi] += accA
                        K[gj, gi] += accK


@nb.njit(cache=True, fastmath=True)
def _singular_pairs(pairs, kinds, maps, rpts, rwts, roff, elems, geo, g, nE,
                    s_kind, s_degs, s_ext, s_loc, s_nloc, v_degs, v_ext, v_loc, v_nloc, Vs, A, K):
    inv4pi = 1.0 / (4.0 * np.pi)
    xa = np.empty(3)
    xb = np.empty(3)
    Ja = np.empty((3, 2))
    Jb = np.empty((3, 2))
    sa = np.empty(max(s_nloc, 1))
    sb = np.empty(max(s_nloc, 1))
    va = np.empty((max(v_nloc, 1), 3))
    vb = np.empty((max(v_nloc, 1), 3))
    Ls = np.empty((max(s_nloc, 1), max(s_nloc, 1)))
    LA = np.empty((max(v_nloc, 1), max(v_nloc, 1)))
    LK = np.empty((max(v_nloc, 1), max(v_nloc, 1)))
    W = np.empty((6, max(g, s_degs.max(), v_degs.max()) + 2))
    w0 = W[0]
    w1 = W[1]
    w2 = W[2]
    w3 = W[3]
    w4 = W[4]
    w5 = W[5]
    area2 = 1.0 / (nE * nE * nE * nE)
    for p in range(pairs.shape[0]):
        a = pairs[p, 0]
        b = pairs[p, 1]
        kd = kinds[p]
        Ls[:, :] = 0.0
        LA[:, :] = 0.0
        LK[:, :] = 0.0
        for t in range(roff[kd], roff[kd + 1]):
            pu = rpts[t, 0]
            pv = rpts[t, 1]
            qu = rpts[t, 2]
            qv = rpts[t, 3]
            ua = maps[p, 0, 0, 0] * pu + maps[p, 0, 0, 1] * pv + maps[p, 0, 0, 2]
            wa = maps[p, 0, 1, 0] * pu + maps[p, 0, 1, 1] * pv + maps[p, 0, 1, 2]
            ub = maps[p, 1, 0, 0] * qu + maps[p, 1, 0, 1] * qv + maps[p, 1, 0, 2]
            wb = maps[p, 1, 1, 0] * qu + maps[p, 1, 1, 1] * qv + maps[p, 1, 1, 2]
            _geo_eval(geo[a], g, ua, wa, nE, xa, Ja, w0, w1, w2, w3, w4)
            _geo_eval(geo[b], g, ub, wb, nE, xb, Jb, w0, w1, w2, w3, w4)
            d0 = xa[0] - xb[0]
            d1 = xa[1] - xb[1]
            d2 = xa[2] - xb[2]
            d = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
            w = rwts[t] * area2
            G = inv4pi / d * w
            f = -G / (d * d)
            g0 = f * d0
            g1 = f * d1
            g2 = f * d2
            if s_nloc > 0:
                _basis_eval(s_kind, s_degs, s_ext, elems[a, 1], elems[a, 2], ua, wa, Ja, sa, va, w0, w2, w5)
                _basis_eval(s_kind, s_degs, s_ext, elems[b, 1], elems[b, 2], ub, wb, Jb, sb, vb, w0, w2, w5)
                for i in range(s_nloc):
                    for j in range(s_nloc):
                        Ls[i, j] += G * sa[i] * sb[j]
            if v_nloc > 0:
                _basis_eval(2, v_degs, v_ext, elems[a, 1], elems[a, 2], ua, wa, Ja, sa, va, w0, w2, w5)
                _basis_eval(2, v_degs, v_ext, elems[b, 1], elems[b, 2], ub, wb, Jb, sb, vb, w0, w2, w5)
                for i in range(v_nloc):
                    for j in range(v_nloc):
                        LA[i, j] += G * (va[i, 0] * vb[j, 0] + va[i, 1] * vb[j, 1] + va[i, 2] * vb[j, 2])
                        c0 = vb[j, 1] * va[i, 2] - vb[j, 2] * va[i, 1]
                        c1 = vb[j, 2] * va[i, 0] - vb[j, 0] * va[i, 2]
                        c2 = vb[j, 0] * va[i, 1] - vb[j, 1] * va[i, 0]
                        LK[i, j] += g0 * c0 + g1 * c1 + g2 * c2
        for i in range(s_nloc):
            gi = s_loc[a, i]
            for j in range(s_nloc):
                gj = s_loc[b, j]
                Vs[gi, gj] += Ls[i, j]
                if a != b:
                    Vs[gj, gi] += Ls[i, j]
        for i in range(v_nloc):
            gi = v_loc[a, i]
            for j in range(v_nloc):
                gj = v_loc[b, j]
                A[gi, gj] += LA[i, j]
                K[gi, gj] += LK[i, j]
                if a != b:
                    A[gj, gi] += LA[i, j]
                    K[gj, gi] += LK[i, j]


def eval_element_points(bmesh: BoundaryMesh, elem: np.ndarray, u: np.ndarray):
    """Points, Jacobians (patch parameters) at local coordinates of elements."""
    return _eval_points(np.ascontiguousarray(elem, dtype=np.int64), np.ascontiguousarray(u, dtype=float),
                        bmesh.geo, bmesh.geo_degree, float(bmesh.nE))


@nb.njit(cache=True, fastmath=True)
def _eval_points(elem, u, geo, g, nE):
    n = elem.shape[0]
    X = np.empty((n, 3))
    Js = np.empty((n, 3, 2))
    x = np.empty(3)
    J = np.empty((3, 2))
    W = np.empty((6, g + 2))
    w0 = W[0]
    w1 = W[1]
    w2 = W[2]
    w3 = W[3]
    w4 = W[4]
    for t in range(n):
        _geo_eval(geo[elem[t]], g, u[t, 0], u[t, 1], nE, x, J, w0, w1, w2, w3, w4)
        X[t] = x
        Js[t] = J
    return X, Js


# --------------------------------------------------------------------------
# pair assembly driver
# --------------------------------------------------------------------------


def _square_map_array(m) -> np.ndarray:
    out = np.zeros((2, 3))
    out[:, :2] = np.asarray(m.M, dtype=float)
    out[:, 2] = np.asarray(m.t, dtype=float)
    return out


@dataclass(frozen=True, eq=False)
class PairPlan:
    """Classification of all unordered element pairs (a <= b)."""

    singular_pairs: np.ndarray
    singular_kinds: np.ndarray
    singular_maps: np.ndarray
    far_pairs: dict  # order -> pairs


def plan_pairs(bmesh: BoundaryMesh, orders: QuadratureOrders) -> PairPlan:
    mesh = bmesh.mesh
    touching = bmesh.touching
    kinds, maps = [], []
    kind_code = {Adjacency.VERTEX: 0, Adjacency.EDGE: 1, Adjacency.IDENTICAL: 2}
    for a, b in touching:
        cls = classify_pair(mesh, int(a), int(b))
        kinds.append(kind_code[cls.kind])
        maps.append(np.stack([_square_map_array(cls.map_a), _square_map_array(cls.map_b)]))
    E = mesh.nelem
    c, r = bmesh.centers, bmesh.radii
    ia, ib = np.triu_indices(E)
    dist = np.linalg.norm(c[ia] - c[ib], axis=1)
    ratio = dist / (r[ia] + r[ib])
    touch_mask = np.zeros((E, E), dtype=bool)
    touch_mask[touching[:, 0], touching[:, 1]] = True
    keep = ~touch_mask[ia, ib]
    ia, ib, ratio = ia[keep], ib[keep], ratio[keep]
    order = regular_order(orders.regular, ratio)
    far = {}
    for n in np.unique(order):
        sel = order == n
        far[int(n)] = np.ascontiguousarray(np.stack([ia[sel], ib[sel]], axis=1))
    return PairPlan(touching.astype(np.int64), np.array(kinds, dtype=np.int64),
                    np.array(maps).reshape(-1, 2, 2, 3), far)


def assemble_pair_operators(bmesh: BoundaryMesh, scalar: SpaceTables | None, flux: SpaceTables | None,
                            orders: QuadratureOrders, include: str = "all"):
    """Broken (patch-local) dense matrices (Vs, A, K).

    ``include`` selects ``"all"``, ``"far"`` or ``"near"`` pairs (the latter
    two serve quadrature checks).
    """
    plan = plan_pairs(bmesh, orders)
    elems = bmesh.mesh.elements.astype(np.int64)
    g = bmesh.geo_degree
    nE = float(bmesh.nE)
    s_n = scalar.nloc if scalar else 0
    v_n = flux.nloc if flux else 0
    ns = scalar.space.npatches * scalar.space.patch_size if scalar else 1
    nv = flux.space.npatches * flux.space.patch_size if flux else 1
    Vs = np.zeros((ns, ns))
    A = np.zeros((nv, nv))
    K = np.zeros((nv, nv))
    dummy_degs = np.zeros((1, 2), dtype=np.int64)
    dummy_ext = np.zeros((1, 2, 1, 1, 1))
    dummy_loc = np.zeros((elems.shape[0], 1), dtype=np.int64)
    s_args = (scalar.kind, scalar.degs, scalar.ext) if scalar else (0, dummy_degs, dummy_ext)
    v_args = (flux.degs, flux.ext) if flux else (dummy_degs, dummy_ext)
    s_loc = scalar.local_dofs if scalar else dummy_loc
    v_loc = flux.local_dofs if flux else dummy_loc
    if include in ("all", "far"):
        for n, pairs in plan.far_pairs.items():
            rule = gauss_rule(n, 2)
            X, S, V = _element_tables(elems, bmesh.geo, g, nE, rule.points, rule.weights,
                                      s_args[0], s_args[1], s_args[2], s_n, v_args[0], v_args[1], v_n)
            _far_pairs(pairs, X, S, V, s_loc, v_loc, s_n, v_n, Vs, A, K)
    if include in ("all", "near") and plan.singular_pairs.size:
        rules = [canonical_pair_rule(k, orders.singular) for k in (Adjacency.VERTEX, Adjacency.EDGE, Adjacency.IDENTICAL)]
        rpts = np.concatenate([r.points for r in rules])
        rwts = np.concatenate([r.weights for r in rules])
        roff = np.concatenate([[0], np.cumsum([r.size for r in rules])]).astype(np.int64)
        _singular_pairs(plan.singular_pairs, plan.singular_kinds, plan.singular_maps, rpts, rwts, roff,
                        elems, bmesh.geo, g, nE, s_args[0], s_args[1], s_args[2], s_loc, s_n,
                        v_args[0], v_args[1], v_loc, v_n, Vs, A, K)
    return Vs, A, K


def _globalize_dense(space: DiscreteSpace, M: np.ndarray) -> np.ndarray:
    X = space.dofmap.extension
    return np.asarray((X.T @ sp.csr_matrix(M) @ X).todense()) if False else np.asarray(X.T @ (X.T @ M.T).T)


# --------------------------------------------------------------------------
# public assembly API
# --------------------------------------------------------------------------


def assemble_mass_pairing(flux: DiscreteSpace, tangential: DiscreteSpace) -> sp.csr_matrix:
    """Duality pairing <psi_i, xi_j> between flux and tangential surface spaces.

    Both push-forwards combine to the parametric product psi_hat . xi_hat.
    """
    if flux.kind != "piola" or tangential.kind != "covariant":
        raise ValueError("pairing needs the flux and tangential spaces")
    nq = flux.degree + 1
    quad = patch_quadrature(2, flux.n_elements, nq)
    ne, nqq = quad.elem.shape[0], quad.local.shape[0]
    w = quad.weights.reshape(ne, nqq)
    rows, cols, vals = [], [], []
    for c in range(2):
        ia, va = element_basis(flux, c, quad)
        ib, vb = element_basis(tangential, c, quad)
        loc = np.einsum("eqi,eq,eqj->eij", va, w, vb)
        for k in range(flux.npatches):
            rows.append((k * flux.patch_size + np.repeat(ia[:, :, None], ib.shape[1], axis=2)).ravel())
            cols.append((k * tangential.patch_size + np.repeat(ib[:, None, :], ia.shape[1], axis=1)).ravel())
            vals.append(loc.ravel())
    nb_f = flux.npatches * flux.patch_size
    nb_t = tangential.npatches * tangential.patch_size
    broken = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nb_f, nb_t))
    return sp.csr_matrix(flux.dofmap.extension.T @ broken @ tangential.dofmap.extension)


@dataclass(eq=False)
class BoundaryOperatorSet:
    """Dense boundary operators on one surface discretization.

    ``A`` and ``Kdl`` live on the full flux space; ``A0`` is ``S^T A S`` on
    the solenoidal coordinates; ``C0`` is the flux x tangential pairing of
    the double layer trace; ``M`` the flux x tangential duality pairing.
    """

    surface: SurfaceComplex
    solenoidal: SolenoidalBasis
    bmesh: BoundaryMesh
    orders: QuadratureOrders
    A: np.ndarray
    Kdl: np.ndarray
    M: sp.csr_matrix
    V0: np.ndarray | None = None
    V0_density: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @cached_property
    def C0(self) -> np.ndarray:
        return np.asarray(self.Kdl @ self.surface.rotate.matrix.toarray())

    @cached_property
    def C0_quotient(self) -> np.ndarray:
        """C0 composed with ``I - P``, ``P`` the L2 projector onto surface gradients.

        Surface gradients lie in the kernel of the solenoidal-tested double
        layer pairing; quadrature leaves a small defect there, which this
        removes exactly. Under exact integration both matrices coincide.
        """
        from scipy.sparse.linalg import splu

        from .derham import assemble_mass

        G = self.surface.grad.matrix.tocsc()[:, 1:]
        Mt = assemble_mass(self.surface.tangential)
        lap = splu(sp.csc_matrix(G.T @ Mt @ G))
        W = lap.solve(np.asarray((G.T @ Mt).toarray()))  # (ns - 1) x nt
        C0 = self.C0
        return C0 - np.asarray(G.T @ C0.T).T @ W

    @property
    def B0(self) -> np.ndarray:
        """Adjoint pairing, defined as the negative transpose of C0."""
        return -self.C0.T

    @cached_property
    def A0(self) -> np.ndarray:
        S = self.solenoidal.matrix
        return np.asarray(S.T @ (S.T @ self.A).T)

    @cached_property
    def N0(self) -> np.ndarray:
        if self.V0_density is None:
            raise ValueError("N0 needs the single layer on the surface density space")
        return assemble_N0(self.surface, self.V0_density)


def _make_tables(space, bmesh):
    return build_space_tables(space, bmesh.mesh)


def assemble_operators(surface: SurfaceComplex, level: int, orders: QuadratureOrders | None = None,
                       scalar: str | None = "density", bmesh: BoundaryMesh | None = None,
                       include: str = "all") -> BoundaryOperatorSet:
    """Assemble A, the double layer pairing and optionally a scalar single layer.

    ``scalar`` is ``"value"`` (V0 on S0(G)), ``"density"`` (V0 on S2(G), used
    for N0) or ``None``.
    """
    p = surface.flux.degree
    orders = orders or QuadratureOrders.default(p, level)
    bmesh = bmesh or BoundaryMesh(surface.flux.domain, level)
    flux_t = _make_tables(surface.flux, bmesh)
    sspace = {"value": surface.scalar, "density": surface.density, None: None}[scalar]
    s_t = _make_tables(sspace, bmesh) if sspace is not None else None
    Vs, A, K = assemble_pair_operators(bmesh, s_t, flux_t, orders, include)
    ops = BoundaryOperatorSet(
        surface=surface,
        solenoidal=build_solenoidal_basis(surface),
        bmesh=bmesh,
        orders=orders,
        A=_globalize_dense(surface.flux, A),
        Kdl=_globalize_dense(surface.flux, K),
        M=assemble_mass_pairing(surface.flux, surface.tangential),
    )
    if scalar == "value":
        ops.V0 = _globalize_dense(surface.scalar, Vs)
    elif scalar == "density":
        ops.V0_density = _globalize_dense(surface.density, Vs)
    return ops


def assemble_V0(scalar_space: DiscreteSpace, level: int | None = None, orders: QuadratureOrders | None = None,
                bmesh: BoundaryMesh | None = None) -> np.ndarray:
    """Scalar single layer on a value or density surface space."""
    level = scalar_space.level if level is None else level
    orders = orders or QuadratureOrders.default(scalar_space.degree, level)
    bmesh = bmesh or BoundaryMesh(scalar_space.domain, level)
    Vs, _, _ = assemble_pair_operators(bmesh, _make_tables(scalar_space, bmesh), None, orders)
    return _globalize_dense(scalar_space, Vs)


def assemble_A0(flux_space: DiscreteSpace, solenoidal: SolenoidalBasis, orders: QuadratureOrders | None = None,
                bmesh: BoundaryMesh | None = None) -> np.ndarray:
    """Vector single layer on the solenoidal coordinates."""
    orders = orders or QuadratureOrders.default(flux_space.degree, flux_space.level)
    bmesh = bmesh or BoundaryMesh(flux_space.domain, flux_space.level)
    _, A, _ = assemble_pair_operators(bmesh, None, _make_tables(flux_space, bmesh), orders)
    A = _globalize_dense(flux_space, A)
    S = solenoidal.matrix
    return np.asarray(S.T @ (S.T @ A).T)


def assemble_C0_pairing(surface: SurfaceComplex, orders: QuadratureOrders | None = None,
                        bmesh: BoundaryMesh | None = None) -> np.ndarray:
    """Matrix <psi_i, C0 xi_j> on flux x tangential coefficients."""
    flux = surface.flux
    orders = orders or QuadratureOrders.default(flux.degree, flux.level)
    bmesh = bmesh or BoundaryMesh(flux.domain, flux.level)
    _, _, K = assemble_pair_operators(bmesh, None, _make_tables(flux, bmesh), orders)
    K = _globalize_dense(flux, K)
    return np.asarray(K @ surface.rotate.matrix.toarray())


def assemble_N0(surface: SurfaceComplex, V0_density: np.ndarray) -> np.ndarray:
    """N0 = R^T V0 R with R the scalar surface curl (tangential -> density)."""
    R = surface.curl_scalar.matrix
    if V0_density.shape != (R.shape[0], R.shape[0]):
        raise ValueError("V0 must live on the surface density space")
    return np.asarray(R.T @ (R.T @ V0_density).T)


# --------------------------------------------------------------------------
# potentials
# --------------------------------------------------------------------------

# (ratio lower bound, extra Gauss points); ratio = distance to the element
# centre over the bounding radius
POTENTIAL_BANDS: tuple[tuple[float, int], ...] = ((6.0, 0), (3.0, 4), (2.0, 8), (1.4, 12), (0.0, 20))


@dataclass(frozen=True, eq=False)
class Density:
    """Coefficient vector with the surface space it belongs to."""

    coeffs: np.ndarray
    space: DiscreteSpace

    def __post_init__(self) -> None:
        if np.asarray(self.coeffs).shape != (self.space.dim,):
            raise ValueError(f"density of length {np.shape(self.coeffs)} for a space of dimension {self.space.dim}")


@nb.njit(cache=True, fastmath=True)
def _potential_sum(points, mask, X, F, Gf, Sf, out_sl, out_dl, out_gs, out_s):
    inv4pi = 1.0 / (4.0 * np.pi)
    E = X.shape[0]
    m = X.shape[1]
    for t in range(points.shape[0]):
        for e in range(E):
            if not mask[t, e]:
                continue
            for q in range(m):
                d0 = points[t, 0] - X[e, q, 0]
                d1 = points[t, 1] - X[e, q, 1]
                d2 = points[t, 2] - X[e, q, 2]
                d = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                G = inv4pi / d
                f = -G / (d * d)
                g0 = f * d0
                g1 = f * d1
                g2 = f * d2
                for k in range(3):
                    out_sl[t, k] += G * F[e, q, k]
                # grad G x (flux field of xi x n)
                out_dl[t, 0] += g1 * Gf[e, q, 2] - g2 * Gf[e, q, 1]
                out_dl[t, 1] += g2 * Gf[e, q, 0] - g0 * Gf[e, q, 2]
                out_dl[t, 2] += g0 * Gf[e, q, 1] - g1 * Gf[e, q, 0]
                out_gs[t, 0] += g0 * Sf[e, q]
                out_gs[t, 1] += g1 * Sf[e, q]
                out_gs[t, 2] += g2 * Sf[e, q]
                out_s[t] += G * Sf[e, q]


def _element_field(bmesh, tables: SpaceTables, coeffs, rule, vector: bool):
    elems = bmesh.mesh.elements.astype(np.int64)
    if vector:
        X, _, V = _element_tables(elems, bmesh.geo, bmesh.geo_degree, float(bmesh.nE), rule.points, rule.weights,
                                  0, np.zeros((1, 2), dtype=np.int64), np.zeros((1, 2, 1, 1, 1)), 0,
                                  tables.degs, tables.ext, tables.nloc)
        c = coeffs[tables.local_dofs]  # (E, nloc)
        return X, np.einsum("eqak,ea->eqk", V, c)
    X, S, _ = _element_tables(elems, bmesh.geo, bmesh.geo_degree, float(bmesh.nE), rule.points, rule.weights,
                              tables.kind, tables.degs, tables.ext, tables.nloc,
                              np.zeros((1, 2), dtype=np.int64), np.zeros((1, 2, 1, 1, 1)), 0)
    c = coeffs[tables.local_dofs]
    return X, np.einsum("eqa,ea->eq", S, c)


def distance_to_surface(bmesh: BoundaryMesh, points: np.ndarray, iters: int = 20) -> np.ndarray:
    """Distance from points to the surface by projection onto nearby elements."""
    points = np.atleast_2d(points)
    s = (np.arange(5) + 0.5) / 5
    su, sv = np.meshgrid(s, s, indexing="ij")
    loc = np.stack([su.ravel(), sv.ravel()], 1)
    E = bmesh.mesh.nelem
    X, _ = eval_element_points(bmesh, np.repeat(np.arange(E), loc.shape[0]), np.tile(loc, (E, 1)))
    out = np.empty(points.shape[0])
    for t, x in enumerate(points):
        d = np.linalg.norm(X - x, axis=1)
        best = np.inf
        cand = np.unique(np.argsort(d)[:12] // loc.shape[0])
        for e in cand:
            u = np.array([0.5, 0.5])
            for _ in range(iters):
                y, J = eval_element_points(bmesh, np.array([e]), u[None, :])
                r = y[0] - x
                Jl = J[0] / bmesh.nE
                step = np.linalg.lstsq(Jl, -r, rcond=None)[0]
                u = np.clip(u + step, 0.0, 1.0)
            y, _ = eval_element_points(bmesh, np.array([e]), u[None, :])
            best = min(best, float(np.linalg.norm(y[0] - x)))
        out[t] = best
    return out


def solid_angle_indicator(bmesh: BoundaryMesh, points: np.ndarray, order: int = 8) -> np.ndarray:
    """Gauss double layer of the constant 1: about 1 inside the surface, 0 outside."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rule = gauss_rule(order, 2)
    E = bmesh.mesh.nelem
    elem = np.repeat(np.arange(E), rule.size)
    X, J = eval_element_points(bmesh, elem, np.tile(rule.points, (E, 1)))
    nda = np.cross(J[:, :, 0], J[:, :, 1]) * (np.tile(rule.weights, E) / bmesh.nE ** 2)[:, None]
    out = np.empty(points.shape[0])
    for t, x in enumerate(points):
        r = X - x
        d = np.linalg.norm(r, axis=1)
        out[t] = np.sum(np.einsum("ij,ij->i", r, nda) / d ** 3) / FOUR_PI
    return out


def layer_potentials(bmesh: BoundaryMesh, points: np.ndarray, neumann: Density | None = None,
                     dirichlet: Density | None = None, normal: Density | None = None,
                     scalar: Density | None = None, base_order: int | None = None, surface: SurfaceComplex | None = None):
    """Evaluate SL(neumann), DL(dirichlet), grad SL(normal) and the scalar SL(scalar).

    ``neumann`` is a flux density, ``dirichlet`` a tangential density (its
    rotation xi x n enters the double layer), ``normal`` and ``scalar`` are
    scalar densities (value or density kind).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    N = points.shape[0]
    some = next(d for d in (neumann, dirichlet, normal, scalar) if d is not None) if any(
        d is not None for d in (neumann, dirichlet, normal, scalar)) else None
    out = [np.zeros((N, 3)), np.zeros((N, 3)), np.zeros((N, 3)), np.zeros(N)]
    if some is None:
        return tuple(out)
    p = some.space.degree
    base = base_order or p + 4
    E = bmesh.mesh.nelem
    ratio = np.linalg.norm(points[:, None, :] - bmesh.centers[None], axis=2) / bmesh.radii[None]
    extra = np.full(ratio.shape, POTENTIAL_BANDS[-1][1], dtype=np.int64)
    for bound, add in reversed(POTENTIAL_BANDS[:-1]):
        extra = np.where(ratio >= bound, add, extra)
    flux_tab = None
    fields_cache = {}
    for n in np.unique(extra):
        rule = gauss_rule(int(base + n), 2)
        mask = np.ascontiguousarray(extra == n)
        m = rule.size
        F = np.zeros((E, m, 3))
        Gf = np.zeros((E, m, 3))
        Sf = np.zeros((E, m))
        X = None
        if neumann is not None:
            flux_tab = flux_tab or build_space_tables(neumann.space, bmesh.mesh)
            X, F = _element_field(bmesh, flux_tab, neumann.space.to_broken(neumann.coeffs), rule, True)
        if dirichlet is not None:
            if surface is None:
                raise ValueError("the double layer needs the surface complex for the rotation")
            rot = surface.rotate.matrix @ dirichlet.coeffs
            key = "flux"
            tab = fields_cache.get(key) or build_space_tables(surface.flux, bmesh.mesh)
            fields_cache[key] = tab
            X, Gf = _element_field(bmesh, tab, surface.flux.to_broken(rot), rule, True)
        for dens in (normal, scalar):
            if dens is not None:
                tab = build_space_tables(dens.space, bmesh.mesh)
                X, S1 = _element_field(bmesh, tab, dens.space.to_broken(dens.coeffs), rule, False)
                tmp = [np.zeros((N, 3)), np.zeros((N, 3)), np.zeros((N, 3)), np.zeros(N)]
                _potential_sum(points, mask, X, np.zeros((E, m, 3)), np.zeros((E, m, 3)), S1, *tmp)
                if dens is normal:
                    out[2] += tmp[2]
                else:
                    out[3] += tmp[3]
        if neumann is not None or dirichlet is not None:
            tmp = [np.zeros((N, 3)), np.zeros((N, 3)), np.zeros((N, 3)), np.zeros(N)]
            _potential_sum(points, mask, X, F, Gf, np.zeros((E, m)), *tmp)
            out[0] += tmp[0]
            out[1] += tmp[1]
    return tuple(out)


def eval_representation(points: np.ndarray, dirichlet: Density, neumann: Density, side: str,
                        surface: SurfaceComplex, bmesh: BoundaryMesh, normal: Density | None = None,
                        check_distance: bool = True) -> np.ndarray:
    """(-1)^alpha (SL(neumann) + DL(dirichlet) + grad SL(normal)) at points.

    ``side`` is ``"interior"`` (alpha = 0) or ``"exterior"`` (alpha = 1).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if side not in ("interior", "exterior"):
        raise ValueError("side must be 'interior' or 'exterior'")
    if check_distance:
        dist = distance_to_surface(bmesh, points)
        if np.any(dist < ON_SURFACE_TOL * max(1.0, bmesh.boundary.scale)):
            raise GeometryError("evaluation point lies on the boundary")
    sl, dl, gs, _ = layer_potentials(bmesh, points, neumann=neumann, dirichlet=dirichlet, normal=normal,
                                     surface=surface)
    sign = 1.0 if side == "interior" else -1.0
    return sign * (sl + dl + gs)


def single_layer_potential(points: np.ndarray, density: Density, bmesh: BoundaryMesh) -> np.ndarray:
    """Scalar single layer potential of a value or density surface field."""
    return layer_potentials(bmesh, points, scalar=density)[3]


# --------------------------------------------------------------------------
# Calderon diagnostics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CalderonDiagnostics:
    """Discrete ellipticity constants and the contraction estimate.

    ``C_A0`` and ``C_N0`` are measured against the surrogate norms
    ``||psi||^2 = psi^T X psi`` on solenoidal fluxes, with ``X`` the L2 mass
    scaled so that ``A0 <= X`` with equality on one mode, and its dual
    ``||xi||^2 = (S^T M xi)^T X^{-1} (S^T M xi)`` on the tangential quotient.
    ``matched_product`` is ``C_A0 * C_N0`` for the choice ``X = A0``; it tends
    to 2/9 on the sphere. ``pairing_kernel`` counts complement modes that no
    solenoidal flux detects; they are excluded from the quotient.
    """

    C_A0: float
    C_N0: float
    C_C0: float | None
    measured_ratio: float
    sampled_ratio: float
    monotonicity_ok: bool | None = None
    pairing_kernel: int = 0
    matched_product: float | None = None

    @property
    def defined(self) -> bool:
        return self.C_C0 is not None


def contraction_constant(C_A0: float, C_N0: float) -> float | None:
    rad = 0.25 - C_A0 * C_N0
    if rad < 0.0:
        return None
    return 0.5 + float(np.sqrt(rad))


def gradient_free_complement(surface: SurfaceComplex) -> np.ndarray:
    """Orthonormal basis of the Euclidean complement of range(grad_G)."""
    Gm = surface.grad.matrix.toarray()
    q, r = np.linalg.qr(Gm, mode="complete")
    rank = int(np.sum(np.abs(np.diag(r)) > 1e-10 * np.abs(r).max()))
    return q[:, rank:]


def steklov_contraction_estimate(ops: BoundaryOperatorSet, C_M: float | None = None, samples: int = 64,
                                 seed: int = 0) -> CalderonDiagnostics:
    """Ellipticity constants, the closed-form C_C0 and the measured contraction.

    The measured ratio is the maximum of
    ``||S^T (M/2 - C0) xi||_{A0^-1} / ||S^T M xi||_{A0^-1}`` over the
    gradient-free complement, computed exactly from a generalized eigenvalue
    problem; ``sampled_ratio`` is the same quotient maximized over random xi.
    """
    S = ops.solenoidal.matrix
    A0 = ops.A0
    Z = gradient_free_complement(ops.surface)
    Mt = np.asarray(S.T @ ops.M.toarray()) @ Z
    # the solenoidal pairing can miss a few complement modes at low order;
    # the surrogate is a norm only on the orthogonal complement of that kernel
    _, sv, vt = np.linalg.svd(Mt, full_matrices=False)
    rank = int(np.sum(sv > 1e-10 * sv[0]))
    kernel = Z.shape[1] - rank
    Z = Z @ vt[:rank].T
    Mt = Mt @ vt[:rank].T
    Ct = np.asarray(S.T @ (0.5 * ops.M.toarray() - ops.C0)) @ Z
    L = sla.cho_factor(A0)
    QM = Mt.T @ sla.cho_solve(L, Mt)
    QC = Ct.T @ sla.cho_solve(L, Ct)
    QM = 0.5 * (QM + QM.T)
    QC = 0.5 * (QC + QC.T)
    N0 = Z.T @ ops.N0 @ Z
    N0 = 0.5 * (N0 + N0.T)
    matched = float(sla.eigh(N0, QM, eigvals_only=True)[0])
    # flux surrogate: solenoidal L2 mass scaled so that A0 <= X
    Sd = S.toarray() if sp.issparse(S) else np.asarray(S)
    X = Sd.T @ assemble_mass(ops.surface.flux).toarray() @ Sd
    lam = sla.eigh(A0, X, eigvals_only=True)
    X *= lam[-1]
    C_A0 = float(lam[0] / lam[-1])
    QX = Mt.T @ np.linalg.solve(X, Mt)
    C_N0 = float(sla.eigh(N0, 0.5 * (QX + QX.T), eigvals_only=True)[0])
    ratio = float(np.sqrt(max(sla.eigh(QC, QM, eigvals_only=True)[-1], 0.0)))
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((Z.shape[1], samples))
    num = np.einsum("is,ij,js->s", xs, QC, xs)
    den = np.einsum("is,ij,js->s", xs, QM, xs)
    sampled = float(np.sqrt(np.max(num / den)))
    cc = contraction_constant(C_A0, C_N0)
    mono = None if (C_M is None or cc is None) else bool(C_M > 0.25 * cc)
    return CalderonDiagnostics(C_A0, C_N0, cc, ratio, sampled, mono, pairing_kernel=kernel,
                               matched_product=matched)


# --------------------------------------------------------------------------
# dumping
# --------------------------------------------------------------------------


def write_matrix(path: str | os.PathLike, M) -> None:
    """Text matrix: header ``rows cols`` then one row per line (row-major)."""
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    M = np.atleast_2d(M)
    with open(path, "w") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        np.savetxt(fh, M, fmt="%.17g")


def read_matrix(path: str | os.PathLike) -> np.ndarray:
    with open(path) as fh:
        r, c = (int(t) for t in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2) if r * c else np.zeros((r, c))
    return data.reshape(r, c)


def dump_operators(ops: BoundaryOperatorSet, directory: str | os.PathLike) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    mats = {"A0": ops.A0, "A_flux": ops.A, "C0": ops.C0, "M": ops.M, "S": ops.solenoidal.matrix}
    if ops.V0 is not None:
        mats["V0"] = ops.V0
    if ops.V0_density is not None:
        mats["V0_density"] = ops.V0_density
        mats["N0"] = ops.N0
    for name, M in mats.items():
        path = d / f"{name}.txt"
        write_matrix(path, M)
        out.append(path)
    return out
