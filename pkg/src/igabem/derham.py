"""Multipatch B-spline de Rham complexes on volumes and closed surfaces.

Every space is a tensor-product construction on the parametric cube of each
patch. Components of degree ``p - 1`` in some direction use the scaled
B-splines ``d_j = p / (t_{j+p+1} - t_{j+1}) * B_{j+1, p-1}``, so that
differentiation acts on coefficients through integer difference matrices.

Push-forwards (value, covariant, Piola, density) realize the volume spaces
S0..S3 and the surface spaces S0(G), tangential S1, flux S1 and S2(G).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp

from .geometry import (
    BoundaryPatchRef,
    GeometryError,
    KnotVector,
    MultipatchDomain,
    basis_table,
    eval_patch,
)

Kind = Literal["value", "covariant", "piola", "density"]
VOLUME_KINDS: tuple[Kind, ...] = ("value", "covariant", "piola", "density")
SURFACE_KINDS: tuple[Kind, ...] = ("value", "covariant", "piola", "density")


class SpaceError(ValueError):
    """Raised for inconsistent spaces or dimension mismatches."""


# --------------------------------------------------------------------------
# 1D building blocks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Space1D:
    """Uniform open spline space of degree ``p`` on [0, 1], optionally reduced.

    A reduced space has degree ``p - 1`` and uses the scaled basis ``d_j``.
    """

    degree: int
    n_elements: int
    reduced: bool

    @cached_property
    def knots(self) -> KnotVector:
        kv = KnotVector.uniform(self.degree, self.n_elements)
        return kv.reduced() if self.reduced else kv

    @property
    def size(self) -> int:
        return self.knots.num_basis

    @property
    def nactive(self) -> int:
        return self.knots.degree + 1

    @cached_property
    def scaling(self) -> np.ndarray:
        if not self.reduced:
            return np.ones(self.size)
        t = self.knots.knots
        q = self.knots.degree
        return (q + 1) / (t[q + 1: q + 1 + self.size] - t[: self.size])

    def eval(self, x: np.ndarray, nder: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """``(first, table)`` with ``table`` of shape (n, nder+1, nactive)."""
        first, table = basis_table(self.knots, x, nder)
        idx = first[:, None] + np.arange(self.nactive)
        return first, table * self.scaling[idx][:, None, :]

    def element_eval(self, elem: np.ndarray, xi: np.ndarray, nder: int = 0):
        """Evaluate inside given elements at local coordinates ``xi`` in [0, 1].

        ``elem`` and ``xi`` broadcast to a common shape; returns ``first`` of
        that shape and ``table`` with trailing axes (nder+1, nactive).
        """
        elem, xi = np.broadcast_arrays(np.asarray(elem), np.asarray(xi, dtype=float))
        shape = elem.shape
        h = 1.0 / self.n_elements
        x = np.clip((elem.ravel() + xi.ravel()) * h, 0.0, 1.0)
        t = self.knots.knots
        q = self.knots.degree
        span = elem.ravel() + q
        from .geometry import _basis_derivative_table

        table = _basis_derivative_table(self.knots, span, x, min(nder, q))
        if table.shape[1] < nder + 1:
            table = np.concatenate([table, np.zeros((x.size, nder + 1 - table.shape[1], q + 1))], axis=1)
        first = span - q
        idx = first[:, None] + np.arange(self.nactive)
        table = table * self.scaling[idx][:, None, :]
        del t
        return first.reshape(shape), table.reshape(shape + table.shape[1:])


def difference_matrix(n: int) -> sp.csr_matrix:
    """(n-1) x n matrix with rows (-1, +1): coefficients of the derivative."""
    if n < 2:
        return sp.csr_matrix((0, n))
    rows = np.repeat(np.arange(n - 1), 2)
    cols = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1).ravel()
    vals = np.tile([-1.0, 1.0], n - 1)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n - 1, n))


def reduced_flags(kind: Kind, d: int) -> list[tuple[bool, ...]]:
    """Per component, which axes carry the reduced degree."""
    if kind == "value":
        return [(False,) * d]
    if kind == "density":
        return [(True,) * d]
    if kind == "covariant":
        return [tuple(a == c for a in range(d)) for c in range(d)]
    if kind == "piola":
        return [tuple(a != c for a in range(d)) for c in range(d)]
    raise SpaceError(f"unknown kind {kind}")


# --------------------------------------------------------------------------
# global DOF maps
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GlobalDofMap:
    """Patch-local ("broken") DOF -> (global index, sign)."""

    index: np.ndarray
    sign: np.ndarray
    dim: int

    @cached_property
    def extension(self) -> sp.csr_matrix:
        """Broken x global matrix: broken coefficients = X @ global coefficients."""
        n = self.index.size
        return sp.csr_matrix((self.sign.astype(float), (np.arange(n), self.index)), shape=(n, self.dim))

    @cached_property
    def representative(self) -> np.ndarray:
        """Smallest broken DOF of every global DOF."""
        rep = np.full(self.dim, -1, dtype=np.int64)
        order = np.arange(self.index.size)[::-1]
        rep[self.index[order]] = order
        return rep

    @cached_property
    def restriction(self) -> sp.csr_matrix:
        """Global x broken matrix picking one representative per global DOF."""
        rep = self.representative
        return sp.csr_matrix((self.sign[rep].astype(float), (np.arange(self.dim), rep)),
                             shape=(self.dim, self.index.size))


class _SignedUnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n)
        self.parity = np.ones(n, dtype=np.int8)

    def find(self, a: int) -> tuple[int, int]:
        s = 1
        path = []
        while self.parent[a] != a:
            path.append(a)
            s *= int(self.parity[a])
            a = int(self.parent[a])
        root = a
        # path compression
        acc = s
        for node in path:
            ps = int(self.parity[node])
            self.parent[node] = root
            self.parity[node] = acc
            acc *= ps
        return root, s

    def union(self, a: int, b: int, s: int) -> None:
        """Record x_a = s * x_b."""
        ra, sa = self.find(a)
        rb, sb = self.find(b)
        if ra == rb:
            if sa * sb != s:
                raise SpaceError("inconsistent interface signs")
            return
        if ra < rb:
            ra, rb, sa, sb = rb, ra, sb, sa
        # attach ra below rb: x_ra = sa x_a = sa s x_b = sa s sb x_rb
        self.parent[ra] = rb
        self.parity[ra] = sa * s * sb


# --------------------------------------------------------------------------
# discrete spaces
# --------------------------------------------------------------------------


class DiscreteSpace:
    """One space of the complex on a multipatch domain.

    Attributes
    ----------
    kind : {"value", "covariant", "piola", "density"}
        Push-forward type (0-form, curl-conforming, div-conforming, top form).
    degree, level : int
        Spline degree ``p`` and dyadic level; every patch gets ``2**level``
        elements per direction.
    """

    def __init__(self, domain: MultipatchDomain, kind: Kind, degree: int, level: int):
        if degree < 1:
            raise SpaceError("degree must be at least 1")
        self.domain = domain
        self.kind = kind
        self.degree = degree
        self.level = level
        self.d = domain.dim
        self.n_elements = 2 ** level
        self.flags = reduced_flags(kind, self.d)
        self.ncomp = len(self.flags)
        self.axes = [tuple(Space1D(degree, self.n_elements, f) for f in flags) for flags in self.flags]
        self.comp_shapes = [tuple(s.size for s in ax) for ax in self.axes]
        self.comp_sizes = [int(np.prod(s)) for s in self.comp_shapes]
        self.comp_offsets = np.concatenate([[0], np.cumsum(self.comp_sizes)]).astype(np.int64)
        self.patch_size = int(self.comp_offsets[-1])
        self.npatches = len(domain.patches)
        self.dofmap = self._build_dofmap()
        self.dim = self.dofmap.dim

    # -- numbering ---------------------------------------------------------

    def local_index(self, comp: int, multi: np.ndarray) -> np.ndarray:
        """Patch-local index of component ``comp`` at multi-indices (n, d)."""
        multi = np.atleast_2d(multi)
        return self.comp_offsets[comp] + np.ravel_multi_index(tuple(multi.T), self.comp_shapes[comp])

    def broken_index(self, patch: int, comp: int, multi: np.ndarray) -> np.ndarray:
        return patch * self.patch_size + self.local_index(comp, multi)

    def trace_components(self, normal_axis: int) -> list[int]:
        """Components that carry a trace on a face normal to ``normal_axis``."""
        if self.kind == "value":
            return [0]
        if self.kind == "covariant":
            return [c for c in range(self.d) if c != normal_axis]
        if self.kind == "piola":
            return [normal_axis]
        return []

    def face_multi(self, comp: int, face: tuple[int, int]) -> np.ndarray:
        a, s = face
        shape = self.comp_shapes[comp]
        ranges = [range(n) if j != a else [0 if s == 0 else n - 1] for j, n in enumerate(shape)]
        return np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, self.d)

    def _build_dofmap(self) -> GlobalDofMap:
        nbroken = self.npatches * self.patch_size
        uf = _SignedUnionFind(nbroken)
        for it in self.domain.interfaces:
            o = it.orientation
            if o.det != 1:
                raise GeometryError(f"patches {it.patch_a} and {it.patch_b} are not consistently oriented")
            na = it.face_a[0]
            nb, sb = it.face_b
            for ca in self.trace_components(na):
                if self.kind == "value":
                    cb, sign = 0, 1
                else:
                    cb = o.perm[ca]
                    sign = -1 if o.flip[ca] else 1
                ma = self.face_multi(ca, it.face_a)
                shape_a, shape_b = self.comp_shapes[ca], self.comp_shapes[cb]
                mb = np.zeros_like(ma)
                for j in range(self.d):
                    bj = o.perm[j]
                    if j == na:
                        mb[:, bj] = 0 if sb == 0 else shape_b[nb] - 1
                        continue
                    if shape_a[j] != shape_b[bj]:
                        raise SpaceError(f"inconsistent interface degrees between patches {it.patch_a} and {it.patch_b}")
                    mb[:, bj] = shape_a[j] - 1 - ma[:, j] if o.flip[j] else ma[:, j]
                ia = self.broken_index(it.patch_a, ca, ma)
                ib = self.broken_index(it.patch_b, cb, mb)
                for x, y in zip(ia, ib):
                    uf.union(int(x), int(y), sign)
        roots = np.empty(nbroken, dtype=np.int64)
        signs = np.empty(nbroken, dtype=np.int8)
        for i in range(nbroken):
            roots[i], signs[i] = uf.find(i)
        _, first_pos, inverse = np.unique(roots, return_index=True, return_inverse=True)
        # global numbering by first appearance in broken order
        order = np.argsort(first_pos, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        index = rank[inverse]
        # make the representative's sign +1
        rep_sign = signs[first_pos][inverse]
        sign = (signs * rep_sign).astype(np.int8)
        return GlobalDofMap(index.astype(np.int64), sign, int(order.size))

    # -- broken/global conversions ----------------------------------------

    def to_broken(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs)
        if coeffs.shape[0] != self.dim:
            raise SpaceError(f"coefficient length {coeffs.shape[0]} does not match dimension {self.dim}")
        s = self.dofmap.sign.reshape((-1,) + (1,) * (coeffs.ndim - 1))
        return coeffs[self.dofmap.index] * s

    def patch_coeffs(self, coeffs: np.ndarray, patch: int) -> list[np.ndarray]:
        b = self.to_broken(coeffs)[patch * self.patch_size: (patch + 1) * self.patch_size]
        return [b[self.comp_offsets[c]: self.comp_offsets[c + 1]].reshape(self.comp_shapes[c]) for c in range(self.ncomp)]

    # -- evaluation ----------------------------------------------------------

    def eval_proxy(self, coeffs: np.ndarray, patch: int, x: np.ndarray, nder: int = 0) -> np.ndarray:
        """Parametric (pulled-back) field at points x (n, d).

        Returns shape (n, ncomp), or (n, ncomp, d) of parametric partial
        derivatives when ``nder == 1``.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        carr = self.patch_coeffs(coeffs, patch)
        out = np.zeros((n, self.ncomp) + ((self.d,) if nder else ()))
        for c in range(self.ncomp):
            tabs = [ax.eval(x[:, a], nder) for a, ax in enumerate(self.axes[c])]
            for offs in itertools.product(*[range(ax.nactive) for ax in self.axes[c]]):
                idx = tuple(tabs[a][0] + offs[a] for a in range(self.d))
                cv = carr[c][idx]
                if nder == 0:
                    prod = np.ones(n)
                    for a in range(self.d):
                        prod = prod * tabs[a][1][:, 0, offs[a]]
                    out[:, c] += cv * prod
                else:
                    for k in range(self.d):
                        prod = np.ones(n)
                        for a in range(self.d):
                            prod = prod * tabs[a][1][:, 1 if a == k else 0, offs[a]]
                        out[:, c, k] += cv * prod
        return out

    def evaluate(self, coeffs: np.ndarray, patch: int, x: np.ndarray) -> np.ndarray:
        """Physical field at parametric points of a patch (push-forward applied).

        Scalars come back with shape (n,), vector fields with shape (n, 3).
        """
        proxy = self.eval_proxy(coeffs, patch, x)
        geo = eval_patch(self.domain.patches[patch], np.atleast_2d(x))
        return push_forward(self.kind, proxy, geo.jacobian, geo.measure)


def push_forward(kind: Kind, proxy: np.ndarray, jac: np.ndarray, measure: np.ndarray) -> np.ndarray:
    """Map parametric proxies (n, ncomp) to physical values."""
    if kind == "value":
        return proxy[:, 0]
    if kind == "density":
        return proxy[:, 0] / measure
    if kind == "piola":
        return np.einsum("nij,nj->ni", jac, proxy) / measure[:, None]
    # covariant: J (J^T J)^{-1} proxy
    g = np.einsum("nki,nkj->nij", jac, jac)
    return np.einsum("nij,nj->ni", jac, np.linalg.solve(g, proxy[..., None])[..., 0])


def pushforward_matrix(kind: Kind, jac: np.ndarray, measure: np.ndarray) -> np.ndarray:
    """Matrix P (n, 3, d) with physical = P @ proxy for vector kinds."""
    if kind == "piola":
        return jac / measure[:, None, None]
    if kind == "covariant":
        g = np.einsum("nki,nkj->nij", jac, jac)
        return np.einsum("nij,njk->nik", jac, np.linalg.inv(g))
    raise SpaceError("pushforward matrix is defined for vector kinds")


# --------------------------------------------------------------------------
# incidences
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DifferentialIncidence:
    """Signed integer coefficient map between two spaces of a complex."""

    name: str
    source: DiscreteSpace
    target: DiscreteSpace
    matrix: sp.csr_matrix


def _kron_axes(mats: list[sp.spmatrix]) -> sp.csr_matrix:
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return sp.csr_matrix(out)


def _identity_or_diff(src_shape, axis_diff: int | None) -> list[sp.spmatrix]:
    mats = []
    for a, n in enumerate(src_shape):
        mats.append(difference_matrix(n) if a == axis_diff else sp.identity(n, format="csr"))
    return mats


def _patch_incidence(src: DiscreteSpace, tgt: DiscreteSpace, blocks: dict) -> sp.csr_matrix:
    """Assemble a patch-level incidence from {(tgt_comp, src_comp): (sign, axis)}."""
    rows = []
    for ct in range(tgt.ncomp):
        row = []
        for cs in range(src.ncomp):
            if (ct, cs) in blocks:
                sign, axis = blocks[(ct, cs)]
                if axis is None:
                    m = sp.identity(src.comp_sizes[cs], format="csr")
                else:
                    m = _kron_axes(_identity_or_diff(src.comp_shapes[cs], axis))
                if m.shape != (tgt.comp_sizes[ct], src.comp_sizes[cs]):
                    raise SpaceError("incidence block shape mismatch")
                row.append(sign * m)
            else:
                row.append(None)
        rows.append(row)
    for ct in range(tgt.ncomp):
        for cs in range(src.ncomp):
            if rows[ct][cs] is None:
                rows[ct][cs] = sp.csr_matrix((tgt.comp_sizes[ct], src.comp_sizes[cs]))
    return sp.csr_matrix(sp.bmat(rows))


def _globalize(src: DiscreteSpace, tgt: DiscreteSpace, local: sp.csr_matrix) -> sp.csr_matrix:
    broken = sp.block_diag([local] * src.npatches, format="csr")
    g = tgt.dofmap.restriction @ broken @ src.dofmap.extension
    g = sp.csr_matrix(g)
    g.data = np.round(g.data)
    g.eliminate_zeros()
    return g


def make_incidence(name: str, src: DiscreteSpace, tgt: DiscreteSpace) -> DifferentialIncidence:
    d = src.d
    if name == "grad":
        blocks = {(c, 0): (1.0, c) for c in range(d)}
    elif name == "curl" and d == 3:
        blocks = {}
        for c in range(3):
            c1, c2 = (c + 1) % 3, (c + 2) % 3
            blocks[(c, c2)] = (1.0, c1)
            blocks[(c, c1)] = (-1.0, c2)
    elif name == "div":
        blocks = {(0, c): (1.0, c) for c in range(d)}
    elif name == "curl_vec" and d == 2:  # scalar -> flux
        blocks = {(0, 0): (1.0, 1), (1, 0): (-1.0, 0)}
    elif name == "curl_scalar" and d == 2:  # tangential -> density
        blocks = {(0, 1): (1.0, 0), (0, 0): (-1.0, 1)}
    elif name == "rotate" and d == 2:  # tangential -> flux, v x n
        blocks = {(0, 1): (1.0, None), (1, 0): (-1.0, None)}
    else:
        raise SpaceError(f"unknown incidence {name} in dimension {d}")
    local = _patch_incidence(src, tgt, blocks)
    return DifferentialIncidence(name, src, tgt, _globalize(src, tgt, local))


def apply_differential(incidence: DifferentialIncidence, coeffs: np.ndarray) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != incidence.source.dim:
        raise SpaceError(
            f"{incidence.name}: coefficient length {coeffs.shape[0]} != source dimension {incidence.source.dim}"
        )
    return incidence.matrix @ coeffs


# --------------------------------------------------------------------------
# complexes
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VolumeComplex:
    spaces: tuple[DiscreteSpace, DiscreteSpace, DiscreteSpace, DiscreteSpace]
    grad: DifferentialIncidence
    curl: DifferentialIncidence
    div: DifferentialIncidence

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.spaces)


@dataclass(frozen=True, eq=False)
class SurfaceComplex:
    scalar: DiscreteSpace
    tangential: DiscreteSpace
    flux: DiscreteSpace
    density: DiscreteSpace
    grad: DifferentialIncidence  # scalar -> tangential
    curl_vec: DifferentialIncidence  # scalar -> flux
    div: DifferentialIncidence  # flux -> density
    curl_scalar: DifferentialIncidence  # tangential -> density
    rotate: DifferentialIncidence  # tangential -> flux (v x n)


def build_volume_complex(domain: MultipatchDomain, p: int, level: int) -> VolumeComplex:
    if domain.dim != 3:
        raise SpaceError("volume complex needs a 3D domain")
    spaces = tuple(DiscreteSpace(domain, k, p, level) for k in VOLUME_KINDS)
    return VolumeComplex(
        spaces,
        make_incidence("grad", spaces[0], spaces[1]),
        make_incidence("curl", spaces[1], spaces[2]),
        make_incidence("div", spaces[2], spaces[3]),
    )


def build_surface_complex(boundary: MultipatchDomain, p: int, level: int) -> SurfaceComplex:
    if boundary.dim != 2:
        raise SpaceError("surface complex needs a 2D domain")
    s0, s1, s1f, s2 = (DiscreteSpace(boundary, k, p, level) for k in SURFACE_KINDS)
    return SurfaceComplex(
        s0, s1, s1f, s2,
        grad=make_incidence("grad", s0, s1),
        curl_vec=make_incidence("curl_vec", s0, s1f),
        div=make_incidence("div", s1f, s2),
        curl_scalar=make_incidence("curl_scalar", s1, s2),
        rotate=make_incidence("rotate", s1, s1f),
    )


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------


def trace_map(volume_space: DiscreteSpace, surface_space: DiscreteSpace,
              refs: tuple[BoundaryPatchRef, ...]) -> sp.csr_matrix:
    """Coefficient-level trace from a volume space to the matching surface space.

    value -> value (restriction), covariant -> covariant (tangential trace
    pi_D), piola -> density (normal trace with outward orientation).
    """
    kinds = {"value": "value", "covariant": "covariant", "piola": "density"}
    if kinds.get(volume_space.kind) != surface_space.kind:
        raise SpaceError(f"no trace from {volume_space.kind} to {surface_space.kind}")
    if volume_space.degree != surface_space.degree or volume_space.level != surface_space.level:
        raise SpaceError("trace needs matching degree and level")
    if len(refs) != surface_space.npatches:
        raise GeometryError("boundary references do not match the surface patches")
    rows, cols, vals = [], [], []
    for sp_idx, ref in enumerate(refs):
        a, side = ref.face
        for cs in range(surface_space.ncomp):
            if volume_space.kind == "value":
                cv, sign = 0, 1.0
            elif volume_space.kind == "covariant":
                cv, sign = ref.axes[cs], 1.0
            else:
                cv = a
                sign = 1.0 if side == 1 else -1.0
            shape_s = surface_space.comp_shapes[cs]
            ms = np.array(list(itertools.product(*[range(n) for n in shape_s])), dtype=np.int64)
            mv = np.zeros((ms.shape[0], 3), dtype=np.int64)
            mv[:, ref.axes[0]] = ms[:, 0]
            mv[:, ref.axes[1]] = ms[:, 1]
            mv[:, a] = 0 if side == 0 else volume_space.comp_shapes[cv][a] - 1
            bs = surface_space.broken_index(sp_idx, cs, ms)
            bv = volume_space.broken_index(ref.volume_patch, cv, mv)
            rows.append(bs)
            cols.append(bv)
            vals.append(np.full(bs.size, sign))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    nb_s = surface_space.npatches * surface_space.patch_size
    nb_v = volume_space.npatches * volume_space.patch_size
    broken = sp.csr_matrix((vals, (rows, cols)), shape=(nb_s, nb_v))
    g = surface_space.dofmap.restriction @ broken @ volume_space.dofmap.extension
    g = sp.csr_matrix(g)
    g.data = np.round(g.data)
    g.eliminate_zeros()
    return g


def dirichlet_trace_map(volume_1form: DiscreteSpace, tangential: DiscreteSpace,
                        refs: tuple[BoundaryPatchRef, ...]) -> sp.csr_matrix:
    """Tangential trace pi_D as a signed selection of boundary-attached DOFs."""
    if volume_1form.kind != "covariant" or tangential.kind != "covariant":
        raise SpaceError("Dirichlet trace maps the volume 1-form space to the tangential space")
    return trace_map(volume_1form, tangential, refs)


def interface_conformity(space: DiscreteSpace, samples: int = 10, seed: int = 0) -> float:
    """Largest jump of the conforming part of a random field across interfaces.

    value: full jump; covariant: tangential jump; piola: normal (volume) or
    conormal (surface) jump. Top forms carry no continuity and return 0.
    """
    from .geometry import face_points

    if space.kind == "density":
        return 0.0
    dom = space.domain
    d = dom.dim
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(space.dim)
    worst = 0.0
    for it in dom.interfaces:
        xa = face_points(d, it.face_a, rng.random((samples, d - 1)))
        xb = it.map_point(xa)
        jump = space.evaluate(c, it.patch_a, xa) - space.evaluate(c, it.patch_b, xb)
        if space.kind == "value":
            worst = max(worst, float(np.abs(jump).max()))
            continue
        ga = eval_patch(dom.patches[it.patch_a], xa)
        t = [j for j in range(d) if j != it.face_a[0]]
        if d == 3:
            nvec = np.cross(ga.jacobian[:, :, t[0]], ga.jacobian[:, :, t[1]])
        else:
            tang = ga.jacobian[:, :, t[0]]
            nvec = np.cross(tang, ga.normal)
        nvec /= np.linalg.norm(nvec, axis=1)[:, None]
        if space.kind == "covariant":
            if d == 3:
                part = jump - nvec * np.sum(jump * nvec, axis=1)[:, None]
            else:
                part = np.sum(jump * tang, axis=1) / np.linalg.norm(tang, axis=1)
        else:
            part = np.sum(jump * nvec, axis=1)
        worst = max(worst, float(np.abs(part).max()))
    return worst


# --------------------------------------------------------------------------
# solenoidal space
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SolenoidalBasis:
    """Flux-space coefficients of curl_G(chi) for scalar chi with DOF 0 removed."""

    matrix: sp.csr_matrix  # flux.dim x (scalar.dim - 1)
    removed: int
    surface: SurfaceComplex

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def surface_components(boundary: MultipatchDomain) -> int:
    n = len(boundary.patches)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for it in boundary.interfaces:
        parent[find(it.patch_a)] = find(it.patch_b)
    return len({find(a) for a in range(n)})


def build_solenoidal_basis(surface: SurfaceComplex) -> SolenoidalBasis:
    if surface_components(surface.scalar.domain) != 1:
        raise SpaceError("solenoidal basis requires a connected closed surface")
    curl = surface.curl_vec.matrix.tocsc()
    keep = np.arange(1, surface.scalar.dim)
    return SolenoidalBasis(sp.csr_matrix(curl[:, keep]), 0, surface)


# --------------------------------------------------------------------------
# quadrature-based mass matrices and projections
# --------------------------------------------------------------------------


def gauss_points_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True, eq=False)
class PatchQuadrature:
    """Tensor Gauss points of all elements of one patch, element-major.

    ``elem`` (ne, d) element multi-indices, ``local`` (nq, d) local points,
    ``points`` (ne*nq, d) parametric points, ``weights`` (ne*nq,) parametric
    weights (including element size).
    """

    elem: np.ndarray
    local: np.ndarray
    points: np.ndarray
    weights: np.ndarray


def patch_quadrature(d: int, n_elements: int, nq: int) -> PatchQuadrature:
    xg, wg = gauss_points_1d(nq)
    elem = np.array(list(itertools.product(range(n_elements), repeat=d)), dtype=np.int64)
    local = np.array(list(itertools.product(xg, repeat=d)))
    lw = np.prod(np.array(list(itertools.product(wg, repeat=d))), axis=1)
    h = 1.0 / n_elements
    pts = ((elem[:, None, :] + local[None, :, :]) * h).reshape(-1, d)
    w = np.tile(lw, elem.shape[0]) * h ** d
    return PatchQuadrature(elem, local, pts, w)


def element_basis(space: DiscreteSpace, comp: int, quad: PatchQuadrature, nder: int = 0):
    """Local basis of one component at all quadrature points of a patch.

    Returns ``(local_idx, values)``: ``local_idx`` (ne, nloc) patch-local DOF
    indices and ``values`` (ne, nq, nloc) or (ne, nq, nloc, d) for nder=1.
    """
    axes = space.axes[comp]
    d = space.d
    ne, nq = quad.elem.shape[0], quad.local.shape[0]
    tabs = []
    for a in range(d):
        first, tab = axes[a].element_eval(quad.elem[:, a][:, None], quad.local[:, a][None, :], nder)
        tabs.append((first[:, 0], tab))  # first (ne,), tab (ne, nq, nder+1, nact)
    offs = list(itertools.product(*[range(ax.nactive) for ax in axes]))
    multi = np.stack([np.stack([tabs[a][0] + o[a] for a in range(d)], axis=1) for o in offs], axis=1)
    local_idx = space.comp_offsets[comp] + np.ravel_multi_index(
        tuple(np.moveaxis(multi, -1, 0)), space.comp_shapes[comp])
    vals = np.ones((ne, nq, len(offs)))
    for k, o in enumerate(offs):
        for a in range(d):
            vals[:, :, k] *= tabs[a][1][:, :, 0, o[a]]
    if nder == 0:
        return local_idx, vals
    ders = np.ones((ne, nq, len(offs), d))
    for k, o in enumerate(offs):
        for j in range(d):
            for a in range(d):
                ders[:, :, k, j] *= tabs[a][1][:, :, 1 if a == j else 0, o[a]]
    return local_idx, ders


def metric_tensor(kind: Kind, jac: np.ndarray, measure: np.ndarray) -> np.ndarray:
    """Weight W (n, ncomp, ncomp) with (u, v)_L2 = int proxy_u^T W proxy_v dxhat."""
    m = np.abs(measure)
    if kind == "value":
        return m[:, None, None]
    if kind == "density":
        return (1.0 / m)[:, None, None]
    P = pushforward_matrix(kind, jac, measure)
    return np.einsum("nki,nkj->nij", P, P) * m[:, None, None]


def assemble_mass(space: DiscreteSpace, nq: int | None = None,
                  weight: Callable[[int, np.ndarray, np.ndarray], np.ndarray] | None = None,
                  metric: Callable | None = None) -> sp.csr_matrix:
    """Physical L2 mass matrix of a space, optionally with a scalar weight.

    ``weight(patch, points, quad_index)`` returns a weight per quadrature point.
    """
    nq = nq or space.degree + 2
    nb = space.npatches * space.patch_size
    rows, cols, vals = [], [], []
    quad = patch_quadrature(space.d, space.n_elements, nq)
    ne, nqq = quad.elem.shape[0], quad.local.shape[0]
    for k, patch in enumerate(space.domain.patches):
        geo = eval_patch(patch, quad.points)
        W = (metric or metric_tensor)(space.kind, geo.jacobian, geo.measure) * quad.weights[:, None, None]
        if weight is not None:
            W = W * weight(k, quad.points, np.arange(quad.points.shape[0]))[:, None, None]
        W = W.reshape(ne, nqq, space.ncomp, space.ncomp)
        basis = [element_basis(space, c, quad) for c in range(space.ncomp)]
        for a in range(space.ncomp):
            ia, va = basis[a]
            for b in range(space.ncomp):
                ib, vb = basis[b]
                loc = np.einsum("eqi,eq,eqj->eij", va, W[:, :, a, b], vb)
                rows.append((k * space.patch_size + np.repeat(ia[:, :, None], ib.shape[1], axis=2)).ravel())
                cols.append((k * space.patch_size + np.repeat(ib[:, None, :], ia.shape[1], axis=1)).ravel())
                vals.append(loc.ravel())
    broken = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nb, nb))
    X = space.dofmap.extension
    return sp.csr_matrix(X.T @ broken @ X)


def assemble_load(space: DiscreteSpace, f: Callable[[np.ndarray], np.ndarray], nq: int | None = None) -> np.ndarray:
    """Vector of L2 products (f, phi_i) for a physical field f(points)."""
    nq = nq or space.degree + 3
    quad = patch_quadrature(space.d, space.n_elements, nq)
    ne, nqq = quad.elem.shape[0], quad.local.shape[0]
    out = np.zeros(space.npatches * space.patch_size)
    for k, patch in enumerate(space.domain.patches):
        geo = eval_patch(patch, quad.points)
        fx = np.asarray(f(geo.point), dtype=float)
        m = np.abs(geo.measure) * quad.weights
        if space.kind == "value":
            proxy = (fx * m)[:, None]
        elif space.kind == "density":
            proxy = (fx * m / geo.measure)[:, None]
        else:
            P = pushforward_matrix(space.kind, geo.jacobian, geo.measure)
            proxy = np.einsum("nki,nk->ni", P, fx) * m[:, None]
        proxy = proxy.reshape(ne, nqq, space.ncomp)
        for c in range(space.ncomp):
            idx, vals = element_basis(space, c, quad)
            np.add.at(out, k * space.patch_size + idx, np.einsum("eqi,eq->ei", vals, proxy[:, :, c]))
    return space.dofmap.extension.T @ out


def l2_project(space: DiscreteSpace, f: Callable[[np.ndarray], np.ndarray], nq: int | None = None) -> np.ndarray:
    """Coefficients of the L2 projection of f onto the space (test utility)."""
    from scipy.sparse.linalg import spsolve

    M = assemble_mass(space, nq)
    b = assemble_load(space, f, nq)
    return spsolve(sp.csc_matrix(M), b)
