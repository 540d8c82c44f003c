"""B-spline/NURBS geometry: knot vectors, patches, multipatch domains.

Evaluation follows the Cox-de Boor recursion and is vectorized over points.
Multipatch domains carry an interface table whose orientation descriptors
map the parametric frame of one patch onto the frame of its neighbour.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb, sqrt
from pathlib import Path
from typing import Sequence

import numpy as np

GEOMETRY_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for malformed knot vectors, degenerate maps or bad interfaces."""


# --------------------------------------------------------------------------
# knot vectors
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KnotVector:
    """A p-open knot vector on [0, 1].

    Parameters
    ----------
    degree : int
        Polynomial degree ``p``.
    knots : sequence of float
        Non-decreasing knots; the first and last knot are repeated exactly
        ``p + 1`` times.
    """

    degree: int
    knots: np.ndarray

    def __post_init__(self) -> None:
        p = int(self.degree)
        t = np.asarray(self.knots, dtype=float).copy()
        t.setflags(write=False)
        object.__setattr__(self, "degree", p)
        object.__setattr__(self, "knots", t)
        if p < 0:
            raise GeometryError("degree must be nonnegative")
        if t.ndim != 1 or t.size < 2 * (p + 1):
            raise GeometryError(f"need at least {2 * (p + 1)} knots for degree {p}")
        if np.any(np.diff(t) < 0):
            raise GeometryError("knots must be non-decreasing")
        if t[0] != 0.0 or t[-1] != 1.0:
            raise GeometryError("knot vector must span [0, 1]")
        if np.any(t[: p + 1] != 0.0) or np.any(t[-(p + 1):] != 1.0):
            raise GeometryError("knot vector is not p-open")
        inner = t[p + 1: t.size - p - 1]
        if np.any(inner <= 0.0) or np.any(inner >= 1.0):
            raise GeometryError("interior knots must lie strictly inside (0, 1)")
        if inner.size:
            _, counts = np.unique(inner, return_counts=True)
            if np.any(counts > max(p, 1)):
                raise GeometryError("interior knot multiplicity exceeds the degree")
        if self.num_basis < p + 1:
            raise GeometryError("too few basis functions")

    @classmethod
    def uniform(cls, degree: int, n_elements: int) -> "KnotVector":
        """Open knot vector with ``n_elements`` equal elements and simple knots."""
        inner = np.arange(1, n_elements) / n_elements
        return cls(degree, np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)]))

    @property
    def num_basis(self) -> int:
        return self.knots.size - 1 - self.degree

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.knots)

    @property
    def num_elements(self) -> int:
        return self.breakpoints.size - 1

    def reduced(self) -> "KnotVector":
        """Knot vector of the derivative space (first and last knot dropped)."""
        if self.degree == 0:
            raise GeometryError("cannot lower degree 0")
        return KnotVector(self.degree - 1, self.knots[1:-1])

    def find_span(self, x: np.ndarray) -> np.ndarray:
        """Knot span index ``i`` with ``knots[i] <= x < knots[i+1]`` (last span at x = 1)."""
        x = np.asarray(x, dtype=float)
        span = np.searchsorted(self.knots, x, side="right") - 1
        return np.clip(span, self.degree, self.num_basis - 1)

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, KnotVector)
            and other.degree == self.degree
            and other.knots.shape == self.knots.shape
            and bool(np.all(other.knots == self.knots))
        )

    def __hash__(self) -> int:
        return hash((self.degree, self.knots.tobytes()))

    def __repr__(self) -> str:
        return f"KnotVector(degree={self.degree}, knots={self.knots.tolist()})"


def _basis_derivative_table(kv: KnotVector, span: np.ndarray, x: np.ndarray, nder: int) -> np.ndarray:
    """Derivatives 0..nder of the p+1 active B-splines (vectorized NURBS-book A2.3).

    Returns an array of shape (npts, nder+1, p+1).
    """
    p = kv.degree
    t = kv.knots
    n = x.shape[0]
    ndu = np.zeros((n, p + 1, p + 1))
    ndu[:, 0, 0] = 1.0
    left = np.zeros((n, p + 1))
    right = np.zeros((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[span + 1 - j]
        right[:, j] = t[span + j] - x
        saved = np.zeros(n)
        for r in range(j):
            ndu[:, j, r] = right[:, r + 1] + left[:, j - r]
            temp = ndu[:, r, j - 1] / ndu[:, j, r]
            ndu[:, r, j] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        ndu[:, j, j] = saved
    out = np.zeros((n, nder + 1, p + 1))
    out[:, 0, :] = ndu[:, :, p]
    if nder == 0:
        return out
    for r in range(p + 1):
        a = np.zeros((n, 2, p + 1))
        s1, s2 = 0, 1
        a[:, 0, 0] = 1.0
        for k in range(1, nder + 1):
            d = np.zeros(n)
            rk = r - k
            pk = p - k
            if r >= k:
                a[:, s2, 0] = a[:, s1, 0] / ndu[:, pk + 1, rk]
                d = a[:, s2, 0] * ndu[:, rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[:, s2, j] = (a[:, s1, j] - a[:, s1, j - 1]) / ndu[:, pk + 1, rk + j]
                d = d + a[:, s2, j] * ndu[:, rk + j, pk]
            if r <= pk:
                a[:, s2, k] = -a[:, s1, k - 1] / ndu[:, pk + 1, r]
                d = d + a[:, s2, k] * ndu[:, r, pk]
            out[:, k, r] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, nder + 1):
        out[:, k, :] *= fac
        fac *= p - k
    return out


def basis_table(kv: KnotVector, x, nder: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Active basis derivatives at points ``x``.

    Returns ``(first, table)`` with ``first`` the index of the first active
    basis function per point and ``table`` of shape ``(npts, nder+1, p+1)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("evaluation points must lie in [0, 1]")
    span = kv.find_span(x)
    table = _basis_derivative_table(kv, span, x, min(nder, kv.degree) if kv.degree else 0)
    if table.shape[1] < nder + 1:
        pad = np.zeros((x.size, nder + 1 - table.shape[1], kv.degree + 1))
        table = np.concatenate([table, pad], axis=1)
    return span - kv.degree, table


def eval_bspline_basis(kv: KnotVector, x):
    """Nonzero B-splines at ``x``: ``(first active index, values)``.

    Scalar ``x`` gives an int and a length ``p+1`` array; array input gives
    arrays with a leading point axis.
    """
    scalar = np.ndim(x) == 0
    first, table = basis_table(kv, x, 0)
    if scalar:
        return int(first[0]), table[0, 0]
    return first, table[:, 0, :]


def eval_bspline_derivatives(kv: KnotVector, x, order: int = 1):
    """Derivatives of the given order of the active B-splines at ``x``."""
    scalar = np.ndim(x) == 0
    first, table = basis_table(kv, x, order)
    if scalar:
        return int(first[0]), table[0, order]
    return first, table[:, order, :]


def refine_dyadic(kv: KnotVector, level: int) -> KnotVector:
    """Bisect every element ``level`` times (midpoint insertion)."""
    if level < 0:
        raise ValueError("level must be nonnegative")
    out = kv
    for _ in range(level):
        bp = out.breakpoints
        mids = 0.5 * (bp[:-1] + bp[1:])
        out = KnotVector(out.degree, np.sort(np.concatenate([out.knots, mids])))
    return out


# --------------------------------------------------------------------------
# patches
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TensorKnots:
    """Per-direction knot vectors of a tensor-product patch."""

    vectors: tuple[KnotVector, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vectors", tuple(self.vectors))
        if len(self.vectors) not in (2, 3):
            raise GeometryError("patches are 2- or 3-dimensional")

    @property
    def dim(self) -> int:
        return len(self.vectors)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(kv.degree for kv in self.vectors)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(kv.num_basis for kv in self.vectors)

    def __getitem__(self, i: int) -> KnotVector:
        return self.vectors[i]


@dataclass(frozen=True)
class PatchEval:
    """Geometry data at a batch of parametric points."""

    point: np.ndarray  # (n, 3)
    jacobian: np.ndarray  # (n, 3, d)
    measure: np.ndarray  # (n,) det J (volume) or |J_s x J_t| (surface)
    normal: np.ndarray | None  # (n, 3) for surfaces


@dataclass(frozen=True, eq=False)
class Patch:
    """Rational tensor-product patch mapping [0,1]^d into R^3.

    ``control`` has shape ``shape + (3,)`` in C order (last axis fastest),
    ``weights`` has shape ``shape``.
    """

    knots: TensorKnots
    control: np.ndarray
    weights: np.ndarray
    patch_id: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.knots, TensorKnots):
            object.__setattr__(self, "knots", TensorKnots(tuple(self.knots)))
        c = np.array(self.control, dtype=float)
        w = np.array(self.weights, dtype=float)
        if c.shape != self.knots.shape + (3,):
            raise GeometryError(f"control net shape {c.shape} does not match knots {self.knots.shape}")
        if w.shape != self.knots.shape:
            raise GeometryError("weights shape does not match the control net")
        if np.any(w <= 0.0):
            raise GeometryError(f"patch {self.patch_id}: weights must be positive")
        c.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "control", c)
        object.__setattr__(self, "weights", w)
        self._check_regular()

    @property
    def dim(self) -> int:
        return self.knots.dim

    @property
    def scale(self) -> float:
        pts = self.control.reshape(-1, 3)
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))

    def _check_regular(self) -> None:
        d = self.dim
        corners = np.array(list(itertools.product([0.0, 1.0], repeat=d)))
        pts = eval_patch(self, corners, check=False).point
        diam = self.scale
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        np.fill_diagonal(dist, np.inf)
        if dist.min() <= GEOMETRY_TOL * max(diam, 1.0):
            raise GeometryError(f"patch {self.patch_id} is degenerate (collapsed corners)")
        g = (np.arange(3) + 0.5) / 3
        sample = np.array(list(itertools.product(g, repeat=d)))
        eval_patch(self, np.vstack([sample, corners]))

    def homogeneous(self) -> np.ndarray:
        """Control net in homogeneous coordinates (w x, w y, w z, w)."""
        return np.concatenate([self.control * self.weights[..., None], self.weights[..., None]], axis=-1)

    @classmethod
    def from_homogeneous(cls, knots: TensorKnots, hom: np.ndarray, patch_id: int = 0) -> "Patch":
        w = hom[..., 3]
        return cls(knots, hom[..., :3] / w[..., None], w, patch_id)


def eval_patch(patch: Patch, x, check: bool = True) -> PatchEval:
    """Point, Jacobian, measure and (for surfaces) unit normal at parametric points.

    ``x`` has shape ``(n, d)`` or ``(d,)``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    d = patch.dim
    if x.shape[1] != d:
        raise ValueError(f"expected {d} parametric coordinates")
    n = x.shape[0]
    hom = patch.homogeneous()
    firsts, tables = [], []
    for a in range(d):
        f, tab = basis_table(patch.knots[a], x[:, a], 1)
        firsts.append(f)
        tables.append(tab)
    # homogeneous value and first derivatives
    val = np.zeros((n, 4))
    der = np.zeros((n, d, 4))
    degs = patch.knots.degrees
    for offs in itertools.product(*[range(p + 1) for p in degs]):
        idx = tuple(firsts[a] + offs[a] for a in range(d))
        cw = hom[idx]  # (n, 4)
        b = [tables[a][:, 0, offs[a]] for a in range(d)]
        db = [tables[a][:, 1, offs[a]] for a in range(d)]
        prod = np.ones(n)
        for a in range(d):
            prod = prod * b[a]
        val += prod[:, None] * cw
        for k in range(d):
            pk = np.ones(n)
            for a in range(d):
                pk = pk * (db[a] if a == k else b[a])
            der[:, k, :] += pk[:, None] * cw
    w = val[:, 3]
    point = val[:, :3] / w[:, None]
    jac = (der[:, :, :3] - der[:, :, 3:4] * point[:, None, :]) / w[:, None, None]
    jac = np.transpose(jac, (0, 2, 1))  # (n, 3, d)
    if d == 3:
        measure = np.linalg.det(jac)
        normal = None
    else:
        cr = np.cross(jac[:, :, 0], jac[:, :, 1])
        measure = np.linalg.norm(cr, axis=1)
        normal = cr / np.where(measure > 0, measure, 1.0)[:, None]
    if check:
        scale = max(patch.scale, 1.0) ** d
        bad = np.abs(measure) <= GEOMETRY_TOL * scale
        if d == 3:
            bad |= measure <= 0.0
        if np.any(bad):
            i = int(np.argmax(bad))
            raise GeometryError(f"degenerate Jacobian on patch {patch.patch_id} at x={x[i].tolist()}")
    if single:
        return PatchEval(point[0], jac[0], measure[0], None if normal is None else normal[0])
    return PatchEval(point, jac, measure, normal)


def eval_homogeneous(patch: Patch, x) -> np.ndarray:
    """Homogeneous image (w x, w y, w z, w) at parametric points (n, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = patch.dim
    hom = patch.homogeneous()
    firsts, tables = [], []
    for a in range(d):
        f, tab = basis_table(patch.knots[a], x[:, a], 0)
        firsts.append(f)
        tables.append(tab[:, 0, :])
    out = np.zeros((x.shape[0], 4))
    for offs in itertools.product(*[range(p + 1) for p in patch.knots.degrees]):
        idx = tuple(firsts[a] + offs[a] for a in range(d))
        prod = np.ones(x.shape[0])
        for a in range(d):
            prod = prod * tables[a][:, offs[a]]
        out += prod[:, None] * hom[idx]
    return out


def insert_knot(patch: Patch, direction: int, value: float) -> Patch:
    """Boehm knot insertion in homogeneous coordinates; the geometric map is unchanged."""
    kv = patch.knots[direction]
    p = kv.degree
    t = kv.knots
    k = int(kv.find_span(np.array([value]))[0])
    hom = np.moveaxis(patch.homogeneous(), direction, 0)
    nb = hom.shape[0]
    new = np.zeros((nb + 1,) + hom.shape[1:])
    for i in range(nb + 1):
        if i <= k - p:
            new[i] = hom[i]
        elif i > k:
            new[i] = hom[i - 1]
        else:
            alpha = (value - t[i]) / (t[i + p] - t[i])
            new[i] = alpha * hom[i] + (1.0 - alpha) * hom[i - 1]
    new = np.moveaxis(new, 0, direction)
    knots = list(patch.knots.vectors)
    knots[direction] = KnotVector(p, np.sort(np.append(t, value)))
    return Patch.from_homogeneous(TensorKnots(tuple(knots)), new, patch.patch_id)


def refine_patch(patch: Patch, level: int) -> Patch:
    """Dyadic refinement of all directions by knot insertion."""
    out = patch
    for a in range(patch.dim):
        target = refine_dyadic(patch.knots[a], level)
        have = list(patch.knots[a].knots)
        for v in target.knots:
            if v in have:
                have.remove(v)
            else:
                out = insert_knot(out, a, float(v))
    return out


# --------------------------------------------------------------------------
# multipatch domains and interfaces
# --------------------------------------------------------------------------

Face = tuple[int, int]  # (normal axis, side 0|1)


@dataclass(frozen=True)
class Orientation:
    """Signed axis permutation between two parametric frames.

    ``perm[j]`` is the axis of patch B aligned with axis ``j`` of patch A and
    ``flip[j]`` tells whether the direction is reversed.
    """

    perm: tuple[int, ...]
    flip: tuple[bool, ...]

    @property
    def det(self) -> int:
        d = len(self.perm)
        m = np.zeros((d, d))
        for j in range(d):
            m[self.perm[j], j] = -1.0 if self.flip[j] else 1.0
        return int(round(np.linalg.det(m)))

    def inverse(self) -> "Orientation":
        d = len(self.perm)
        perm = [0] * d
        flip = [False] * d
        for j in range(d):
            perm[self.perm[j]] = j
            flip[self.perm[j]] = self.flip[j]
        return Orientation(tuple(perm), tuple(flip))


@dataclass(frozen=True)
class Interface:
    """A face (volume) or edge (surface) shared by two patches."""

    patch_a: int
    face_a: Face
    patch_b: int
    face_b: Face
    orientation: Orientation

    def map_point(self, xa: np.ndarray) -> np.ndarray:
        """Map parametric points on face A to the matching points on face B."""
        xa = np.atleast_2d(xa)
        xb = np.zeros_like(xa)
        for j, (bj, fl) in enumerate(zip(self.orientation.perm, self.orientation.flip)):
            if j == self.face_a[0]:
                xb[:, bj] = float(self.face_b[1])
            else:
                xb[:, bj] = 1.0 - xa[:, j] if fl else xa[:, j]
        return xb


@dataclass(frozen=True, eq=False)
class MultipatchDomain:
    """Patches of one dimension plus their interface table."""

    patches: tuple[Patch, ...]
    interfaces: tuple[Interface, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "patches", tuple(self.patches))
        dims = {p.dim for p in self.patches}
        if len(dims) != 1:
            raise GeometryError("all patches must share one dimension")

    @property
    def dim(self) -> int:
        return self.patches[0].dim

    @property
    def scale(self) -> float:
        pts = np.vstack([p.control.reshape(-1, 3) for p in self.patches])
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))

    def with_interfaces(self, interfaces: Sequence[Interface]) -> "MultipatchDomain":
        return MultipatchDomain(self.patches, tuple(interfaces), dict(self.metadata))

    def boundary_faces(self) -> list[tuple[int, Face]]:
        used = {(i.patch_a, i.face_a) for i in self.interfaces} | {(i.patch_b, i.face_b) for i in self.interfaces}
        out = []
        for k in range(len(self.patches)):
            for face in all_faces(self.dim):
                if (k, face) not in used:
                    out.append((k, face))
        return out


def all_faces(d: int) -> list[Face]:
    return [(a, s) for a in range(d) for s in (0, 1)]


def face_points(d: int, face: Face, u: np.ndarray) -> np.ndarray:
    """Embed in-face coordinates ``u`` (n, d-1) into the parametric cube."""
    a, s = face
    u = np.atleast_2d(u)
    x = np.zeros((u.shape[0], d))
    others = [j for j in range(d) if j != a]
    for k, j in enumerate(others):
        x[:, j] = u[:, k]
    x[:, a] = float(s)
    return x


def _sample_grid(d: int, n: int = 5) -> np.ndarray:
    g = np.linspace(0.0, 1.0, n)
    return np.array(list(itertools.product(g, repeat=d - 1)))


def match_interfaces(domain: MultipatchDomain, require_closed: bool | None = None) -> MultipatchDomain:
    """Detect shared faces/edges and attach orientation descriptors.

    Each interface is found once. For surface domains a closed (watertight)
    surface is required by default: an unmatched edge raises.
    """
    d = domain.dim
    if require_closed is None:
        require_closed = d == 2
    tol = GEOMETRY_TOL * max(domain.scale, 1.0)
    corner_u = np.array(list(itertools.product([0.0, 1.0], repeat=d - 1)))
    grid = _sample_grid(d)
    faces = []
    for k, patch in enumerate(domain.patches):
        for face in all_faces(d):
            pts = eval_patch(patch, face_points(d, face, corner_u), check=False).point
            faces.append((k, face, pts))
    found: list[Interface] = []
    taken: set[tuple[int, Face]] = set()
    for ia in range(len(faces)):
        ka, fa, ca = faces[ia]
        if (ka, fa) in taken:
            continue
        for ib in range(ia + 1, len(faces)):
            kb, fb, cb = faces[ib]
            if (kb, fb) in taken or (kb == ka):
                continue
            dmat = np.linalg.norm(ca[:, None, :] - cb[None, :, :], axis=-1)
            if not np.all(dmat.min(axis=1) <= 1e-8 * max(domain.scale, 1.0)):
                continue
            orient, dev = _find_orientation(domain, ka, fa, kb, fb, grid)
            if dev > tol:
                raise GeometryError(
                    f"interface between patch {ka} face {fa} and patch {kb} face {fb} "
                    f"is geometrically inconsistent (max deviation {dev:.3e})"
                )
            found.append(Interface(ka, fa, kb, fb, orient))
            taken.add((ka, fa))
            taken.add((kb, fb))
            break
    out = domain.with_interfaces(found)
    if require_closed:
        free = out.boundary_faces()
        if free:
            k, f = free[0]
            raise GeometryError(f"unmatched edge: patch {k} face {f} has no neighbour")
    return out


def _find_orientation(domain, ka, fa, kb, fb, grid) -> tuple[Orientation, float]:
    d = domain.dim
    pa, pb = domain.patches[ka], domain.patches[kb]
    xa = face_points(d, fa, grid)
    ya = eval_patch(pa, xa, check=False).point
    in_a = [j for j in range(d) if j != fa[0]]
    in_b = [j for j in range(d) if j != fb[0]]
    best = None
    for perm_in in itertools.permutations(in_b):
        for flips in itertools.product([False, True], repeat=d - 1):
            perm = [0] * d
            flip = [False] * d
            perm[fa[0]] = fb[0]
            flip[fa[0]] = fa[1] == fb[1]
            for j, bj, fl in zip(in_a, perm_in, flips):
                perm[j] = bj
                flip[j] = fl
            iface = Interface(ka, fa, kb, fb, Orientation(tuple(perm), tuple(flip)))
            yb = eval_patch(pb, iface.map_point(xa), check=False).point
            dev = float(np.max(np.linalg.norm(ya - yb, axis=1)))
            if best is None or dev < best[1]:
                best = (iface.orientation, dev)
    assert best is not None
    return best


def interface_deviation(domain: MultipatchDomain, iface: Interface, n: int = 5) -> float:
    """Max distance between the two patch evaluations on an n x n interface grid."""
    d = domain.dim
    xa = face_points(d, iface.face_a, _sample_grid(d, n))
    ya = eval_patch(domain.patches[iface.patch_a], xa, check=False).point
    yb = eval_patch(domain.patches[iface.patch_b], iface.map_point(xa), check=False).point
    return float(np.max(np.linalg.norm(ya - yb, axis=1)))


@dataclass(frozen=True)
class BoundaryPatchRef:
    """Volume face a boundary surface patch was extracted from.

    ``axes`` are the volume axes playing the roles of the surface (s, t)
    coordinates; the order makes J_s x J_t point out of the volume.
    """

    volume_patch: int
    face: Face
    axes: tuple[int, int]


def extract_boundary(volume: MultipatchDomain) -> tuple[MultipatchDomain, tuple[BoundaryPatchRef, ...]]:
    """Surface domain made of the unmatched faces, with outward orientation."""
    if volume.dim != 3:
        raise GeometryError("boundary extraction needs a volume domain")
    patches, refs = [], []
    for k, (a, s) in volume.boundary_faces():
        vp = volume.patches[k]
        if s == 1:
            axes = ((a + 1) % 3, (a + 2) % 3)
        else:
            axes = ((a + 2) % 3, (a + 1) % 3)
        hom = vp.homogeneous()
        layer = np.take(hom, 0 if s == 0 else hom.shape[a] - 1, axis=a)
        rem = [j for j in range(3) if j != a]
        order = [rem.index(axes[0]), rem.index(axes[1])]
        layer = np.transpose(layer, order + [2])
        knots = TensorKnots((vp.knots[axes[0]], vp.knots[axes[1]]))
        patches.append(Patch.from_homogeneous(knots, layer, len(patches)))
        refs.append(BoundaryPatchRef(k, (a, s), axes))
    surface = match_interfaces(MultipatchDomain(tuple(patches)))
    return surface, tuple(refs)


# --------------------------------------------------------------------------
# the unit ball
# --------------------------------------------------------------------------


def _bernstein_product(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Bernstein coefficients of the product of two tensor Bernstein polynomials."""
    n, m = f.shape[0] - 1, g.shape[0] - 1
    h = np.zeros((n + m + 1, n + m + 1))
    for i, j in itertools.product(range(n + 1), repeat=2):
        for k, l in itertools.product(range(m + 1), repeat=2):
            h[i + k, j + l] += comb(n, i) * comb(n, j) * comb(m, k) * comb(m, l) * f[i, j] * g[k, l]
    for a, b in itertools.product(range(n + m + 1), repeat=2):
        h[a, b] /= comb(n + m, a) * comb(n + m, b)
    return h


def _elevate(f: np.ndarray) -> np.ndarray:
    """Raise a tensor Bernstein coefficient array by one degree per direction."""
    return _bernstein_product(f, np.ones((2, 2)))


def sphere_cap_homogeneous() -> np.ndarray:
    """Biquartic rational patch of the unit sphere over the cube face z > |x|, |y|.

    A planar rational biquadratic patch, whose edges are the circular images
    of the bounding great circles under stereographic projection from the
    south pole, is lifted to the sphere by the inverse projection. Returns
    homogeneous Bernstein coefficients of shape (5, 5, 4).
    """
    c = (sqrt(3.0) - 1.0) / 2.0
    q = c + c * c / (c + 1.0)
    w1 = (c + 1.0) / sqrt(2.0)
    plane = np.array([
        [(-c, -c), (-q, 0.0), (-c, c)],
        [(0.0, -q), (0.0, 0.0), (0.0, q)],
        [(c, -c), (q, 0.0), (c, c)],
    ])
    w = np.array([[1.0, w1, 1.0], [w1, w1 * w1, w1], [1.0, w1, 1.0]])
    X, Y, W = w * plane[..., 0], w * plane[..., 1], w
    XX, YY, WW = _bernstein_product(X, X), _bernstein_product(Y, Y), _bernstein_product(W, W)
    num = np.stack([2.0 * _bernstein_product(X, W), 2.0 * _bernstein_product(Y, W), WW - XX - YY], axis=-1)
    den = WW + XX + YY
    return np.concatenate([num, den[..., None]], axis=-1)


def _face_rotations() -> list[np.ndarray]:
    cyc = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    flip = np.diag([1.0, -1.0, -1.0])
    eye = np.eye(3)
    return [cyc, cyc @ flip, cyc @ cyc, cyc @ cyc @ flip, eye, flip]


BALL_INNER_HALF_WIDTH = 0.35


def build_unit_ball(level: int = 0, degree: int = 2, inner: float = BALL_INNER_HALF_WIDTH):
    """Seven-patch unit ball and its six-patch boundary surface.

    The central patch is the cube [-inner, inner]^3; each shell patch blends
    linearly (in the radial parameter w) between a cube face and the exact
    rational sphere cap above it. The geometry itself is independent of
    ``level`` and ``degree``; both are recorded in ``metadata`` as the
    intended discretization.

    Returns
    -------
    (volume, boundary) : tuple of MultipatchDomain
        Interfaces are matched; ``boundary.metadata['refs']`` lists the
        volume faces the surface patches come from.
    """
    if level < 0 or degree < 1:
        raise ValueError("need level >= 0 and degree >= 1")
    cap = sphere_cap_homogeneous()  # (5,5,4)
    cap5 = np.stack([_elevate(cap[..., k]) for k in range(4)], axis=-1)  # (6,6,4)
    wcap = cap[..., 3]
    # flat face z = inner, bilinear in (u, v), times the cap weight
    flat = np.zeros((2, 2, 3))
    for i, j in itertools.product(range(2), repeat=2):
        flat[i, j] = (inner * (2 * i - 1), inner * (2 * j - 1), inner)
    inner_hom = np.stack(
        [_bernstein_product(flat[..., k], wcap) for k in range(3)] + [_elevate(wcap)], axis=-1
    )
    cube = np.zeros((2, 2, 2, 3))
    for i, j, k in itertools.product(range(2), repeat=3):
        cube[i, j, k] = inner * np.array([2 * i - 1, 2 * j - 1, 2 * k - 1], dtype=float)
    lin = KnotVector(1, [0, 0, 1, 1])
    quint = KnotVector(5, [0] * 6 + [1] * 6)
    patches = [Patch(TensorKnots((lin, lin, lin)), cube, np.ones((2, 2, 2)), 0)]
    for r, rot in enumerate(_face_rotations()):
        hom = np.zeros((6, 6, 2, 4))
        for layer, src in ((0, inner_hom), (1, cap5)):
            hom[:, :, layer, :3] = src[..., :3] @ rot.T
            hom[:, :, layer, 3] = src[..., 3]
        patches.append(Patch.from_homogeneous(TensorKnots((quint, quint, lin)), hom, r + 1))
    volume = match_interfaces(MultipatchDomain(tuple(patches), metadata={"level": level, "degree": degree}))
    surface, refs = extract_boundary(volume)
    surface.metadata.update({"level": level, "degree": degree, "refs": refs})
    return volume, surface


def build_box(lower=(0.0, 0.0, 0.0), upper=(1.0, 1.0, 1.0)):
    """Single trilinear patch ``[lower, upper]`` and its six-patch boundary."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if np.any(hi <= lo):
        raise GeometryError("box needs upper > lower in every direction")
    ctrl = np.zeros((2, 2, 2, 3))
    for i, j, k in itertools.product(range(2), repeat=3):
        ctrl[i, j, k] = np.where(np.array([i, j, k]) == 1, hi, lo)
    lin = KnotVector(1, [0, 0, 1, 1])
    volume = match_interfaces(MultipatchDomain((Patch(TensorKnots((lin, lin, lin)), ctrl, np.ones((2, 2, 2)), 0),)))
    surface, refs = extract_boundary(volume)
    surface.metadata.update({"refs": refs})
    return volume, surface


# --------------------------------------------------------------------------
# plain-text geometry files
# --------------------------------------------------------------------------

GEOMETRY_FORMAT = """\
Geometry file grammar (whitespace separated, '#' starts a comment):

  patch <id> <dim>
  degrees <p_1> ... <p_dim>
  knots <t_0> <t_1> ...            (one line per direction)
  controls <count>
  <x> <y> <z> <w>                  (count lines, C order: last index fastest)
  end

Any number of patch records may follow each other. Optional explicit
interfaces:

  interface <patch_a> <axis_a> <side_a> <patch_b> <axis_b> <side_b> <perm...> <flip...>

with dim entries for perm and 0/1 flags for flip. Without interface lines
the table is detected by match_interfaces.
"""


def write_geometry(domain: MultipatchDomain, path: str | Path) -> None:
    lines = ["# multipatch geometry"]
    for patch in domain.patches:
        lines.append(f"patch {patch.patch_id} {patch.dim}")
        lines.append("degrees " + " ".join(str(p) for p in patch.knots.degrees))
        for kv in patch.knots.vectors:
            lines.append("knots " + " ".join(repr(float(v)) for v in kv.knots))
        pts = patch.control.reshape(-1, 3)
        w = patch.weights.reshape(-1)
        lines.append(f"controls {pts.shape[0]}")
        for (x, y, z), wi in zip(pts, w):
            lines.append(" ".join(repr(float(v)) for v in (x, y, z, wi)))
        lines.append("end")
    for it in domain.interfaces:
        o = it.orientation
        lines.append(
            "interface {} {} {} {} {} {} {} {}".format(
                it.patch_a, it.face_a[0], it.face_a[1], it.patch_b, it.face_b[0], it.face_b[1],
                " ".join(map(str, o.perm)), " ".join(str(int(f)) for f in o.flip),
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_geometry(path: str | Path) -> MultipatchDomain:
    tokens_by_line = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            tokens_by_line.append(line.split())
    patches: list[Patch] = []
    interfaces: list[Interface] = []
    i = 0
    while i < len(tokens_by_line):
        tok = tokens_by_line[i]
        if tok[0] == "patch":
            pid, dim = int(tok[1]), int(tok[2])
            degs = [int(v) for v in tokens_by_line[i + 1][1:]]
            kvs = [KnotVector(degs[a], [float(v) for v in tokens_by_line[i + 2 + a][1:]]) for a in range(dim)]
            count = int(tokens_by_line[i + 2 + dim][1])
            rows = np.array([[float(v) for v in tokens_by_line[i + 3 + dim + r]] for r in range(count)])
            knots = TensorKnots(tuple(kvs))
            if tokens_by_line[i + 3 + dim + count][0] != "end":
                raise GeometryError(f"patch {pid}: missing 'end'")
            patches.append(Patch(knots, rows[:, :3].reshape(knots.shape + (3,)), rows[:, 3].reshape(knots.shape), pid))
            i += 4 + dim + count
        elif tok[0] == "interface":
            v = [int(x) for x in tok[1:]]
            d = (len(v) - 6) // 2
            interfaces.append(
                Interface(v[0], (v[1], v[2]), v[3], (v[4], v[5]),
                          Orientation(tuple(v[6:6 + d]), tuple(bool(f) for f in v[6 + d:6 + 2 * d])))
            )
            i += 1
        else:
            raise GeometryError(f"unknown record '{tok[0]}'")
    domain = MultipatchDomain(tuple(patches))
    if interfaces:
        domain = domain.with_interfaces(interfaces)
        for it in interfaces:
            dev = interface_deviation(domain, it)
            if dev > GEOMETRY_TOL * max(domain.scale, 1.0):
                raise GeometryError(f"interface {it.patch_a}-{it.patch_b} deviates by {dev:.3e}")
        return domain
    return match_interfaces(domain)
