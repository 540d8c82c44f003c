"""Quadrature rules for regular and singular boundary element integrals.

Regular integrals use tensor Gauss-Legendre rules on [0, 1]^d. Element pairs
that touch (identical, edge-adjacent, vertex-adjacent) use rules in relative
coordinates whose Jacobians cancel the 1/|x - y| singularity: the pair domain
is split into simplicial pieces and each piece is mapped from [0, 1]^4 with a
Duffy-type collapse at the singular set.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .geometry import MultipatchDomain


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points (n, dim) and positive weights on a reference domain.

    ``domain`` is ``"cube"`` for [0, 1]^d or ``"pair"`` for the product of two
    unit squares, where the first two coordinates belong to element A.
    """

    points: np.ndarray
    weights: np.ndarray
    domain: str = "cube"

    def __post_init__(self) -> None:
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError("need at least one Gauss point")
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def gauss_rule(n: int, d: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule with n points per direction on [0, 1]^d."""
    if d < 1:
        raise ValueError("dimension must be positive")
    x, w = gauss_legendre(n)
    pts = np.array(list(itertools.product(x, repeat=d))).reshape(-1, d)
    wts = np.prod(np.array(list(itertools.product(w, repeat=d))).reshape(-1, d), axis=1)
    return QuadratureRule(pts, wts, "cube")


# --------------------------------------------------------------------------
# surface meshes and adjacency
# --------------------------------------------------------------------------


class Adjacency(enum.IntEnum):
    FAR = 0
    VERTEX = 1
    EDGE = 2
    IDENTICAL = 3


# corners of the unit square in counterclockwise order
CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.int64)


@dataclass(frozen=True)
class SquareMap:
    """Symmetry of the unit square: u -> M @ u + t."""

    M: tuple[tuple[int, int], tuple[int, int]] = ((1, 0), (0, 1))
    t: tuple[int, int] = (0, 0)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return u @ np.asarray(self.M, dtype=float).T + np.asarray(self.t, dtype=float)

    @staticmethod
    def from_corners(c0: int, c1: int) -> "SquareMap":
        """Map with (0,0) -> corner c0 and (0,1) -> corner c1 (adjacent corners)."""
        p0, p1 = CORNERS[c0], CORNERS[c1]
        e2 = p1 - p0
        if np.abs(e2).sum() != 1:
            raise ValueError("corners are not adjacent")
        # the other edge direction points into the square
        e1 = np.array([e2[1], e2[0]])
        if np.any(p0 + e1 < 0) or np.any(p0 + e1 > 1):
            e1 = -e1
        M = ((int(e1[0]), int(e2[0])), (int(e1[1]), int(e2[1])))
        return SquareMap(M, (int(p0[0]), int(p0[1])))

    @staticmethod
    def from_corner(c0: int) -> "SquareMap":
        nxt = (c0 + 1) % 4
        return SquareMap.from_corners(c0, nxt)


IDENTITY_MAP = SquareMap()


@dataclass(frozen=True)
class AdjacencyClass:
    """Relation of two surface elements plus the local correspondence.

    ``map_a`` and ``map_b`` bring the pair into canonical position: for edge
    adjacency the shared edge is u1 = 0 in both with matching u2; for vertex
    adjacency the shared vertex is (0, 0) in both.
    """

    kind: Adjacency
    map_a: SquareMap = field(default=IDENTITY_MAP)
    map_b: SquareMap = field(default=IDENTITY_MAP)
    shared: tuple[int, ...] = ()

    def swapped(self) -> "AdjacencyClass":
        return AdjacencyClass(self.kind, self.map_b, self.map_a, self.shared)


class SurfaceMesh:
    """Elements of a uniformly refined multipatch surface.

    Element ``e`` is ``(patch, i, j)`` with ``e = patch * n**2 + i * n + j``.
    Global vertex ids come from gluing patch corner grids across interfaces.
    """

    def __init__(self, boundary: MultipatchDomain, level: int):
        from .derham import DiscreteSpace

        if boundary.dim != 2:
            raise ValueError("surface mesh needs a 2D multipatch domain")
        self.boundary = boundary
        self.level = level
        self.n = 2 ** level
        n = self.n
        self.npatches = len(boundary.patches)
        self.nelem = self.npatches * n * n
        vspace = DiscreteSpace(boundary, "value", 1, level)
        gidx = vspace.dofmap.index.reshape(self.npatches, n + 1, n + 1)
        k, i, j = np.meshgrid(np.arange(self.npatches), np.arange(n), np.arange(n), indexing="ij")
        k, i, j = k.ravel(), i.ravel(), j.ravel()
        self.elements = np.stack([k, i, j], axis=1)
        self.vertices = np.stack(
            [gidx[k, i + c[0], j + c[1]] for c in CORNERS], axis=1
        ).astype(np.int64)
        self.nvertices = vspace.dim
        self._vertex_elements: list[list[int]] = [[] for _ in range(self.nvertices)]
        for e, vs in enumerate(self.vertices):
            for v in vs:
                self._vertex_elements[v].append(e)

    def element_index(self, patch: int, i: int, j: int) -> int:
        return (patch * self.n + i) * self.n + j

    def touching(self, e: int) -> list[int]:
        """Elements sharing at least one vertex with element ``e`` (including e)."""
        out = set()
        for v in self.vertices[e]:
            out.update(self._vertex_elements[v])
        return sorted(out)

    def touching_pairs(self) -> np.ndarray:
        """All unordered pairs (a <= b) of touching elements."""
        pairs = set()
        for e in range(self.nelem):
            for f in self.touching(e):
                if f >= e:
                    pairs.add((e, f))
        return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def classify_pair(mesh: SurfaceMesh, a: int, b: int) -> AdjacencyClass:
    """Adjacency of elements a and b and the maps to canonical position."""
    if a == b:
        return AdjacencyClass(Adjacency.IDENTICAL)
    va, vb = mesh.vertices[a], mesh.vertices[b]
    shared = [v for v in va if v in vb]
    if not shared:
        return AdjacencyClass(Adjacency.FAR)
    ca = {int(v): c for c, v in enumerate(va)}
    cb = {int(v): c for c, v in enumerate(vb)}
    if len(shared) == 1:
        v = int(shared[0])
        return AdjacencyClass(Adjacency.VERTEX, SquareMap.from_corner(ca[v]),
                              SquareMap.from_corner(cb[v]), (v,))
    if len(shared) == 2:
        v, w = int(shared[0]), int(shared[1])
        if (ca[v] - ca[w]) % 2 == 0:
            raise ValueError(f"elements {a} and {b} share a diagonal")
        return AdjacencyClass(
            Adjacency.EDGE,
            SquareMap.from_corners(ca[v], ca[w]),
            SquareMap.from_corners(cb[v], cb[w]),
            (v, w),
        )
    raise ValueError(f"elements {a} and {b} share {len(shared)} vertices")


# --------------------------------------------------------------------------
# singular pair rules
# --------------------------------------------------------------------------


def _tensor(n: int, d: int):
    r = gauss_rule(n, d)
    return r.points, r.weights


def _identical_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    q, w = _tensor(n, 4)
    xi, eta, w1, w2 = q.T
    pts, wts = [], []
    for s1, s2 in itertools.product((1.0, -1.0), repeat=2):
        for tri in range(2):
            a, b = (xi, xi * eta) if tri == 0 else (xi * eta, xi)
            x1 = np.where(s1 > 0, 0.0, a) + (1.0 - a) * w1
            x2 = np.where(s2 > 0, 0.0, b) + (1.0 - b) * w2
            y1 = x1 + s1 * a
            y2 = x2 + s2 * b
            pts.append(np.stack([x1, x2, y1, y2], axis=1))
            wts.append(w * xi * (1.0 - a) * (1.0 - b))
    return np.concatenate(pts), np.concatenate(wts)


def _edge_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    q, w = _tensor(n, 4)
    xi, e1, e2, t = q.T
    pts, wts = [], []
    for sign in (1.0, -1.0):
        for k in range(3):
            if k == 0:
                x1, y1, z = xi, xi * e1, xi * e2
            elif k == 1:
                x1, y1, z = xi * e1, xi, xi * e2
            else:
                x1, y1, z = xi * e1, xi * e2, xi
            if sign > 0:
                x2 = (1.0 - z) * t
                y2 = x2 + z
            else:
                x2 = z + (1.0 - z) * t
                y2 = x2 - z
            pts.append(np.stack([x1, x2, y1, y2], axis=1))
            wts.append(w * xi ** 2 * (1.0 - z))
    return np.concatenate(pts), np.concatenate(wts)


def _vertex_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    q, w = _tensor(n, 4)
    xi = q[:, 0]
    rest = q[:, 1:] * xi[:, None]
    pts, wts = [], []
    for k in range(4):
        p = np.empty_like(q)
        p[:, k] = xi
        p[:, [j for j in range(4) if j != k]] = rest
        pts.append(p)
        wts.append(w * xi ** 3)
    return np.concatenate(pts), np.concatenate(wts)


@lru_cache(maxsize=None)
def canonical_pair_rule(kind: Adjacency, n: int) -> QuadratureRule:
    """Rule on the canonical configuration of an adjacency class."""
    if kind == Adjacency.IDENTICAL:
        p, w = _identical_rule(n)
    elif kind == Adjacency.EDGE:
        p, w = _edge_rule(n)
    elif kind == Adjacency.VERTEX:
        p, w = _vertex_rule(n)
    else:
        raise ValueError("far pairs use tensor Gauss rules")
    return QuadratureRule(p, w, "pair")


def singular_pair_rule(cls: AdjacencyClass, n: int) -> QuadratureRule:
    """Pair rule in the local coordinates of elements A and B.

    Coordinates 0:2 are A's local coordinates, 2:4 those of B.
    """
    if cls.kind == Adjacency.FAR:
        raise ValueError("far pairs use tensor Gauss rules")
    base = canonical_pair_rule(cls.kind, n)
    pts = np.concatenate([cls.map_a(base.points[:, :2]), cls.map_b(base.points[:, 2:])], axis=1)
    return QuadratureRule(pts, base.weights.copy(), "pair")


def regular_pair_rule(n_a: int, n_b: int | None = None) -> QuadratureRule:
    """Tensor product of Gauss rules on both elements as a pair rule."""
    ra = gauss_rule(n_a, 2)
    rb = gauss_rule(n_b or n_a, 2)
    pts = np.concatenate(
        [np.repeat(ra.points, rb.size, axis=0), np.tile(rb.points, (ra.size, 1))], axis=1
    )
    wts = np.repeat(ra.weights, rb.size) * np.tile(rb.weights, ra.size)
    return QuadratureRule(pts, wts, "pair")


# --------------------------------------------------------------------------
# order schedule for regular pairs
# --------------------------------------------------------------------------

# (separation ratio lower bound, extra Gauss points per direction); the ratio
# is centre distance over the sum of bounding radii
DISTANCE_BANDS: tuple[tuple[float, int], ...] = ((4.0, 0), (2.0, 2), (1.4, 4), (1.0, 6), (0.0, 8))


def regular_order(base: int, ratio: float | np.ndarray) -> np.ndarray:
    """Gauss order for a non-touching pair at the given separation ratio."""
    ratio = np.asarray(ratio, dtype=float)
    extra = np.full(ratio.shape, DISTANCE_BANDS[-1][1], dtype=np.int64)
    for bound, add in reversed(DISTANCE_BANDS[:-1]):
        extra = np.where(ratio >= bound, add, extra)
    return base + extra
