import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import dblquad

from igabem.geometry import eval_patch
from igabem.quadrature import (
    Adjacency,
    AdjacencyClass,
    SquareMap,
    SurfaceMesh,
    canonical_pair_rule,
    classify_pair,
    gauss_rule,
    regular_pair_rule,
    singular_pair_rule,
)

FOUR_PI = 4.0 * np.pi

# Flat unit squares in canonical position: element B's local coordinates are
# reflected so that the shared edge is u1 = 0 and the shared vertex is (0, 0).
REFLECT = {
    Adjacency.IDENTICAL: np.array([1.0, 1.0]),
    Adjacency.EDGE: np.array([-1.0, 1.0]),
    Adjacency.VERTEX: np.array([-1.0, -1.0]),
}


def _offset_density(kind):
    """Integrand over offsets d = x - y with the convolution weight of the two squares."""
    tri = lambda a: min(a, 2.0 - a)  # noqa: E731
    if kind == Adjacency.IDENTICAL:
        return (lambda b, a: 4.0 * (1.0 - a) * (1.0 - b)), (0.0, 1.0), (0.0, 1.0)
    if kind == Adjacency.EDGE:
        return (lambda b, a: 2.0 * tri(a) * (1.0 - b)), (0.0, 2.0), (0.0, 1.0)
    return (lambda b, a: tri(a) * tri(b)), (0.0, 2.0), (0.0, 2.0)


def regularized_integral(kind, eps):
    """Adaptive integral of the kernel 1/(4 pi sqrt(|x-y|^2 + eps^2)) over the square pair."""
    w, (a0, a1), (b0, b1) = _offset_density(kind)
    f = lambda b, a: w(b, a) / np.sqrt(a * a + b * b + eps * eps)  # noqa: E731
    return dblquad(f, a0, a1, b0, b1, epsabs=1e-13, epsrel=1e-13)[0] / FOUR_PI


@pytest.fixture(scope="module")
def oracle():
    """Richardson extrapolation eps -> 0 of the regularized kernel (removes eps and eps^2)."""
    out = {}
    for kind in REFLECT:
        eps = (2e-3, 1e-3, 5e-4)
        v = [regularized_integral(kind, e) for e in eps]
        r1 = [2.0 * v[1] - v[0], 2.0 * v[2] - v[1]]
        out[kind] = (4.0 * r1[1] - r1[0]) / 3.0
    return out


def flat_pair_value(kind, n):
    rule = canonical_pair_rule(kind, n)
    x = rule.points[:, :2]
    y = rule.points[:, 2:] * REFLECT[kind]
    r = np.linalg.norm(x - y, axis=1)
    return float(rule.weights @ (1.0 / r)) / FOUR_PI, r


class TestGauss:
    def test_midpoint(self):
        r = gauss_rule(1, 1)
        np.testing.assert_allclose(r.points[:, 0], [0.5])
        np.testing.assert_allclose(r.weights, [1.0])

    def test_exact_cubic(self):
        r = gauss_rule(2, 1)
        assert abs(r.weights @ r.points[:, 0] ** 2 - 1.0 / 3.0) <= 1e-15

    def test_cube_measure(self):
        assert abs(gauss_rule(4, 3).weights.sum() - 1.0) <= 1e-14

    @given(st.integers(1, 12), st.integers(0, 23))
    def test_polynomial_exactness(self, n, k):
        r = gauss_rule(n, 1)
        if k <= 2 * n - 1:
            assert abs(r.weights @ r.points[:, 0] ** k - 1.0 / (k + 1)) <= 1e-14

    def test_rejects_zero_points(self):
        with pytest.raises(ValueError):
            gauss_rule(0, 1)


@pytest.fixture(scope="module")
def mesh(ball):
    return SurfaceMesh(ball[1], 1)


class TestClassify:
    def test_identical(self, mesh):
        assert classify_pair(mesh, 5, 5).kind == Adjacency.IDENTICAL

    def test_vertex_across_interface(self, mesh):
        found = False
        for b in range(mesh.nelem):
            if mesh.elements[b][0] == mesh.elements[0][0]:
                continue
            cls = classify_pair(mesh, 0, b)
            if cls.kind == Adjacency.VERTEX:
                found = True
                v = cls.shared[0]
                assert v in mesh.vertices[0] and v in mesh.vertices[b]
        assert found

    def test_far_opposite(self, mesh, ball):
        _, boundary = ball
        centre = lambda e: eval_patch(boundary.patches[mesh.elements[e][0]],  # noqa: E731
                                      (mesh.elements[e][1:][None, :] + 0.5) / mesh.n).point[0]
        c0 = centre(0)
        b = int(np.argmin([centre(e) @ c0 for e in range(mesh.nelem)]))
        assert classify_pair(mesh, 0, b).kind == Adjacency.FAR

    def test_canonical_maps_align_shared_vertices(self, mesh, ball):
        _, boundary = ball
        for a, b in mesh.touching_pairs()[:200]:
            cls = classify_pair(mesh, int(a), int(b))
            if cls.kind in (Adjacency.FAR, Adjacency.IDENTICAL):
                continue
            pa = eval_patch(boundary.patches[mesh.elements[a][0]],
                            (mesh.elements[a][1:] + cls.map_a(np.zeros((1, 2)))) / mesh.n).point
            pb = eval_patch(boundary.patches[mesh.elements[b][0]],
                            (mesh.elements[b][1:] + cls.map_b(np.zeros((1, 2)))) / mesh.n).point
            np.testing.assert_allclose(pa, pb, atol=1e-12)

    def test_touching_pairs_ordered(self, mesh):
        pairs = mesh.touching_pairs()
        assert np.all(pairs[:, 0] <= pairs[:, 1])
        assert len({tuple(p) for p in pairs}) == len(pairs)


class TestSingularRules:
    @pytest.mark.parametrize("kind", list(REFLECT))
    def test_weights_cover_pair_domain(self, kind):
        assert abs(canonical_pair_rule(kind, 6).weights.sum() - 1.0) <= 1e-13

    @pytest.mark.parametrize("kind", list(REFLECT))
    def test_smooth_integrand_matches_tensor_rule(self, kind):
        f = lambda p: np.cos(p[:, 0] + 0.3 * p[:, 1]) * np.exp(p[:, 2] - p[:, 3] ** 2)  # noqa: E731
        ref = regular_pair_rule(8)
        rule = canonical_pair_rule(kind, 8)
        assert abs(rule.weights @ f(rule.points) - ref.weights @ f(ref.points)) <= 1e-12

    @pytest.mark.parametrize("kind", list(REFLECT))
    def test_against_regularized_oracle(self, kind, oracle):
        value, _ = flat_pair_value(kind, 10)
        assert abs(value - oracle[kind]) <= 1e-6

    @pytest.mark.parametrize("kind", list(REFLECT))
    def test_error_decreases_with_order(self, kind):
        ref = regularized_integral(kind, 0.0)
        errs = [abs(flat_pair_value(kind, n)[0] - ref) for n in (4, 6, 8, 10)]
        for a, b in zip(errs, errs[1:]):
            assert b <= a or b <= 1e-12

    @pytest.mark.parametrize("kind", list(REFLECT))
    @pytest.mark.parametrize("n", [4, 6, 8, 10])
    def test_points_avoid_singularity(self, kind, n):
        _, r = flat_pair_value(kind, n)
        assert r.min() > 0.0

    def test_identical_closed_form(self):
        exact = (4.0 / 3.0 * (1.0 - np.sqrt(2.0)) + 4.0 * np.log(1.0 + np.sqrt(2.0))) / FOUR_PI
        assert abs(flat_pair_value(Adjacency.IDENTICAL, 10)[0] - exact) <= 1e-13

    def test_mapped_rule_uses_square_symmetries(self):
        cls = AdjacencyClass(Adjacency.EDGE, SquareMap.from_corners(1, 2), SquareMap.from_corners(0, 3))
        rule = singular_pair_rule(cls, 4)
        assert np.all((rule.points >= 0.0) & (rule.points <= 1.0))
        # shared edge: u1 = 1 on A and u1 = 0 on B
        base = canonical_pair_rule(Adjacency.EDGE, 4).points
        np.testing.assert_allclose(1.0 - rule.points[:, 0], base[:, 0], atol=1e-15)
        np.testing.assert_allclose(rule.points[:, 2], base[:, 2], atol=1e-15)

    def test_far_rejected(self):
        with pytest.raises(ValueError):
            singular_pair_rule(AdjacencyClass(Adjacency.FAR), 4)

    def test_non_adjacent_corners_rejected(self):
        with pytest.raises(ValueError):
            SquareMap.from_corners(0, 2)
