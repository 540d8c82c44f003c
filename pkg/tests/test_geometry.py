import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igabem.geometry import (
    GeometryError,
    KnotVector,
    MultipatchDomain,
    Patch,
    TensorKnots,
    build_box,
    build_unit_ball,
    eval_bspline_basis,
    eval_bspline_derivatives,
    eval_patch,
    interface_deviation,
    match_interfaces,
    read_geometry,
    refine_dyadic,
    refine_patch,
    write_geometry,
)
from igabem.quadrature import gauss_rule

LIN = KnotVector(1, [0, 0, 1, 1])


@st.composite
def knot_vectors(draw):
    p = draw(st.integers(0, 4))
    n_inner = draw(st.integers(0 if p else 1, 6))
    inner = sorted(draw(st.lists(st.floats(0.01, 0.99), min_size=n_inner, max_size=n_inner, unique=True)))
    return KnotVector(p, [0.0] * (p + 1) + inner + [1.0] * (p + 1))


def unit_cube_patch(shift=(0.0, 0.0, 0.0), pid=0):
    ctrl = np.zeros((2, 2, 2, 3))
    for i, j, k in itertools.product(range(2), repeat=3):
        ctrl[i, j, k] = np.array([i, j, k], dtype=float) + shift
    return Patch(TensorKnots((LIN, LIN, LIN)), ctrl, np.ones((2, 2, 2)), pid)


# ---------------------------------------------------------------- knot vectors


class TestKnotVector:
    def test_rejects_non_open(self):
        with pytest.raises(GeometryError):
            KnotVector(2, [0, 0, 1, 1, 1, 1])

    def test_rejects_decreasing(self):
        with pytest.raises(GeometryError):
            KnotVector(1, [0, 0, 0.6, 0.4, 1, 1])

    def test_rejects_boundary_interior_knot(self):
        with pytest.raises(GeometryError):
            KnotVector(1, [0, 0, 0, 1, 1])

    @given(knot_vectors())
    def test_basis_count(self, kv):
        assert kv.num_basis == kv.knots.size - 1 - kv.degree
        assert kv.num_basis >= kv.degree + 1


class TestBasis:
    def test_degree_zero_indicator(self):
        first, vals = eval_bspline_basis(KnotVector(0, [0, 0.5, 1]), 0.25)
        assert first == 0
        np.testing.assert_array_equal(vals, [1.0])

    def test_bernstein_quadratic(self):
        first, vals = eval_bspline_basis(KnotVector(2, [0, 0, 0, 1, 1, 1]), 0.5)
        assert first == 0
        np.testing.assert_allclose(vals, [0.25, 0.5, 0.25], atol=1e-15)

    def test_hat_slopes(self):
        _, d = eval_bspline_derivatives(LIN, 0.3)
        np.testing.assert_allclose(d, [-1.0, 1.0], atol=1e-15)

    def test_bernstein_quadratic_slopes(self):
        _, d = eval_bspline_derivatives(KnotVector(2, [0, 0, 0, 1, 1, 1]), 0.5)
        np.testing.assert_allclose(d, [-1.0, 0.0, 1.0], atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(knot_vectors(), st.integers(0, 2**31 - 1))
    def test_partition_of_unity(self, kv, seed):
        x = np.random.default_rng(seed).random(10_000)
        _, vals = eval_bspline_basis(kv, x)
        assert np.all(vals >= -1e-14)
        np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(knot_vectors(), st.floats(0.0, 1.0))
    def test_derivatives_sum_to_zero(self, kv, x):
        _, d = eval_bspline_derivatives(kv, x)
        assert abs(d.sum()) <= 1e-12 * max(1.0, np.abs(d).max())

    def test_rejects_points_outside(self):
        with pytest.raises(ValueError):
            eval_bspline_basis(LIN, 1.5)


class TestRefine:
    def test_one_bisection(self):
        np.testing.assert_array_equal(refine_dyadic(LIN, 1).knots, [0, 0, 0.5, 1, 1])

    def test_quadratic_two_levels(self):
        kv = refine_dyadic(KnotVector(2, [0, 0, 0, 1, 1, 1]), 2)
        np.testing.assert_array_equal(kv.knots[3:-3], [0.25, 0.5, 0.75])
        assert kv.num_basis == 6

    def test_level_zero_identity(self):
        kv = KnotVector(2, [0, 0, 0, 0.3, 1, 1, 1])
        assert refine_dyadic(kv, 0) == kv

    def test_refined_patch_same_map(self, ball, rng):
        volume, _ = ball
        for patch in volume.patches[:3]:
            fine = refine_patch(patch, 2)
            x = rng.random((200, 3))
            diff = eval_patch(patch, x).point - eval_patch(fine, x).point
            assert np.abs(diff).max() <= 1e-12


# ---------------------------------------------------------------- patches


class TestPatch:
    def test_identity_cube(self):
        ev = eval_patch(unit_cube_patch(), np.array([[0.2, 0.3, 0.7]]))
        np.testing.assert_allclose(ev.point[0], [0.2, 0.3, 0.7], atol=1e-15)
        np.testing.assert_allclose(ev.jacobian[0], np.eye(3), atol=1e-15)

    def test_affine_constant_jacobian(self, rng):
        A = np.array([[2.0, 0.3, 0.0], [0.1, 1.0, 0.2], [0.0, 0.4, 1.5]])
        base = unit_cube_patch()
        patch = Patch(base.knots, base.control @ A.T + 1.0, base.weights)
        J = eval_patch(patch, rng.random((20, 3))).jacobian
        np.testing.assert_allclose(J, np.broadcast_to(A, J.shape), atol=1e-14)

    def test_rejects_nonpositive_weight(self):
        base = unit_cube_patch()
        w = base.weights.copy()
        w[0, 0, 0] = 0.0
        with pytest.raises(GeometryError):
            Patch(base.knots, base.control, w)

    def test_rejects_collapsed(self):
        base = unit_cube_patch()
        ctrl = base.control.copy()
        ctrl[1, :, :] = ctrl[0, :, :]
        with pytest.raises(GeometryError):
            Patch(base.knots, ctrl, base.weights)


# ---------------------------------------------------------------- ball


class TestBall:
    def test_patch_counts(self, ball):
        volume, boundary = ball
        assert len(volume.patches) == 7
        assert len(boundary.patches) == 6

    def test_boundary_on_sphere(self, ball, rng):
        _, boundary = ball
        for patch in boundary.patches:
            pts = eval_patch(patch, rng.random((500, 2))).point
            np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-12)

    def test_normals_outward(self, ball):
        _, boundary = ball
        rule = gauss_rule(6, 2)
        for patch in boundary.patches:
            ev = eval_patch(patch, rule.points)
            assert np.all(np.einsum("ij,ij->i", ev.normal, ev.point) > 0.0)

    def test_volume(self, ball):
        volume, _ = ball
        rule = gauss_rule(14, 3)
        total = sum(float(eval_patch(p, rule.points).measure @ rule.weights) for p in volume.patches)
        assert abs(total - 4 * np.pi / 3) <= 1e-6 * 4 * np.pi / 3

    def test_interfaces_agree(self, ball):
        for dom in ball:
            for iface in dom.interfaces:
                assert interface_deviation(dom, iface) <= 1e-12 * dom.scale

    def test_watertight(self, ball):
        _, boundary = ball
        assert len(boundary.interfaces) == 12
        assert boundary.boundary_faces() == []

    def test_euler_characteristic(self, ball):
        _, boundary = ball
        corners = []
        for patch in boundary.patches:
            for u, v in itertools.product((0.0, 1.0), repeat=2):
                corners.append(eval_patch(patch, np.array([[u, v]])).point[0])
        corners = np.round(np.array(corners), 10)
        V = len({tuple(c) for c in corners})
        E = len(boundary.interfaces)
        F = len(boundary.patches)
        assert V - E + F == 2

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            build_unit_ball(level=-1)


class TestInterfaces:
    def test_two_cubes(self):
        dom = match_interfaces(MultipatchDomain((unit_cube_patch(), unit_cube_patch((1.0, 0.0, 0.0), 1))))
        assert len(dom.interfaces) == 1
        it = dom.interfaces[0]
        assert {(it.patch_a, it.face_a), (it.patch_b, it.face_b)} == {(0, (0, 1)), (1, (0, 0))}
        assert it.orientation.perm == (0, 1, 2)
        assert it.orientation.flip == (False, False, False)

    def test_open_box_boundary(self):
        _, surface = build_box()
        assert len(surface.patches) == 6
        assert len(surface.interfaces) == 12


def test_geometry_file_round_trip(ball, tmp_path, rng):
    volume, _ = ball
    path = tmp_path / "ball.geo"
    write_geometry(volume, path)
    back = read_geometry(path)
    assert len(back.patches) == 7
    assert len(back.interfaces) == len(volume.interfaces)
    x = rng.random((50, 3))
    for a, b in zip(volume.patches, back.patches):
        np.testing.assert_allclose(eval_patch(a, x).point, eval_patch(b, x).point, atol=1e-14)
