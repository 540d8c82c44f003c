import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igabem.derham import (
    SURFACE_KINDS,
    VOLUME_KINDS,
    DiscreteSpace,
    SpaceError,
    apply_differential,
    assemble_mass,
    build_solenoidal_basis,
    build_surface_complex,
    build_volume_complex,
    dirichlet_trace_map,
    interface_conformity,
    l2_project,
    trace_map,
)
from igabem.geometry import eval_patch


def nnz(M):
    M = M.tocsr().copy()
    M.eliminate_zeros()
    return M.nnz


# regression values from the gluing enumeration; (1, 0) also matches the cell
# count of the seven-patch layout (16 vertices, 32 edges, 24 faces, 7 cells)
BALL_VOLUME_DIMS = {
    (1, 0): (16, 32, 24, 7),
    (1, 1): (79, 202, 180, 56),
    (2, 0): (79, 202, 180, 56),
    (2, 1): (232, 636, 594, 189),
}
BALL_SURFACE_DIMS = {
    (1, 0): (8, 12, 12, 6),
    (1, 1): (26, 48, 48, 24),
    (2, 0): (26, 48, 48, 24),
    (2, 1): (56, 108, 108, 54),
}


class TestDimensions:
    def test_unit_cube(self, box):
        vc = build_volume_complex(box[0], 1, 1)
        assert vc.dims == (27, 54, 36, 8)
        d = vc.dims
        assert d[0] - d[1] + d[2] - d[3] == 1

    @pytest.mark.parametrize("key", sorted(BALL_VOLUME_DIMS))
    def test_ball_regression(self, key, ball_volume, ball_surface):
        vc = ball_volume(*key)
        sc = ball_surface(*key)
        assert vc.dims == BALL_VOLUME_DIMS[key]
        assert (sc.scalar.dim, sc.tangential.dim, sc.flux.dim, sc.density.dim) == BALL_SURFACE_DIMS[key]

    @pytest.mark.parametrize("key", sorted(BALL_VOLUME_DIMS))
    def test_euler_characteristics(self, key, ball_volume, ball_surface):
        d = ball_volume(*key).dims
        assert d[0] - d[1] + d[2] - d[3] == 1
        sc = ball_surface(*key)
        assert sc.scalar.dim - sc.tangential.dim + sc.density.dim == 2
        assert sc.tangential.dim == sc.flux.dim

    @pytest.mark.parametrize("kind", VOLUME_KINDS)
    def test_bookkeeping(self, kind, ball):
        space = DiscreteSpace(ball[0], kind, 2, 1)
        nbroken = space.npatches * space.patch_size
        identified = nbroken - np.unique(space.dofmap.index).size
        assert nbroken - identified == space.dim
        assert set(np.unique(space.dofmap.sign)) <= {-1, 1}

    def test_surface_scalar_level0(self, ball_surface):
        assert ball_surface(1, 0).scalar.dim == 8

    def test_rejects_degree_zero(self, ball):
        with pytest.raises(SpaceError):
            DiscreteSpace(ball[0], "value", 0, 0)


class TestExactness:
    @settings(max_examples=8, deadline=None)
    @given(st.integers(1, 3), st.integers(0, 1))
    def test_volume_compositions_zero(self, ball, p, lv):
        vc = build_volume_complex(ball[0], p, lv)
        assert nnz(vc.curl.matrix @ vc.grad.matrix) == 0
        assert nnz(vc.div.matrix @ vc.curl.matrix) == 0

    @settings(max_examples=8, deadline=None)
    @given(st.integers(1, 3), st.integers(0, 2))
    def test_surface_compositions_zero(self, ball, p, lv):
        sc = build_surface_complex(ball[1], p, lv)
        assert nnz(sc.div.matrix @ sc.curl_vec.matrix) == 0
        assert nnz(sc.curl_scalar.matrix @ sc.grad.matrix) == 0

    def test_grad_of_constant(self, ball_volume):
        vc = ball_volume(2, 1)
        assert np.all(apply_differential(vc.grad, np.ones(vc.spaces[0].dim)) == 0.0)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_div_curl_random(self, ball_volume, seed):
        vc = ball_volume(2, 1)
        rng = np.random.default_rng(seed)
        c = rng.standard_normal(vc.spaces[1].dim)
        assert np.all((vc.div.matrix @ vc.curl.matrix) @ c == 0.0)
        k = rng.integers(-1000, 1000, vc.spaces[1].dim).astype(float)
        assert np.all(apply_differential(vc.div, apply_differential(vc.curl, k)) == 0.0)

    def test_apply_checks_length(self, ball_volume):
        with pytest.raises(SpaceError):
            apply_differential(ball_volume(1, 0).grad, np.ones(3))

    def test_curl_of_rotation_field(self, box, rng):
        vc = build_volume_complex(box[0], 1, 1)
        u = l2_project(vc.spaces[1], lambda x: np.stack([-x[:, 1] / 2, x[:, 0] / 2, 0 * x[:, 0]], axis=1))
        w = apply_differential(vc.curl, u)
        vals = vc.spaces[2].evaluate(w, 0, rng.random((100, 3)))
        np.testing.assert_allclose(vals, np.tile([0.0, 0.0, 1.0], (100, 1)), atol=1e-12)

    def test_constant_on_surface(self, ball_surface, rng):
        sc = ball_surface(2, 1)
        for k in range(6):
            np.testing.assert_allclose(sc.scalar.evaluate(np.ones(sc.scalar.dim), k, rng.random((20, 2))), 1.0,
                                       atol=1e-14)


class TestConformity:
    @pytest.mark.parametrize("p,lv", [(1, 0), (1, 1), (2, 1)])
    def test_volume(self, ball, p, lv):
        for kind in VOLUME_KINDS:
            assert interface_conformity(DiscreteSpace(ball[0], kind, p, lv), samples=5) <= 1e-11

    @pytest.mark.parametrize("p,lv", [(1, 0), (1, 1), (2, 1)])
    def test_surface(self, ball, p, lv):
        for kind in SURFACE_KINDS:
            assert interface_conformity(DiscreteSpace(ball[1], kind, p, lv), samples=5) <= 1e-11

    def test_top_forms_report_zero(self, ball):
        assert interface_conformity(DiscreteSpace(ball[1], "density", 1, 0)) == 0.0


@pytest.fixture(scope="module")
def setup(ball_volume, ball_surface, ball):
    p, lv = 2, 1
    return ball_volume(p, lv), ball_surface(p, lv), ball[1].metadata["refs"]


class TestTraces:
    def test_commuting_grad(self, setup):
        vc, sc, refs = setup
        T0 = trace_map(vc.spaces[0], sc.scalar, refs)
        T1 = dirichlet_trace_map(vc.spaces[1], sc.tangential, refs)
        assert nnz(T1 @ vc.grad.matrix - sc.grad.matrix @ T0) == 0

    def test_commuting_curl(self, setup):
        vc, sc, refs = setup
        T1 = dirichlet_trace_map(vc.spaces[1], sc.tangential, refs)
        T2 = trace_map(vc.spaces[2], sc.density, refs)
        assert nnz(T2 @ vc.curl.matrix - sc.curl_scalar.matrix @ T1) == 0

    def test_interior_basis_has_zero_trace(self, setup):
        vc, sc, refs = setup
        T1 = dirichlet_trace_map(vc.spaces[1], sc.tangential, refs).tocsc()
        col_nnz = np.diff(T1.indptr)
        assert np.sum(col_nnz == 0) > 0
        assert np.sum(col_nnz > 0) == sc.tangential.dim

    def test_trace_is_selection(self, setup):
        vc, sc, refs = setup
        T1 = dirichlet_trace_map(vc.spaces[1], sc.tangential, refs)
        assert set(np.abs(T1.data)) == {1.0}
        assert np.all(np.diff(T1.tocsr().indptr) == 1)

    def test_constant_field_tangential_part(self, box, rng):
        volume, surface = box
        vc = build_volume_complex(volume, 1, 1)
        sc = build_surface_complex(surface, 1, 1)
        a = np.array([1.0, 0.0, 0.0])
        u = l2_project(vc.spaces[1], lambda x: np.tile(a, (x.shape[0], 1)))
        t = dirichlet_trace_map(vc.spaces[1], sc.tangential, surface.metadata["refs"]) @ u
        for k, patch in enumerate(surface.patches):
            x = rng.random((30, 2))
            n = eval_patch(patch, x).normal
            exact = np.cross(n, np.cross(a, n))
            np.testing.assert_allclose(sc.tangential.evaluate(t, k, x), exact, atol=1e-12)

    def test_mismatched_kinds_rejected(self, setup):
        vc, sc, refs = setup
        with pytest.raises(SpaceError):
            dirichlet_trace_map(vc.spaces[0], sc.tangential, refs)


class TestSolenoidal:
    def test_divergence_free(self, ball_surface):
        sc = ball_surface(2, 1)
        S = build_solenoidal_basis(sc)
        assert nnz(sc.div.matrix @ S.matrix) == 0

    def test_level0_dimension(self, ball_surface):
        assert build_solenoidal_basis(ball_surface(1, 0)).dim == 7

    @pytest.mark.parametrize("p,lv", [(1, 0), (1, 1), (2, 1)])
    def test_dimension_is_nullity_of_div(self, ball_surface, p, lv):
        sc = ball_surface(p, lv)
        S = build_solenoidal_basis(sc)
        nullity = sc.flux.dim - np.linalg.matrix_rank(sc.div.matrix.toarray())
        assert S.dim == nullity
        assert np.linalg.matrix_rank(S.matrix.toarray()) == S.dim

    def test_removed_dof_is_first(self, ball_surface):
        assert build_solenoidal_basis(ball_surface(1, 1)).removed == 0


def test_mass_matrices_spd(ball_surface):
    sc = ball_surface(1, 1)
    for space in (sc.scalar, sc.tangential, sc.flux, sc.density):
        M = assemble_mass(space).toarray()
        np.testing.assert_allclose(M, M.T, atol=1e-14)
        assert np.linalg.eigvalsh(M)[0] > 0.0


def test_surface_area(ball_surface):
    sc = ball_surface(2, 1)
    one = np.ones(sc.scalar.dim)
    area = one @ assemble_mass(sc.scalar, 8) @ one
    assert abs(area - 4 * np.pi) <= 1e-8
