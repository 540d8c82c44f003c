import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from igabem.derham import build_volume_complex, l2_project
from igabem.fem import (
    FemError,
    ProblemData,
    ReluctivityModel,
    assemble_curl_curl,
    assemble_rhs,
    assemble_tangential_load,
    assemble_trace_pairing,
    build_coupling_spaces,
    check_consistency,
    curl_energy_norm,
    project_tangential,
    reluctivity_form_probe,
    rhs_defect,
    surface_mass_pairing,
)
from igabem.harness import magnetized_ball_data

SAT = ReluctivityModel.saturation()
vec3 = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


@pytest.fixture(scope="module")
def spaces(ball):
    return build_coupling_spaces(*ball, 1, 0)


@pytest.fixture(scope="module")
def spaces_p2(ball):
    return build_coupling_spaces(*ball, 2, 0)


class TestReluctivity:
    def test_identity(self):
        m = ReluctivityModel.identity()
        assert m.is_linear and m.C_M == 1.0 and m.C_L == 1.0
        w = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(m.U(w), w)

    def test_saturation_constants(self):
        assert SAT.C_M == 0.5
        assert SAT.C_L == 1.0625
        assert not SAT.is_linear

    def test_curve_endpoints(self):
        np.testing.assert_allclose(SAT.g([0.0, 0.5, 1e8]), [0.5, 0.75, 1.0], rtol=1e-12)

    def test_curve_increasing(self):
        s = np.linspace(0.0, 10.0, 1001)
        assert np.all(np.diff(SAT.g(s)) > 0.0)

    def test_probe_within_bounds(self):
        mono, lip = SAT.probe_constants()
        assert SAT.C_M - 1e-12 <= mono < 0.6
        assert 1.0 < lip <= SAT.C_L + 1e-12

    @settings(max_examples=200)
    @given(vec3, vec3)
    def test_pointwise_monotone_and_lipschitz(self, a, b):
        d = a - b
        n2 = float(d @ d)
        if n2 < 1e-12:
            return
        dU = (SAT.U(a) - SAT.U(b)).ravel()
        assert dU @ d >= SAT.C_M * n2 * (1.0 - 1e-10)
        assert dU @ dU <= SAT.C_L ** 2 * n2 * (1.0 + 1e-10)

    @pytest.mark.parametrize("kw", [{"nu_min": 0.0}, {"nu_min": 1.5}, {"s0": 0.0}])
    def test_rejects_bad_parameters(self, kw):
        with pytest.raises(FemError):
            ReluctivityModel.saturation(**kw)

    def test_from_config(self):
        m = ReluctivityModel.from_config("saturation", {"nu_min": 0.7})
        assert m.nu_min == 0.7 and m.s0 == 0.5
        with pytest.raises(FemError):
            ReluctivityModel.from_config("steel")


class TestStiffness:
    def test_symmetric_semidefinite(self, spaces):
        K = assemble_curl_curl(spaces.volume).toarray()
        np.testing.assert_allclose(K, K.T, atol=1e-14 * np.abs(K).max())
        lam = np.linalg.eigvalsh(K)
        assert lam[0] >= -1e-12 * lam[-1]

    def test_gradient_kernel(self, spaces):
        vc = spaces.volume
        K = assemble_curl_curl(vc)
        assert (vc.curl.matrix @ vc.grad.matrix).count_nonzero() == 0
        assert np.abs((K @ vc.grad.matrix).toarray()).max() <= 1e-13 * abs(K).max()

    def test_kernel_dimension(self, spaces):
        vc = spaces.volume
        rank = np.linalg.matrix_rank(assemble_curl_curl(vc).toarray())
        assert vc.spaces[1].dim - rank == vc.spaces[0].dim - 1

    def test_saturation_at_zero_state(self, spaces):
        # g(0) = nu_min, so the frozen stiffness is nu_min times the linear one
        vc = spaces.volume
        K = assemble_curl_curl(vc)
        Ks = assemble_curl_curl(vc, SAT, np.zeros(vc.spaces[1].dim))
        np.testing.assert_allclose(Ks.toarray(), 0.5 * K.toarray(), atol=1e-15 * abs(K).max())

    def test_nonlinear_needs_state(self, spaces):
        with pytest.raises(FemError):
            assemble_curl_curl(spaces.volume, SAT)

    def test_state_shape_checked(self, spaces):
        with pytest.raises(FemError):
            assemble_curl_curl(spaces.volume, SAT, np.zeros(3))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_discrete_monotone_lipschitz(self, spaces, seed):
        rng = np.random.default_rng(seed)
        n = spaces.n_volume
        u, v = rng.standard_normal(n), rng.standard_normal(n)
        mono, dw, dU = reluctivity_form_probe(spaces.volume, SAT, u, v)
        assert mono >= SAT.C_M * dw * (1.0 - 1e-10)
        assert dU <= SAT.C_L ** 2 * dw * (1.0 + 1e-10)

    def test_linear_probe_is_energy(self, spaces, rng):
        n = spaces.n_volume
        u, v = rng.standard_normal(n), rng.standard_normal(n)
        mono, dw, dU = reluctivity_form_probe(spaces.volume, ReluctivityModel.identity(), u, v)
        assert mono == pytest.approx(dw, rel=1e-12)
        assert dU == pytest.approx(dw, rel=1e-12)
        K = assemble_curl_curl(spaces.volume)
        assert dw == pytest.approx((u - v) @ (K @ (u - v)), rel=1e-10)

    def test_curl_norm_of_rotation(self, box):
        vc = build_volume_complex(box[0], 1, 1)
        u = l2_project(vc.spaces[1], lambda x: np.stack([-x[:, 1] / 2, x[:, 0] / 2, 0 * x[:, 0]], axis=1))
        assert curl_energy_norm(vc, u) == pytest.approx(1.0, abs=1e-12)


class TestPairings:
    def test_trace_pairing_structure(self, spaces):
        T = assemble_trace_pairing(spaces)
        assert T.shape == (spaces.n_bem, spaces.n_volume)
        M = surface_mass_pairing(spaces.surface.flux, spaces.surface.tangential)
        ref = spaces.solenoidal.matrix.T @ M @ spaces.dirichlet
        np.testing.assert_allclose(T.toarray(), np.asarray(ref.todense() if hasattr(ref, "todense") else ref))

    def test_trace_pairing_ignores_interior(self, spaces):
        T = assemble_trace_pairing(spaces).tocsc()
        touched = np.unique(spaces.dirichlet.indices)
        interior = np.setdiff1d(np.arange(spaces.n_volume), touched)
        assert interior.size > 0
        assert T[:, interior].count_nonzero() == 0

    def test_tangential_load_linear(self, spaces):
        tang = spaces.surface.tangential
        f = lambda x, n: np.cross([0.0, 0.0, 1.0], n)  # noqa: E731
        g = lambda x, n: np.cross(x, n)  # noqa: E731
        a = assemble_tangential_load(tang, f)
        b = assemble_tangential_load(tang, g)
        c = assemble_tangential_load(tang, lambda x, n: 2.0 * f(x, n) - 3.0 * g(x, n))
        np.testing.assert_allclose(c, 2.0 * a - 3.0 * b, atol=1e-14)

    def test_normal_field_has_zero_load(self, spaces):
        load = assemble_tangential_load(spaces.surface.tangential, lambda x, n: 5.0 * n)
        assert np.abs(load).max() <= 1e-14

    def test_projection_ignores_normal_part(self, spaces_p2):
        tang = spaces_p2.surface.tangential
        f = lambda x, n: np.cross([0.3, -1.0, 0.5], x)  # noqa: E731
        a = project_tangential(tang, f)
        b = project_tangential(tang, lambda x, n: f(x, n) + (1.0 + x[:, :1] ** 2) * n)
        np.testing.assert_allclose(b, a, atol=1e-12)
        assert np.all(project_tangential(tang, lambda x, n: np.zeros_like(x)) == 0.0)


class TestRhs:
    def test_benchmark_rhs(self, spaces):
        F, Gb = assemble_rhs(magnetized_ball_data(), spaces)
        assert np.abs(F).max() > 0.0
        assert np.all(Gb == 0.0)

    def test_benchmark_rhs_compatible(self, spaces_p2):
        # div_G (m x n) = 0 on the sphere, so the Neumann jump is orthogonal to gradients
        F, _ = assemble_rhs(magnetized_ball_data(), spaces_p2)
        assert rhs_defect(F, spaces_p2.volume) <= 1e-12

    def test_dirichlet_jump_needs_C0(self, spaces):
        data = ProblemData(u0=lambda x, n: np.cross([0.0, 0.0, 1.0], x))
        with pytest.raises(FemError):
            assemble_rhs(data, spaces)

    def test_dirichlet_jump_with_zero_C0(self, spaces):
        # with C0 = 0 the boundary load is S^T (M/2) u0_h
        sc = spaces.surface
        fn = lambda x, n: np.cross([0.0, 0.0, 1.0], x)  # noqa: E731
        C0 = np.zeros((sc.flux.dim, sc.tangential.dim))
        _, Gb = assemble_rhs(ProblemData(u0=fn), spaces, C0)
        M = surface_mass_pairing(sc.flux, sc.tangential)
        expect = spaces.solenoidal.matrix.T @ (0.5 * (M @ project_tangential(sc.tangential, fn)))
        np.testing.assert_allclose(Gb, expect, atol=1e-14)

    def test_volume_source(self, spaces):
        f = lambda x: np.stack([-x[:, 1], x[:, 0], 0 * x[:, 0]], axis=1)  # noqa: E731
        F, Gb = assemble_rhs(ProblemData(f=f), spaces)
        assert np.abs(F).max() > 0.0 and np.all(Gb == 0.0)


class TestConsistency:
    def test_none_source(self, spaces):
        assert check_consistency(None, spaces.volume) == 0.0

    def test_rotation_is_compatible(self, spaces_p2):
        # div f = 0 and f . n = 0 on the sphere
        f = lambda x: np.stack([-x[:, 1], x[:, 0], 0 * x[:, 0]], axis=1)  # noqa: E731
        assert check_consistency(f, spaces_p2.volume) <= 1e-6

    def test_constant_is_incompatible(self, spaces):
        # f . n != 0 on the sphere
        assert check_consistency(lambda x: np.tile([1.0, 0.0, 0.0], (x.shape[0], 1)), spaces.volume) > 1e-2

    def test_rhs_defect_detects_gradient_load(self, spaces):
        vc = spaces.volume
        F = vc.grad.matrix @ np.arange(vc.spaces[0].dim, dtype=float)
        assert rhs_defect(F, vc) > 1.0
        assert rhs_defect(np.zeros(0), vc) == 0.0


def test_coupling_space_sizes(spaces):
    assert spaces.n_volume == spaces.volume.spaces[1].dim
    assert spaces.n_bem == spaces.solenoidal.dim == spaces.surface.scalar.dim - 1
    assert spaces.dirichlet.shape == (spaces.surface.tangential.dim, spaces.n_volume)
