"""Volume curl-curl assembly, coupling pairings and right-hand sides.

The stiffness matrix is assembled as ``C^T M2[w] C`` with ``C`` the exact
curl incidence S1 -> S2 and ``M2[w]`` the weighted 2-form mass matrix, so the
gradient kernel is reproduced exactly. For a nonlinear reluctivity the weight
``w = g(|curl u_prev|)`` is frozen at the quadrature points (Picard).

Tangential boundary data (Dirichlet jump ``u0`` and Neumann jump ``phi0``)
are callables ``field(points, normals) -> (n, 3)`` on the boundary.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .derham import (
    DiscreteSpace,
    SolenoidalBasis,
    SurfaceComplex,
    VolumeComplex,
    assemble_load,
    assemble_mass,
    build_solenoidal_basis,
    build_surface_complex,
    build_volume_complex,
    dirichlet_trace_map,
    element_basis,
    patch_quadrature,
    pushforward_matrix,
)
from .geometry import MultipatchDomain, eval_patch

VolumeField = Callable[[np.ndarray], np.ndarray]
SurfaceField = Callable[[np.ndarray, np.ndarray], np.ndarray]


class FemError(ValueError):
    """Invalid input to a finite element assembly routine."""


# --------------------------------------------------------------------------
# reluctivity
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReluctivityModel:
    """Isotropic reluctivity ``U(w) = g(|w|) w``.

    ``kind = "identity"`` gives ``g = 1``. ``kind = "saturation"`` gives
    ``g(s) = nu_min + (1 - nu_min) s^2 / (s^2 + s0^2)``, an increasing curve
    from ``nu_min`` to 1. The Jacobian of ``U`` has eigenvalues ``g`` and
    ``g + s g'``, hence ``C_M = nu_min`` and ``C_L = sup (g + s g')``, which
    with ``t = s^2/(s^2+s0^2)`` is ``nu_min + (1 - nu_min) * 9/8``.
    """

    kind: str = "identity"
    nu_min: float = 0.5
    s0: float = 0.5

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "saturation"):
            raise FemError(f"unknown reluctivity model {self.kind!r}")
        if self.kind == "saturation":
            if not 0.0 < self.nu_min <= 1.0:
                raise FemError("nu_min must lie in (0, 1]")
            if self.s0 <= 0.0:
                raise FemError("s0 must be positive")

    @classmethod
    def identity(cls) -> "ReluctivityModel":
        return cls("identity")

    @classmethod
    def saturation(cls, nu_min: float = 0.5, s0: float = 0.5) -> "ReluctivityModel":
        return cls("saturation", nu_min, s0)

    @classmethod
    def from_config(cls, material: str, params: dict | None = None) -> "ReluctivityModel":
        params = params or {}
        if material == "identity":
            return cls.identity()
        if material == "saturation":
            return cls.saturation(float(params.get("nu_min", 0.5)), float(params.get("s0", 0.5)))
        raise FemError(f"unknown material {material!r}")

    @property
    def is_linear(self) -> bool:
        return self.kind == "identity" or self.nu_min == 1.0

    def g(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind == "identity":
            return np.ones_like(s)
        s2 = s * s
        return self.nu_min + (1.0 - self.nu_min) * s2 / (s2 + self.s0 ** 2)

    def U(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        return self.g(np.linalg.norm(w, axis=-1))[..., None] * w

    @property
    def C_M(self) -> float:
        return 1.0 if self.kind == "identity" else self.nu_min

    @property
    def C_L(self) -> float:
        return 1.0 if self.kind == "identity" else self.nu_min + 1.125 * (1.0 - self.nu_min)

    def probe_constants(self, samples: int = 1000, seed: int = 0, scale: float | None = None) -> tuple[float, float]:
        """Empirical (monotonicity, Lipschitz) quotients over random pairs in R^3."""
        rng = np.random.default_rng(seed)
        scale = scale or (4.0 * self.s0 if self.kind == "saturation" else 1.0)
        a = rng.standard_normal((samples, 3)) * scale * rng.uniform(0, 1, (samples, 1))
        b = rng.standard_normal((samples, 3)) * scale * rng.uniform(0, 1, (samples, 1))
        dU = self.U(a) - self.U(b)
        dw = a - b
        n2 = np.sum(dw * dw, axis=1)
        mono = np.sum(dU * dw, axis=1) / n2
        lip = np.linalg.norm(dU, axis=1) / np.sqrt(n2)
        return float(mono.min()), float(lip.max())


# --------------------------------------------------------------------------
# problem data and spaces
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemData:
    """Right-hand side data of the transmission problem.

    ``f`` is a volume field ``f(points)``; ``u0`` and ``phi0`` are tangential
    fields ``field(points, normals)`` on the boundary. ``None`` means zero.
    """

    f: VolumeField | None = None
    u0: SurfaceField | None = None
    phi0: SurfaceField | None = None
    reluctivity: ReluctivityModel = field(default_factory=ReluctivityModel.identity)


@dataclass(frozen=True, eq=False)
class CouplingSpaces:
    """Volume and surface complexes of one discretization plus the trace maps."""

    volume: VolumeComplex
    surface: SurfaceComplex
    solenoidal: SolenoidalBasis
    dirichlet: sp.csr_matrix  # volume 1-forms -> surface tangential
    degree: int
    level: int

    @property
    def one_forms(self) -> DiscreteSpace:
        return self.volume.spaces[1]

    @property
    def n_volume(self) -> int:
        return self.volume.spaces[1].dim

    @property
    def n_bem(self) -> int:
        return self.solenoidal.dim


def build_coupling_spaces(volume: MultipatchDomain, boundary: MultipatchDomain, degree: int,
                          level: int) -> CouplingSpaces:
    refs = boundary.metadata["refs"]
    vc = build_volume_complex(volume, degree, level)
    sc = build_surface_complex(boundary, degree, level)
    D = dirichlet_trace_map(vc.spaces[1], sc.tangential, refs)
    return CouplingSpaces(vc, sc, build_solenoidal_basis(sc), D, degree, level)


# --------------------------------------------------------------------------
# curl-curl stiffness
# --------------------------------------------------------------------------


class _TwoFormQuadrature:
    """Cached 2-form basis values and metric at the volume quadrature points."""

    def __init__(self, space: DiscreteSpace, nq: int):
        self.space = space
        self.nq = nq
        quad = patch_quadrature(space.d, space.n_elements, nq)
        self.ne, self.nqq = quad.elem.shape[0], quad.local.shape[0]
        self.weights = quad.weights
        self.basis = [element_basis(space, c, quad) for c in range(space.ncomp)]
        self.metric = []  # per patch (ne, nq, 3, 3): P^T P |det| w
        self.gram = []  # per patch (ne, nq, 3, 3): P^T P, so |B|^2 = proxy^T gram proxy
        for patch in space.domain.patches:
            geo = eval_patch(patch, quad.points)
            P = pushforward_matrix(space.kind, geo.jacobian, geo.measure)
            PtP = np.einsum("nki,nkj->nij", P, P)
            W = PtP * (np.abs(geo.measure) * quad.weights)[:, None, None]
            self.metric.append(W.reshape(self.ne, self.nqq, 3, 3))
            self.gram.append(PtP.reshape(self.ne, self.nqq, 3, 3))

    def proxies(self, coeffs: np.ndarray) -> list[np.ndarray]:
        """Parametric 2-form proxies (ne, nq, 3) per patch for global coefficients."""
        broken = self.space.to_broken(coeffs)
        out = []
        ps = self.space.patch_size
        for k in range(self.space.npatches):
            local = broken[k * ps:(k + 1) * ps]
            pr = np.empty((self.ne, self.nqq, 3))
            for c, (idx, vals) in enumerate(self.basis):
                pr[:, :, c] = np.einsum("eqi,ei->eq", vals, local[idx])
            out.append(pr)
        return out

    def magnitudes(self, coeffs: np.ndarray) -> list[np.ndarray]:
        """Physical |B| at the quadrature points, per patch (ne, nq)."""
        return [np.sqrt(np.maximum(np.einsum("eqi,eqij,eqj->eq", pr, G, pr), 0.0))
                for pr, G in zip(self.proxies(coeffs), self.gram)]

    def inner(self, a: list[np.ndarray], b: list[np.ndarray]) -> float:
        """L2 product of two fields given by their proxies (or U-images of them)."""
        return float(sum(np.einsum("eqi,eqij,eqj->", x, W, y) for x, y, W in zip(a, b, self.metric)))

    def mass(self, weight: list[np.ndarray] | None = None) -> sp.csr_matrix:
        sp_ = self.space
        nb = sp_.npatches * sp_.patch_size
        rows, cols, vals = [], [], []
        for k in range(sp_.npatches):
            W = self.metric[k] if weight is None else self.metric[k] * weight[k][:, :, None, None]
            for a in range(3):
                ia, va = self.basis[a]
                for b in range(3):
                    ib, vb = self.basis[b]
                    loc = np.einsum("eqi,eq,eqj->eij", va, W[:, :, a, b], vb)
                    rows.append((k * sp_.patch_size + np.repeat(ia[:, :, None], ib.shape[1], axis=2)).ravel())
                    cols.append((k * sp_.patch_size + np.repeat(ib[:, None, :], ia.shape[1], axis=1)).ravel())
                    vals.append(loc.ravel())
        broken = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(nb, nb))
        X = sp_.dofmap.extension
        return sp.csr_matrix(X.T @ broken @ X)


_QUAD_CACHE: "weakref.WeakKeyDictionary[DiscreteSpace, dict]" = weakref.WeakKeyDictionary()


def volume_quadrature_order(degree: int) -> int:
    return degree + 2


def two_form_quadrature(space: DiscreteSpace, nq: int | None = None) -> _TwoFormQuadrature:
    nq = nq or volume_quadrature_order(space.degree)
    cache = _QUAD_CACHE.setdefault(space, {})
    if nq not in cache:
        cache[nq] = _TwoFormQuadrature(space, nq)
    return cache[nq]


def assemble_curl_curl(vc: VolumeComplex, reluctivity: ReluctivityModel | None = None,
                       state: np.ndarray | None = None, nq: int | None = None) -> sp.csr_matrix:
    """Stiffness ``K[i, j] = int g(|curl u_prev|) curl b_i . curl b_j``.

    ``state`` holds 1-form coefficients of ``u_prev``; it is required for a
    nonlinear reluctivity and ignored for a linear one.
    """
    reluctivity = reluctivity or ReluctivityModel.identity()
    C = vc.curl.matrix
    quad = two_form_quadrature(vc.spaces[2], nq)
    weight = None
    if not reluctivity.is_linear:
        if state is None:
            raise FemError("a nonlinear reluctivity needs a linearization state")
        state = np.asarray(state, dtype=float)
        if state.shape != (vc.spaces[1].dim,):
            raise FemError(f"state of shape {state.shape} for a 1-form space of dimension {vc.spaces[1].dim}")
        weight = [reluctivity.g(m) for m in quad.magnitudes(C @ state)]
    elif state is not None and np.shape(state) != (vc.spaces[1].dim,):
        raise FemError(f"state of shape {np.shape(state)} for a 1-form space of dimension {vc.spaces[1].dim}")
    M2 = quad.mass(weight)
    K = sp.csr_matrix(C.T @ M2 @ C)
    return K


def reluctivity_form_probe(vc: VolumeComplex, model: ReluctivityModel, u: np.ndarray, v: np.ndarray,
                           nq: int | None = None) -> tuple[float, float, float]:
    """Discrete A1/A2 quantities for two 1-form coefficient vectors.

    Returns ``(<U(curl u) - U(curl v), curl(u - v)>, ||curl(u - v)||^2,
    ||U(curl u) - U(curl v)||^2)`` with all integrals over the volume.
    """
    C = vc.curl.matrix
    quad = two_form_quadrature(vc.spaces[2], nq)
    pu, pv = quad.proxies(C @ u), quad.proxies(C @ v)
    mu, mv = quad.magnitudes(C @ u), quad.magnitudes(C @ v)
    du = [model.g(a)[..., None] * x - model.g(b)[..., None] * y for x, y, a, b in zip(pu, pv, mu, mv)]
    dw = [x - y for x, y in zip(pu, pv)]
    return quad.inner(du, dw), quad.inner(dw, dw), quad.inner(du, du)


def curl_energy_norm(vc: VolumeComplex, u: np.ndarray, nq: int | None = None) -> float:
    """||curl u||_L2 for 1-form coefficients u."""
    quad = two_form_quadrature(vc.spaces[2], nq)
    pr = quad.proxies(vc.curl.matrix @ u)
    return float(np.sqrt(max(quad.inner(pr, pr), 0.0)))


# --------------------------------------------------------------------------
# boundary pairings and loads
# --------------------------------------------------------------------------


def surface_mass_pairing(flux: DiscreteSpace, tangential: DiscreteSpace) -> sp.csr_matrix:
    """Duality ``<psi, xi>`` between flux and tangential fields.

    With ``psi = J psi_hat / sqrt(g)`` and ``xi = J G^{-1} xi_hat`` the
    integrand ``psi . xi dsigma`` reduces to ``psi_hat . xi_hat`` in parameters.
    """
    from .bem import assemble_mass_pairing

    return assemble_mass_pairing(flux, tangential)


def assemble_trace_pairing(spaces: CouplingSpaces, M: sp.csr_matrix | None = None) -> sp.csr_matrix:
    """``T[i, j] = <psi_i, pi_D b_j>`` with rows in solenoidal coordinates."""
    M = surface_mass_pairing(spaces.surface.flux, spaces.surface.tangential) if M is None else M
    S = spaces.solenoidal.matrix
    T = sp.csr_matrix(S.T @ M @ spaces.dirichlet)
    T.eliminate_zeros()
    return T


def assemble_tangential_load(tangential: DiscreteSpace, fn: SurfaceField, nq: int | None = None) -> np.ndarray:
    """``<fn, xi_k>`` over the tangential surface basis for a field ``fn(x, n)``."""
    nq = nq or tangential.degree + 3
    quad = patch_quadrature(2, tangential.n_elements, nq)
    ne, nqq = quad.elem.shape[0], quad.local.shape[0]
    out = np.zeros(tangential.npatches * tangential.patch_size)
    for k, patch in enumerate(tangential.domain.patches):
        geo = eval_patch(patch, quad.points)
        fx = np.asarray(fn(geo.point, geo.normal), dtype=float)
        P = pushforward_matrix("covariant", geo.jacobian, geo.measure)
        proxy = np.einsum("nki,nk->ni", P, fx) * (geo.measure * quad.weights)[:, None]
        proxy = proxy.reshape(ne, nqq, 2)
        for c in range(2):
            idx, vals = element_basis(tangential, c, quad)
            np.add.at(out, k * tangential.patch_size + idx, np.einsum("eqi,eq->ei", vals, proxy[:, :, c]))
    return tangential.dofmap.extension.T @ out


def project_tangential(tangential: DiscreteSpace, fn: SurfaceField, nq: int | None = None) -> np.ndarray:
    """L2 projection of a tangential field onto the tangential surface space."""
    nq = nq or tangential.degree + 3
    M = assemble_mass(tangential, nq)
    return spsolve(sp.csc_matrix(M), assemble_tangential_load(tangential, fn, nq))


def assemble_rhs(data: ProblemData, spaces: CouplingSpaces, C0: np.ndarray | None = None,
                 M: sp.csr_matrix | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Volume and boundary right-hand sides.

    ``F_j = <f, b_j> + <phi0, pi_D b_j>`` and
    ``Gb_i = <psi_i, (1/2 + C0) u0_h>`` with ``u0_h`` the L2 projection of
    ``u0`` onto the tangential space and ``C0`` the flux x tangential pairing
    of the double layer (needed only when ``u0`` is given).
    """
    V1 = spaces.one_forms
    F = np.zeros(V1.dim)
    if data.f is not None:
        F += assemble_load(V1, data.f)
    if data.phi0 is not None:
        F += spaces.dirichlet.T @ assemble_tangential_load(spaces.surface.tangential, data.phi0)
    Gb = np.zeros(spaces.n_bem)
    if data.u0 is not None:
        if C0 is None:
            raise FemError("a Dirichlet jump needs the assembled C0 pairing")
        M = surface_mass_pairing(spaces.surface.flux, spaces.surface.tangential) if M is None else M
        u0h = project_tangential(spaces.surface.tangential, data.u0)
        Gb = spaces.solenoidal.matrix.T @ (0.5 * (M @ u0h) + C0 @ u0h)
    return F, np.asarray(Gb)


def check_consistency(f: VolumeField | None, vc: VolumeComplex, nq: int | None = None) -> float:
    """Discrete divergence defect ``max_k |<f, grad chi_k>|`` of a volume source."""
    if f is None:
        return 0.0
    load = assemble_load(vc.spaces[1], f, nq)
    return float(np.max(np.abs(vc.grad.matrix.T @ load))) if load.size else 0.0


def rhs_defect(F: np.ndarray, vc: VolumeComplex) -> float:
    """``max |G^T F|``: compatibility of a full volume right-hand side with the gradient kernel."""
    return float(np.max(np.abs(vc.grad.matrix.T @ F))) if F.size else 0.0
