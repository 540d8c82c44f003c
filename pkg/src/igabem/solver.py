"""Coupled FEM-BEM block system, gauged linear solves and the Picard loop.

Unknowns are the volume 1-form coefficients ``u`` and the solenoidal
coordinates ``phi`` of the exterior Neumann datum. The block system reads

    [ K            -T^T ] [u  ]   [F ]
    [ T/2 + C       A0  ] [phi] = [Gb]

with ``T = S^T M D`` the trace pairing and ``C = S^T C0 D`` the double layer
pairing composed with the Dirichlet trace. ``K`` is singular on discrete
gradients; the default gauge runs BiCGSTAB on the singular system from a zero
initial guess, the alternative replaces ``K`` by ``K + eps M1``.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .bem import BoundaryOperatorSet, Density, eval_representation, solid_angle_indicator
from .derham import assemble_mass
from .fem import (
    CouplingSpaces,
    ProblemData,
    ReluctivityModel,
    assemble_curl_curl,
    assemble_rhs,
    assemble_trace_pairing,
    curl_energy_norm,
    project_tangential,
    rhs_defect,
)
from .geometry import GeometryError

log = logging.getLogger(__name__)

GAUGES = ("consistent-krylov", "epsilon-regularization")


class SolverError(RuntimeError):
    """Failure of a linear or nonlinear solve; carries the iteration history."""

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history = list(history or [])


@dataclass(frozen=True)
class SolveOptions:
    """Linear solver settings.

    ``eps_method`` selects a sparse direct (``"direct"``) or BiCGSTAB
    (``"krylov"``) solve of the regularized system. ``consistency_tol`` bounds
    ``max |G^T F| / (1 + max |F|)`` on the consistent-Krylov path.
    """

    tol: float = 1e-6
    maxit: int = 20000
    gauge: str = "consistent-krylov"
    eps: float = 1e-8
    eps_method: str = "direct"
    deterministic: bool = True
    check_consistency: bool = True
    consistency_tol: float = 1e-8

    def __post_init__(self) -> None:
        if not self.tol > 0.0:
            raise ValueError("solver tolerance must be positive")
        if self.maxit < 1:
            raise ValueError("maxit must be at least 1")
        if self.gauge not in GAUGES:
            raise ValueError(f"gauge must be one of {GAUGES}")
        if self.gauge == "epsilon-regularization" and not 0.0 < self.eps <= 1e-4:
            raise ValueError("eps must lie in (0, 1e-4]")
        if self.eps_method not in ("direct", "krylov"):
            raise ValueError("eps_method must be 'direct' or 'krylov'")


@dataclass(frozen=True)
class PicardOptions:
    """Picard loop settings: increment tolerance, iteration cap, initial damping."""

    tol: float = 1e-8
    maxit: int = 50
    damping: float = 1.0
    max_halvings: int = 3
    inner_factor: float = 1e-3

    def __post_init__(self) -> None:
        if not self.tol > 0.0 or self.maxit < 1 or not 0.0 < self.damping <= 1.0:
            raise ValueError("invalid Picard options")


@dataclass(eq=False)
class BlockSystem:
    """Assembled coupled system with its right-hand side."""

    K: sp.csr_matrix
    T: sp.csr_matrix
    C: sp.csr_matrix
    A0: np.ndarray
    F: np.ndarray
    Gb: np.ndarray
    spaces: CouplingSpaces | None = None
    ops: BoundaryOperatorSet | None = None
    data: ProblemData | None = None

    def __post_init__(self) -> None:
        n, m = self.K.shape[0], self.A0.shape[0]
        if self.K.shape != (n, n) or self.A0.shape != (m, m):
            raise ValueError("K and A0 must be square")
        if self.T.shape != (m, n) or self.C.shape != (m, n):
            raise ValueError(f"coupling blocks must be {m} x {n}, got {self.T.shape} and {self.C.shape}")
        if self.F.shape != (n,) or self.Gb.shape != (m,):
            raise ValueError("right-hand side does not match the blocks")

    @property
    def n_volume(self) -> int:
        return self.K.shape[0]

    @property
    def n_bem(self) -> int:
        return self.A0.shape[0]

    @property
    def size(self) -> int:
        return self.n_volume + self.n_bem

    @property
    def B(self) -> sp.csr_matrix:
        return sp.csr_matrix(0.5 * self.T + self.C)

    @property
    def rhs(self) -> np.ndarray:
        return np.concatenate([self.F, self.Gb])

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return x[: self.n_volume], x[self.n_volume:]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        u, phi = self.split(x)
        return np.concatenate([self.K @ u - self.T.T @ phi, 0.5 * (self.T @ u) + self.C @ u + self.A0 @ phi])

    def residual(self, u: np.ndarray, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Componentwise residuals ``(F - K u + T^T phi, Gb - (T/2 + C) u - A0 phi)``."""
        r1 = self.F - self.K @ u + self.T.T @ phi
        r2 = self.Gb - 0.5 * (self.T @ u) - self.C @ u - self.A0 @ phi
        return r1, r2

    def residual_norm(self, u: np.ndarray, phi: np.ndarray) -> float:
        r1, r2 = self.residual(u, phi)
        return float(np.sqrt(r1 @ r1 + r2 @ r2))

    def diagonal(self) -> np.ndarray:
        return np.concatenate([self.K.diagonal(), np.diag(self.A0)])

    def with_stiffness(self, K: sp.csr_matrix) -> "BlockSystem":
        return replace(self, K=sp.csr_matrix(K))


@dataclass(eq=False)
class CoupledSolution:
    """Volume coefficients ``u``, solenoidal coordinates ``phi`` and a run log."""

    u: np.ndarray
    phi: np.ndarray
    log: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return int(self.log.get("iterations", 0))

    def interior_neumann(self, spaces: CouplingSpaces, data: ProblemData) -> np.ndarray:
        """Flux coefficients of the exterior Neumann datum ``S phi`` (the interior one is this plus phi0)."""
        return spaces.solenoidal.matrix @ self.phi


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------


def assemble_block(data: ProblemData, spaces: CouplingSpaces, ops: BoundaryOperatorSet,
                   K: sp.csr_matrix | None = None, state: np.ndarray | None = None) -> BlockSystem:
    """Block system of the non-symmetric coupling at one discretization."""
    if ops.A0.shape[0] != spaces.n_bem:
        raise ValueError("boundary operators and coupling spaces have different solenoidal dimensions")
    if ops.C0.shape != (spaces.surface.flux.dim, spaces.surface.tangential.dim):
        raise ValueError("C0 pairing does not match the surface spaces")
    if K is None:
        model = data.reluctivity
        if not model.is_linear and state is None:
            state = np.zeros(spaces.n_volume)
        K = assemble_curl_curl(spaces.volume, model, state)
    T = assemble_trace_pairing(spaces, ops.M)
    D = spaces.dirichlet
    S = spaces.solenoidal.matrix
    cols = np.unique(D.indices)
    Dc = D[:, cols]
    Cd = np.asarray(S.T @ (ops.C0_quotient @ Dc.toarray()))
    C = sp.csr_matrix(sp.csc_matrix(Cd) @ sp.csr_matrix((np.ones(cols.size), (np.arange(cols.size), cols)),
                                                        shape=(cols.size, spaces.n_volume)))
    F, Gb = assemble_rhs(data, spaces, ops.C0_quotient, ops.M)
    return BlockSystem(sp.csr_matrix(K), T, C, np.asarray(ops.A0), F, Gb, spaces, ops, data)


# --------------------------------------------------------------------------
# BiCGSTAB
# --------------------------------------------------------------------------


def bicgstab(matvec, b: np.ndarray, x0: np.ndarray | None = None, tol: float = 1e-6, maxit: int = 1000,
             scale: np.ndarray | None = None, atol: float | None = None):
    """BiCGSTAB with symmetric diagonal scaling.

    Solves ``A x = b`` through ``(D A D) y = D b``, ``x = D y`` with
    ``D = scale``. Convergence is declared when the unscaled residual
    ``||b - A x|| <= atol`` (default ``tol * (1 + ||b||)``); the true residual
    is recomputed at convergence and the iteration restarted if recursion
    drift left it above the target.

    Returns ``(x, history, converged)`` with ``history`` the residual norms.
    """
    n = b.size
    d = np.ones(n) if scale is None else np.asarray(scale, dtype=float)
    target = tol * (1.0 + np.linalg.norm(b)) if atol is None else atol
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    history: list[float] = []
    r_true = b - matvec(x)
    history.append(float(np.linalg.norm(r_true)))
    if history[-1] <= target:
        return x, history, True
    it = 0
    restarts = 0
    while it < maxit and restarts < 20:
        # scaled quantities: y with x = d * y, residual rs = d * r
        rs = d * r_true
        rhat = rs.copy()
        rho_old = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)
        broke = False
        while it < maxit:
            it += 1
            rho = float(rhat @ rs)
            if rho == 0.0:
                broke = True
                break
            beta = (rho / rho_old) * (alpha / omega)
            p = rs + beta * (p - omega * v)
            v = d * matvec(d * p)
            denom = float(rhat @ v)
            if denom == 0.0:
                broke = True
                break
            alpha = rho / denom
            s = rs - alpha * v
            x = x + d * (alpha * p)
            s_norm = float(np.linalg.norm(s / d))
            if s_norm <= target:
                history.append(s_norm)
                rs = s
                break
            t = d * matvec(d * s)
            tt = float(t @ t)
            if tt == 0.0:
                broke = True
                break
            omega = float(t @ s) / tt
            x = x + d * (omega * s)
            rs = s - omega * t
            history.append(float(np.linalg.norm(rs / d)))
            if history[-1] <= target:
                break
            if omega == 0.0:
                broke = True
                break
            rho_old = rho
        r_true = b - matvec(x)
        true_norm = float(np.linalg.norm(r_true))
        if true_norm <= target:
            history.append(true_norm)
            return x, history, True
        restarts += 1
        if broke:
            log.debug("BiCGSTAB breakdown at iteration %d, restarting", it)
    return x, history, False


# --------------------------------------------------------------------------
# linear solve
# --------------------------------------------------------------------------


def _scaling(system: BlockSystem) -> np.ndarray:
    diag = np.abs(system.diagonal())
    diag = np.where(diag > 0.0, diag, 1.0)
    return 1.0 / np.sqrt(diag)


def _consistent_part(system: BlockSystem) -> np.ndarray:
    """``F - M1 G (G^T M1 G)^-1 G^T F``: removes the roundoff-level incompatible part of ``F``."""
    M1 = assemble_mass(system.spaces.one_forms)
    G = system.spaces.volume.grad.matrix.tocsc()[:, 1:]
    lap = splu(sp.csc_matrix(G.T @ M1 @ G))
    return system.F - M1 @ (G @ lap.solve(G.T @ system.F))


def _regularized(system: BlockSystem, eps: float) -> BlockSystem:
    if system.spaces is None:
        raise ValueError("the regularized path needs the coupling spaces")
    M1 = assemble_mass(system.spaces.one_forms)
    return system.with_stiffness(system.K + eps * M1)


def _direct_solve(system: BlockSystem) -> tuple[np.ndarray, np.ndarray]:
    """Schur complement solve with a sparse LU of the (regular) K block."""
    lu = splu(sp.csc_matrix(system.K))
    m = system.n_bem
    TT = system.T.T.tocsc()
    KinvT = np.empty((system.n_volume, m))
    for j in range(0, m, 256):
        KinvT[:, j:j + 256] = lu.solve(TT[:, j:j + 256].toarray())
    KinvF = lu.solve(system.F)
    B = system.B
    schur = system.A0 + B @ KinvT
    phi = np.linalg.solve(schur, system.Gb - B @ KinvF)
    u = KinvF + KinvT @ phi
    return u, phi


def solve_linear(system: BlockSystem, options: SolveOptions | None = None,
                 x0: tuple[np.ndarray, np.ndarray] | None = None) -> CoupledSolution:
    """Solve the block system with the configured gauge strategy.

    Raises ``SolverError`` on an inconsistent right-hand side (consistent
    Krylov path) or when the iteration cap is reached.
    """
    options = options or SolveOptions()
    rhs = system.rhs
    target = options.tol * (1.0 + np.linalg.norm(rhs))
    info = {"gauge": options.gauge, "tol": options.tol}
    if not np.any(rhs) and x0 is None:
        info.update(iterations=0, residual_history=[0.0], residual=0.0)
        return CoupledSolution(np.zeros(system.n_volume), np.zeros(system.n_bem), info)
    if options.gauge == "consistent-krylov":
        if options.check_consistency and system.spaces is not None:
            defect = rhs_defect(system.F, system.spaces.volume)
            info["consistency_defect"] = defect
            if defect > options.consistency_tol * (1.0 + np.abs(system.F).max()):
                raise SolverError(f"inconsistent right-hand side: max |G^T F| = {defect:.3e}")
            work = replace(system, F=_consistent_part(system))
        else:
            work = system
    else:
        work = _regularized(system, options.eps)
        info["eps"] = options.eps
        if options.eps_method == "direct":
            u, phi = _direct_solve(work)
            res = work.residual_norm(u, phi)
            info.update(iterations=1, residual_history=[res], residual=res,
                        unregularized_residual=system.residual_norm(u, phi))
            if res > target:
                raise SolverError(f"regularized direct solve left residual {res:.3e} > {target:.3e}", [res])
            return CoupledSolution(u, phi, info)
    x_init = None if x0 is None else np.concatenate([x0[0], x0[1]])
    x, history, ok = bicgstab(work.matvec, work.rhs, x_init, tol=options.tol, maxit=options.maxit,
                              scale=_scaling(work), atol=target)
    u, phi = system.split(x)
    res = work.residual_norm(u, phi)
    info.update(iterations=len(history) - 1, residual_history=history, residual=res)
    if options.gauge == "epsilon-regularization":
        info["unregularized_residual"] = system.residual_norm(u, phi)
    if work is not system and options.gauge == "consistent-krylov":
        info["removed_incompatible"] = float(np.linalg.norm(system.F - work.F))
    if not ok:
        raise SolverError(f"BiCGSTAB did not reach {target:.3e} in {options.maxit} iterations "
                          f"(last residual {history[-1]:.3e})", history)
    if res > target:
        raise SolverError(f"block residual {res:.3e} exceeds {target:.3e}", history)
    return CoupledSolution(u, phi, info)


# --------------------------------------------------------------------------
# Picard iteration
# --------------------------------------------------------------------------


def phi_norm(system: BlockSystem, phi: np.ndarray) -> float:
    """Energy norm ``sqrt(phi^T A0 phi)`` of solenoidal coordinates."""
    return float(np.sqrt(max(phi @ (system.A0 @ phi), 0.0)))


def nonlinear_residual(system: BlockSystem, u: np.ndarray, phi: np.ndarray) -> float:
    """Block residual with K reassembled at the state ``u``."""
    model = system.data.reluctivity if system.data is not None else ReluctivityModel.identity()
    K = assemble_curl_curl(system.spaces.volume, model, u)
    return system.with_stiffness(K).residual_norm(u, phi)


def solve_picard(system: BlockSystem, options: SolveOptions | None = None,
                 picard: PicardOptions | None = None, C_C0: float | None = None) -> CoupledSolution:
    """Frozen-coefficient fixed point iteration for a nonlinear reluctivity.

    Each step reassembles ``K`` with ``g(|curl u_k|)``, solves the linear
    block system (inner tolerance ``min(tol, inner_factor * picard.tol)``) and
    applies the damping ``theta``. ``theta`` is halved when the increment
    grows, at most ``max_halvings`` times. The increment is
    ``||curl(u_{k+1} - u_k)||_L2 + ||phi_{k+1} - phi_k||_A0``.
    """
    options = options or SolveOptions()
    picard = picard or PicardOptions()
    if system.spaces is None or system.data is None:
        raise ValueError("the Picard loop needs the coupling spaces and problem data")
    model = system.data.reluctivity
    info: dict = {"gauge": options.gauge, "picard_tol": picard.tol}
    if C_C0 is not None:
        ok = model.C_M > 0.25 * C_C0
        info["monotonicity_ok"] = ok
        if not ok:
            warnings.warn(f"C_M = {model.C_M:.3g} does not exceed C_C0/4 = {0.25 * C_C0:.3g}", RuntimeWarning)
    if model.is_linear:
        sol = solve_linear(system, options)
        sol.log.update(info, picard_iterations=1, increments=[0.0], linear_iterations=[sol.iterations])
        return sol
    inner = replace(options, tol=min(options.tol, picard.inner_factor * picard.tol))
    vc = system.spaces.volume
    u = np.zeros(system.n_volume)
    phi = np.zeros(system.n_bem)
    theta = picard.damping
    halvings = 0
    increments: list[float] = []
    thetas: list[float] = []
    linear_its: list[int] = []
    prev = np.inf
    for k in range(1, picard.maxit + 1):
        K = assemble_curl_curl(vc, model, u)
        step = solve_linear(system.with_stiffness(K), inner, x0=(u, phi) if k > 1 else None)
        linear_its.append(step.iterations)
        du = step.u - u
        dphi = step.phi - phi
        full = curl_energy_norm(vc, du) + phi_norm(system, dphi)
        if k > 2 and theta * full > prev and halvings < picard.max_halvings:
            theta *= 0.5
            halvings += 1
        inc = theta * full
        u = u + theta * du
        phi = phi + theta * dphi
        increments.append(inc)
        thetas.append(theta)
        prev = inc
        if inc <= picard.tol:
            info.update(picard_iterations=k, increments=increments, thetas=thetas, linear_iterations=linear_its,
                        iterations=int(sum(linear_its)))
            info["nonlinear_residual"] = nonlinear_residual(system, u, phi)
            return CoupledSolution(u, phi, info)
    raise SolverError(f"Picard iteration did not converge in {picard.maxit} steps "
                      f"(last increment {increments[-1]:.3e})", increments)


# --------------------------------------------------------------------------
# post-processing
# --------------------------------------------------------------------------


def coulomb_gauge(spaces: CouplingSpaces, u: np.ndarray) -> np.ndarray:
    """Remove the L2-orthogonal projection of ``u`` onto discrete gradients.

    The result is the discrete representative with ``div u = 0`` in the
    volume and ``u . n = 0`` on the boundary (both weakly), the gauge the
    exterior representation with vanishing normal trace presumes.
    """
    M1 = assemble_mass(spaces.one_forms)
    G = spaces.volume.grad.matrix.tocsc()[:, 1:]
    lap = splu(sp.csc_matrix(G.T @ M1 @ G))
    return u - G @ lap.solve(G.T @ (M1 @ u))


def exterior_dirichlet(solution: CoupledSolution, spaces: CouplingSpaces, data: ProblemData | None) -> np.ndarray:
    """Tangential coefficients of ``gamma_D u^e = gamma_D u - u0_h`` with ``u`` in the Coulomb gauge."""
    g = spaces.dirichlet @ coulomb_gauge(spaces, solution.u)
    if data is not None and data.u0 is not None:
        g = g - project_tangential(spaces.surface.tangential, data.u0)
    return g


def evaluate_exterior(solution: CoupledSolution, points: np.ndarray, data: ProblemData | None,
                      spaces: CouplingSpaces, ops: BoundaryOperatorSet) -> np.ndarray:
    """Exterior field from the representation formula at strictly exterior points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    inside = solid_angle_indicator(ops.bmesh, points)
    if np.any(inside > 0.5):
        raise GeometryError("evaluate_exterior needs points outside the domain")
    dirichlet = Density(exterior_dirichlet(solution, spaces, data), spaces.surface.tangential)
    neumann = Density(spaces.solenoidal.matrix @ solution.phi, spaces.surface.flux)
    return eval_representation(points, dirichlet, neumann, "exterior", spaces.surface, ops.bmesh)


def write_iteration_log(solution: CoupledSolution, path: str | Path) -> None:
    """CSV with one row per Krylov iteration (and Picard increments when present)."""
    path = Path(path)
    hist = solution.log.get("residual_history", [])
    incs = solution.log.get("increments", [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "index", "value"])
        for i, r in enumerate(hist):
            w.writerow(["krylov_residual", i, repr(float(r))])
        for i, r in enumerate(incs):
            w.writerow(["picard_increment", i + 1, repr(float(r))])
