"""Dense spectral verification of the preconditioner theory.

Everything here forms dense matrices and is meant for desk-scale problems
(a few thousand dofs).  Parameter independence is checked as flatness of the
measured constants over a sweep, since only existence of uniform bounds is
known, not their values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .assembly import (
    BlockSystem,
    assemble_divdiv,
    assemble_divergence,
    assemble_pressure_matrices,
    assemble_strain_gram,
    assemble_vector_h1,
)
from .krylov import SolveReport
from .mesh import Mesh
from .precond import BlockPreconditioner, Shape

__all__ = [
    "SizeError",
    "SingularityError",
    "SpectralReport",
    "FovReport",
    "InfSupReport",
    "DEFAULT_BUDGET",
    "norm_gram",
    "condition_number",
    "condition_number_diag",
    "fov_constants",
    "fov_for_preconditioner",
    "infsup_constant",
    "minres_bound_check",
    "gmres_bound_check",
    "inner_contraction",
    "stability_inequality_ratios",
]

DEFAULT_BUDGET = 4000


class SizeError(ValueError):
    """Problem too large for a dense eigensolve; use a smaller mesh."""


class SingularityError(ArithmeticError):
    pass


def _check_budget(n: int, budget: int) -> None:
    if n > budget:
        raise SizeError(f"{n} dofs exceed the dense eigensolve budget of {budget}; use a smaller mesh")


@dataclass
class SpectralReport:
    kappa: float
    sigma_est: Optional[float] = None
    upsilon_est: Optional[float] = None
    infsup_gamma: Optional[float] = None
    parameters: dict = field(default_factory=dict)
    eig_min: Optional[float] = None
    eig_max: Optional[float] = None


@dataclass
class FovReport:
    sigma: float
    upsilon: float
    theory_violation: bool

    @property
    def rate(self) -> float:
        """GMRES contraction factor per iteration, ``(1 - sigma^2/upsilon^2)^(1/2)``."""
        return math.sqrt(max(0.0, 1.0 - (self.sigma / self.upsilon) ** 2))


def _params(system: BlockSystem) -> dict:
    return {
        "h": system.h, "tau": system.tau, "K": system.K,
        "nu_lambda": system.lame.lam, "mu": system.lame.mu,
        "delta": system.delta, "alpha": system.alpha,
    }


def norm_gram(system: BlockSystem, fixed_stress: bool = False) -> np.ndarray:
    """Dense ``blockdiag(A_u, S)``: Gram matrix of the well-posedness norm."""
    return sla.block_diag(system.A_u.toarray(), system.pressure_block(fixed_stress).toarray())


def condition_number(A: np.ndarray, D: np.ndarray) -> tuple:
    """Spectrum of ``D^{-1} A`` for symmetric `A` and SPD `D`.

    Returns ``(kappa, eigenvalues)`` with ``kappa = max|l| / min|l|``.
    """
    ev = sla.eigh(A, D, eigvals_only=True)
    mag = np.abs(ev)
    if mag.min() == 0.0:
        raise SingularityError("preconditioned operator is singular")
    return float(mag.max() / mag.min()), ev


def condition_number_diag(
    system: BlockSystem,
    precond: Optional[BlockPreconditioner] = None,
    budget: int = DEFAULT_BUDGET,
) -> SpectralReport:
    """Condition number of the block-diagonally preconditioned symmetric system.

    With no `precond` (or an exact diagonal one) the metric is
    ``blockdiag(A_u, S)``; otherwise the dense preconditioner matrix is
    formed and its inverse used as the metric.  ``infsup_gamma`` receives the
    smallest singular value of the operator in the well-posedness norm.
    """
    _check_budget(system.n, budget)
    A = system.operator().toarray()
    D = norm_gram(system)
    if precond is None or (precond.spec.shape == Shape.DIAGONAL and precond.spec.inner_u.method == "direct"):
        metric = D
    else:
        if precond.spec.shape != Shape.DIAGONAL:
            raise ValueError("condition numbers are defined for block-diagonal preconditioners")
        P = precond.todense()
        metric = np.linalg.inv(0.5 * (P + P.T))
    kappa, ev = condition_number(A, metric)
    gamma = float(np.abs(sla.eigh(A, D, eigvals_only=True)).min()) if metric is not D else float(np.abs(ev).min())
    return SpectralReport(
        kappa=kappa, infsup_gamma=gamma, parameters=_params(system),
        eig_min=float(ev.min()), eig_max=float(ev.max()),
    )


def fov_constants(T: np.ndarray, D: np.ndarray, side: str = "left") -> FovReport:
    """Field-of-values constants of a preconditioned operator.

    `T` is ``P A`` (left) or ``A P`` (right); `D` is the Gram matrix of the
    well-posedness norm.  The left case measures in the inner product
    ``(x, y)_D``, the right case in ``(x, y)_{D^{-1}}``.  ``sigma`` is the
    smallest eigenvalue of the symmetric part and ``upsilon`` the largest
    singular value of ``T`` in that metric.
    """
    L = np.linalg.cholesky(D)
    if side == "left":
        # metric D = L L^T: T~ = L^T T L^{-T}
        Tt = sla.solve_triangular(L, (L.T @ T).T, lower=True).T
    elif side == "right":
        # metric D^{-1} = L^{-T} L^{-1}: T~ = L^{-1} T L
        Tt = sla.solve_triangular(L, T @ L, lower=True)
    else:
        raise ValueError("side must be 'left' or 'right'")
    sym = 0.5 * (Tt + Tt.T)
    sigma = float(sla.eigh(sym, eigvals_only=True, subset_by_index=[0, 0])[0])
    upsilon = float(sla.svdvals(Tt)[0])
    return FovReport(sigma, upsilon, theory_violation=sigma <= 0)


def fov_for_preconditioner(precond: BlockPreconditioner, budget: int = DEFAULT_BUDGET) -> FovReport:
    """FOV constants of an exact triangular preconditioner on the negated system.

    Lower-triangular preconditioners act from the left, upper-triangular ones
    from the right, each in the norm induced by ``blockdiag(A_u, S)``.
    """
    system = precond.system
    _check_budget(system.n, budget)
    if precond.spec.shape == Shape.DIAGONAL:
        raise ValueError("FOV constants are measured for triangular preconditioners")
    A = system.operator(negated=True).toarray()
    Pinv = precond.inverse_dense()
    D = norm_gram(system, fixed_stress=precond.spec.fixed_stress)
    if precond.spec.shape == Shape.LOWER:
        return fov_constants(np.linalg.solve(Pinv, A), D, "left")
    return fov_constants(np.linalg.solve(Pinv.T, A.T).T, D, "right")


@dataclass
class InfSupReport:
    """Discrete inf-sup measurements for P1-P1 on a mesh.

    gamma_B0 : stabilized constant, ``min sqrt((|B^T q|^2_{H1^-1} + h^2 |grad q|^2) / |q|^2)``
        over mean-free ``q``; ``None`` when no displacement dof is free.
    xi0_proxy : largest deficit ``(gamma_B0 |q| - sup_v (div v, q)/|v|_1) / (h |grad q|)``
        over the eigenmodes of the unstabilized problem.
    raw_gamma : unstabilized constant over mean-free ``q`` (zero when
        spurious modes exist).
    raw_nonzero_gamma : smallest non-zero unstabilized value.
    n_spurious : number of mean-free pressure modes with zero unstabilized value.
    """

    gamma_B0: Optional[float]
    xi0_proxy: Optional[float]
    raw_gamma: Optional[float] = None
    raw_nonzero_gamma: Optional[float] = None
    n_spurious: int = 0
    h: float = 0.0


def infsup_constant(mesh: Mesh, fixed_vertices: Optional[np.ndarray] = None,
                    budget: int = DEFAULT_BUDGET) -> InfSupReport:
    """Measure the weak inf-sup condition for P1-P1 with ``u = 0`` on the boundary."""
    d = mesh.dim
    if fixed_vertices is None:
        fixed_vertices = np.unique(mesh.boundary_facets)
    fixed = (np.asarray(fixed_vertices)[:, None] * d + np.arange(d)).ravel()
    free = np.setdiff1d(np.arange(mesh.num_vertices * d), fixed)
    if free.size == 0:
        return InfSupReport(None, None, h=mesh.h)
    _check_budget(free.size + mesh.num_vertices, budget)

    B = assemble_divergence(mesh).toarray()[:, free]
    H1 = assemble_vector_h1(mesh).toarray()[np.ix_(free, free)]
    _, L, M = assemble_pressure_matrices(mesh, 1.0)
    L, M = L.toarray(), M.toarray()
    schur = B @ np.linalg.solve(H1, B.T)

    # restrict to the M-orthogonal complement of constants
    m1 = M @ np.ones(mesh.num_vertices)
    Q = sla.null_space(m1[None, :])
    Mq = Q.T @ M @ Q
    raw_ev, raw_vec = sla.eigh(Q.T @ schur @ Q, Mq)
    stab_ev = sla.eigh(Q.T @ (schur + mesh.h ** 2 * L) @ Q, Mq, eigvals_only=True)
    if stab_ev.max() <= 0:
        raise SingularityError("all inf-sup eigenvalues vanish")
    gamma = math.sqrt(max(stab_ev.min(), 0.0))

    raw_ev = np.clip(raw_ev, 0.0, None)
    thresh = 1e-10 * raw_ev.max()
    spurious = raw_ev <= thresh
    raw_nonzero = math.sqrt(raw_ev[~spurious].min()) if np.any(~spurious) else None

    modes = Q @ raw_vec
    qnorm = np.sqrt(np.einsum("ik,ij,jk->k", modes, M, modes))
    grad = np.sqrt(np.clip(np.einsum("ik,ij,jk->k", modes, L, modes), 0.0, None))
    sup = np.sqrt(raw_ev) * qnorm
    deficit = (gamma * qnorm - sup) / (mesh.h * grad)
    return InfSupReport(
        gamma_B0=gamma,
        xi0_proxy=float(max(deficit.max(), 0.0)),
        raw_gamma=math.sqrt(raw_ev.min()),
        raw_nonzero_gamma=raw_nonzero,
        n_spurious=int(spurious.sum()),
        h=mesh.h,
    )


def minres_bound_check(report: SolveReport, kappa: float, slack: float = 1e-8) -> bool:
    """Every residual satisfies ``r_m <= 2 rho^m r_0`` with ``rho = (kappa-1)/(kappa+1)``."""
    rho = (kappa - 1.0) / (kappa + 1.0)
    return all(r <= 2.0 * rho ** m + slack for m, r in enumerate(report.residuals))


def gmres_bound_check(report: SolveReport, sigma: float, upsilon: float, slack: float = 1e-8) -> bool:
    """Every residual satisfies ``r_m <= (1 - sigma^2/upsilon^2)^(m/2) r_0``."""
    rate = math.sqrt(max(0.0, 1.0 - (sigma / upsilon) ** 2))
    return all(r <= rate ** m + slack for m, r in enumerate(report.residuals))


def inner_contraction(A, H) -> float:
    """``||I - H A||_A`` for SPD `A` and a symmetric linear approximate inverse `H`.

    Both are dense arrays; equals ``max |1 - lambda(H A)|``.
    """
    A = np.asarray(A)
    H = 0.5 * (np.asarray(H) + np.asarray(H).T)
    ev = sla.eigh(A, np.linalg.inv(H), eigvals_only=True)
    return float(np.abs(1.0 - ev).max())


def stability_inequality_ratios(system: BlockSystem, samples: int = 200, seed: int = 0) -> dict:
    """Rayleigh quotients behind the continuity and Korn-type bounds.

    For random displacement vectors ``v`` on the free dofs returns arrays

    - ``div``: ``zeta^2 |div v|^2 / a(v, v)``
    - ``Bv``: ``zeta^2 (Bv)^T M^{-1} (Bv) / a(v, v)``
    - ``korn_lower``: ``2 mu |eps(v)|^2 / a(v, v)``
    - ``korn_upper``: ``a(v, v) / ((2 mu + d lambda) |eps(v)|^2)``
    - ``div_eps``: ``|div v|^2 / (d |eps(v)|^2)``

    all of which must not exceed one.
    """
    mesh = system.mesh
    if mesh is None:
        raise ValueError("system carries no mesh")
    free = system.free_u
    E = assemble_strain_gram(mesh).scipy[free][:, free]
    Dd = assemble_divdiv(mesh).scipy[free][:, free]
    from .precond import ExactSolver

    Minv = ExactSolver(system.M_p)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((samples, system.n_u))
    lam, mu, d = system.lame.lam, system.lame.mu, system.dim
    out = {k: np.empty(samples) for k in ("div", "Bv", "korn_lower", "korn_upper", "div_eps")}
    for k, v in enumerate(V):
        a = float(v @ (system.A_u @ v))
        e = float(v @ (E @ v))
        dv = float(v @ (Dd @ v))
        bv = system.B @ v
        out["div"][k] = system.zeta_sq * dv / a
        out["Bv"][k] = system.zeta_sq * float(bv @ Minv(bv)) / a
        out["korn_lower"][k] = 2 * mu * e / a
        out["korn_upper"][k] = a / ((2 * mu + d * lam) * e)
        out["div_eps"][k] = dv / (d * e)
    return out
