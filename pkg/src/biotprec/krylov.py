"""Matrix-free Krylov solvers with residual histories.

Operators and preconditioners are anything :func:`as_operator` accepts:
callables ``x -> y``, :class:`~biotprec.sparse.CsrMatrix`,
:class:`~biotprec.sparse.BlockOperator`, scipy sparse matrices or dense
arrays.  Every solver returns ``(x, SolveReport)``; non-convergence is
reported, not raised.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sps

from .sparse import BlockOperator, CsrMatrix

__all__ = [
    "DefinitenessError",
    "SolveConfig",
    "SolveReport",
    "as_operator",
    "pminres",
    "fgmres",
    "gmres_left",
    "pcg",
    "richardson",
    "write_history_csv",
]


class DefinitenessError(ArithmeticError):
    """An operator assumed positive definite produced a non-positive form."""


@dataclass(frozen=True)
class SolveConfig:
    tol: float = 1e-6
    maxit: int = 500
    restart: int = 0

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.maxit < 1:
            raise ValueError("maxit must be at least 1")
        if self.restart < 0:
            raise ValueError("restart must be non-negative")


@dataclass
class SolveReport:
    """Outcome of one solve.

    ``residuals[k]`` is the relative residual after ``k`` iterations, in the
    norm the method minimizes, so ``residuals[0] == 1``.
    """

    iterations: int = 0
    residuals: list = field(default_factory=lambda: [1.0])
    converged: bool = False
    final_residual: float = 1.0
    method: str = ""
    true_residual: Optional[float] = None


Operator = Union[Callable, CsrMatrix, BlockOperator, np.ndarray, sps.spmatrix]


def as_operator(op) -> Callable:
    if op is None:
        return lambda x: np.array(x, dtype=float, copy=True)
    if isinstance(op, BlockOperator):
        return op.apply
    if isinstance(op, CsrMatrix):
        m = op.scipy
        return lambda x: m @ x
    if sps.issparse(op) or isinstance(op, np.ndarray):
        return lambda x: op @ x
    if callable(op):
        return op
    raise TypeError(f"cannot use {type(op).__name__} as a linear operator")


def _true_residual(A, b, x) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(b - A(x)) / (nb if nb > 0 else 1.0))


def pminres(op, M, b, cfg: SolveConfig = SolveConfig(), x0=None):
    """Preconditioned MINRES for symmetric `op` and SPD preconditioner `M`.

    Minimizes ``||r||_M = <M r, r>^(1/2)`` over the Krylov space of ``M op``.
    """
    A, P = as_operator(op), as_operator(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    report = SolveReport(method="minres")

    v = b - A(x)
    z = P(v)
    g2 = float(z @ v)
    if g2 < 0:
        raise DefinitenessError(f"preconditioner is not positive definite (<Mr, r> = {g2:.3e})")
    gamma = math.sqrt(g2)
    if gamma == 0.0:
        report.converged, report.final_residual = True, 0.0
        report.true_residual = _true_residual(A, b, x)
        return x, report

    v_old = np.zeros_like(b)
    w, w_old = np.zeros_like(b), np.zeros_like(b)
    gamma_old = 1.0
    eta = gamma
    s_old, s, c_old, c = 0.0, 0.0, 1.0, 1.0
    norm0 = gamma

    for j in range(1, cfg.maxit + 1):
        z = z / gamma
        Az = A(z)
        delta = float(Az @ z)
        v_new = Az - (delta / gamma) * v - (gamma / gamma_old) * v_old
        z_new = P(v_new)
        g2 = float(z_new @ v_new)
        if g2 < 0:
            if -g2 > 1e-12 * norm0 ** 2:
                raise DefinitenessError(f"preconditioner is not positive definite (<Mv, v> = {g2:.3e})")
            g2 = 0.0
        gamma_new = math.sqrt(g2)

        a0 = c * delta - c_old * s * gamma
        a1 = math.hypot(a0, gamma_new)
        a2 = s * delta + c_old * c * gamma
        a3 = s_old * gamma
        c_new, s_new = a0 / a1, gamma_new / a1
        w_new = (z - a3 * w_old - a2 * w) / a1
        x = x + c_new * eta * w_new
        eta = -s_new * eta

        rel = abs(eta) / norm0
        report.residuals.append(rel)
        report.iterations = j
        if rel <= cfg.tol or gamma_new == 0.0:
            report.converged = True
            break
        v_old, v = v, v_new
        z = z_new
        w_old, w = w, w_new
        gamma_old, gamma = gamma, gamma_new
        s_old, s = s, s_new
        c_old, c = c, c_new

    report.final_residual = report.residuals[-1]
    report.true_residual = _true_residual(A, b, x)
    return x, report


def _arnoldi_cycle(step, r0, inner, tol_abs, maxit, norm0, report):
    """One GMRES cycle in the inner product ``inner(x, y)``.

    ``step(v)`` returns ``(z, w)`` where ``z`` is the search direction added to
    the iterate and ``w`` the image of ``v`` whose residual is minimized.
    Returns the update ``sum y_i z_i`` and the number of iterations taken.
    """
    beta = math.sqrt(inner(r0, r0))
    V = [r0 / beta]
    Z = []
    H = np.zeros((maxit + 1, maxit))
    cs, sn = np.zeros(maxit), np.zeros(maxit)
    g = np.zeros(maxit + 1)
    g[0] = beta
    k = 0
    for j in range(maxit):
        z, w = step(V[j])
        Z.append(z)
        # modified Gram-Schmidt with one reorthogonalization pass
        for _ in range(2):
            for i in range(j + 1):
                hij = inner(w, V[i])
                H[i, j] += hij
                w = w - hij * V[i]
        hn = math.sqrt(max(inner(w, w), 0.0))
        H[j + 1, j] = hn
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        rho = math.hypot(H[j, j], H[j + 1, j])
        if rho == 0.0:
            k = j
            break
        cs[j], sn[j] = H[j, j] / rho, H[j + 1, j] / rho
        H[j, j], H[j + 1, j] = rho, 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        k = j + 1
        report.residuals.append(abs(g[j + 1]) / norm0)
        happy = hn <= 1e-14 * beta
        if abs(g[j + 1]) <= tol_abs or happy:
            break
        V.append(w / hn)
    if k == 0:
        return np.zeros_like(r0), 0
    y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k > 1 else g[:1] / H[0, 0]
    upd = np.zeros_like(r0)
    for i in range(k):
        upd += y[i] * Z[i]
    return upd, k


def _euclid(x, y) -> float:
    return float(x @ y)


def fgmres(op, M_right=None, b=None, cfg: SolveConfig = SolveConfig(), x0=None, inner=None):
    """Flexible GMRES with a right preconditioner that may vary per call.

    Minimizes ``||b - op x||_W`` for the SPD matrix or operator `inner`
    (Euclidean when omitted).  Passing the inverse of the norm Gram matrix
    measures the residual in the dual of the energy norm, which controls the
    error far better than the Euclidean norm when the blocks are badly scaled.
    """
    A, P = as_operator(op), as_operator(M_right)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    report = SolveReport(method="fgmres")
    if inner is None:
        ip = _euclid
    else:
        W = as_operator(inner)
        ip = lambda u, v: float(u @ W(v))
    r = b - A(x)
    n2 = ip(r, r)
    if n2 < 0:
        raise DefinitenessError("inner-product operator is not positive definite")
    norm0 = math.sqrt(n2)
    if norm0 == 0.0:
        report.converged, report.final_residual, report.true_residual = True, 0.0, 0.0
        return x, report

    def step(v):
        z = P(v)
        return z, A(z)

    cycle = cfg.restart or cfg.maxit
    while report.iterations < cfg.maxit:
        m = min(cycle, cfg.maxit - report.iterations)
        upd, k = _arnoldi_cycle(step, r, ip, cfg.tol * norm0, m, norm0, report)
        x = x + upd
        report.iterations += k
        if report.residuals[-1] <= cfg.tol or k == 0:
            break
        r = b - A(x)
        if k < m:  # breakdown
            break
    report.final_residual = report.residuals[-1]
    report.converged = report.final_residual <= cfg.tol
    report.true_residual = _true_residual(A, b, x)
    return x, report


def gmres_left(op, M_left=None, b=None, cfg: SolveConfig = SolveConfig(), x0=None, inner=None):
    """Left-preconditioned GMRES.

    Minimizes ``||M_left (b - op x)||_W`` where ``W`` is the SPD matrix or
    operator passed as `inner` (Euclidean when omitted).
    """
    A, P = as_operator(op), as_operator(M_left)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    report = SolveReport(method="gmres_left")
    if inner is None:
        ip = _euclid
    else:
        W = as_operator(inner)
        ip = lambda u, v: float(u @ W(v))

    r = P(b - A(x))
    n2 = ip(r, r)
    if n2 < 0:
        raise DefinitenessError("inner-product operator is not positive definite")
    norm0 = math.sqrt(n2)
    if norm0 == 0.0:
        report.converged, report.final_residual = True, 0.0
        report.true_residual = _true_residual(A, b, x)
        return x, report

    def step(v):
        return v, P(A(v))

    cycle = cfg.restart or cfg.maxit
    while report.iterations < cfg.maxit:
        m = min(cycle, cfg.maxit - report.iterations)
        upd, k = _arnoldi_cycle(step, r, ip, cfg.tol * norm0, m, norm0, report)
        x = x + upd
        report.iterations += k
        if report.residuals[-1] <= cfg.tol or k == 0 or k < m:
            break
        r = P(b - A(x))
    report.final_residual = report.residuals[-1]
    report.converged = report.final_residual <= cfg.tol
    report.true_residual = _true_residual(A, b, x)
    return x, report


def pcg(op, M=None, b=None, cfg: SolveConfig = SolveConfig(), x0=None):
    """Preconditioned conjugate gradients; stops on ``||r|| <= tol ||r0||``."""
    A, P = as_operator(op), as_operator(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    report = SolveReport(method="pcg")
    r = b - A(x)
    norm0 = float(np.linalg.norm(r))
    if norm0 == 0.0:
        report.converged, report.final_residual, report.true_residual = True, 0.0, 0.0
        return x, report
    z = P(r)
    rz = float(r @ z)
    if rz < 0:
        raise DefinitenessError(f"preconditioner is not positive definite (<Mr, r> = {rz:.3e})")
    d = z.copy()
    for k in range(1, cfg.maxit + 1):
        Ad = A(d)
        dAd = float(d @ Ad)
        if dAd <= 0:
            raise DefinitenessError(f"operator is not positive definite (<Ad, d> = {dAd:.3e})")
        a = rz / dAd
        x += a * d
        r -= a * Ad
        rel = float(np.linalg.norm(r)) / norm0
        report.residuals.append(rel)
        report.iterations = k
        if rel <= cfg.tol:
            report.converged = True
            break
        z = P(r)
        rz_new = float(r @ z)
        if rz_new < 0:
            raise DefinitenessError(f"preconditioner is not positive definite (<Mr, r> = {rz_new:.3e})")
        d = z + (rz_new / rz) * d
        rz = rz_new
    report.final_residual = report.residuals[-1]
    report.true_residual = _true_residual(A, b, x)
    return x, report


def richardson(op, M=None, b=None, cfg: SolveConfig = SolveConfig(), x0=None):
    """Preconditioned Richardson iteration ``x += M (b - op x)``."""
    A, P = as_operator(op), as_operator(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    report = SolveReport(method="richardson")
    r = b - A(x)
    norm0 = float(np.linalg.norm(r))
    if norm0 == 0.0:
        report.converged, report.final_residual, report.true_residual = True, 0.0, 0.0
        return x, report
    for k in range(1, cfg.maxit + 1):
        x = x + P(r)
        r = b - A(x)
        rel = float(np.linalg.norm(r)) / norm0
        report.residuals.append(rel)
        report.iterations = k
        if not np.isfinite(rel):
            break
        if rel <= cfg.tol:
            report.converged = True
            break
    report.final_residual = report.residuals[-1]
    report.true_residual = report.final_residual * norm0 / (np.linalg.norm(b) or 1.0)
    return x, report


def write_history_csv(report: SolveReport, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["iteration", "relative_residual"])
        for k, r in enumerate(report.residuals):
            out.writerow([k, repr(float(r))])
