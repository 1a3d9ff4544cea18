"""Block diagonal and block triangular preconditioners for the Biot system.

Every preconditioner inverts (exactly or approximately) the two diagonal
blocks ``A_u`` and ``S = tau A_p + eta h^2 L_p + (alpha^2 / zeta^2) M``.
The triangular shapes add the coupling ``-alpha B`` (lower) or
``alpha B^T`` (upper) and are meant for the system with its second block row
negated; :meth:`BlockPreconditioner.system_operator` hands out the matching
operator.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .assembly import BlockSystem, ConfigurationError
from .krylov import DefinitenessError, SolveConfig, fgmres, pcg
from .sparse import CsrMatrix

__all__ = [
    "Shape",
    "BlockMode",
    "InnerSolve",
    "PreconditionerSpec",
    "InnerSolveError",
    "ExactSolver",
    "SymmetricGaussSeidel",
    "Jacobi",
    "BlockPreconditioner",
    "exact_block_solver",
    "build_preconditioner",
    "preset",
    "PRESETS",
]


class Shape(str, enum.Enum):
    DIAGONAL = "diagonal"
    LOWER = "lower"
    UPPER = "upper"


class BlockMode(str, enum.Enum):
    EXACT = "exact"
    INEXACT = "inexact"


class InnerSolveError(RuntimeError):
    def __init__(self, block: str, message: str):
        super().__init__(f"inner solve on block {block!r} failed: {message}")
        self.block = block


@dataclass(frozen=True)
class InnerSolve:
    """How one diagonal block is inverted.

    method : ``"direct"`` (sparse factorization), ``"cg"`` or ``"gmres"``
        (Krylov to relative tolerance `tol`, preconditioned by `smoother`), or
        ``"sweeps"`` (a fixed number of `smoother` sweeps, a fixed linear map).
    smoother : ``"sgs"`` (symmetric Gauss-Seidel) or ``"jacobi"``.
    """

    method: str = "direct"
    smoother: str = "sgs"
    tol: float = 1e-2
    maxit: int = 1000
    sweeps: int = 3

    def __post_init__(self):
        if self.method not in ("direct", "cg", "gmres", "sweeps"):
            raise ConfigurationError(f"unknown inner method {self.method!r}")
        if self.smoother not in ("sgs", "jacobi"):
            raise ConfigurationError(f"unknown smoother {self.smoother!r}")

    @property
    def is_linear(self) -> bool:
        return self.method in ("direct", "sweeps")


EXACT_INNER = InnerSolve("direct")
INEXACT_U = InnerSolve("cg", "sgs", tol=1e-2)
INEXACT_P = InnerSolve("cg", "jacobi", tol=1e-2)
SWEEPS_U = InnerSolve("sweeps", "sgs", sweeps=3)
SWEEPS_P = InnerSolve("sweeps", "sgs", sweeps=3)


@dataclass(frozen=True)
class PreconditionerSpec:
    shape: Shape = Shape.DIAGONAL
    block_mode: BlockMode = BlockMode.EXACT
    inner_u: Optional[InnerSolve] = None
    inner_p: Optional[InnerSolve] = None
    fixed_stress: bool = False
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        object.__setattr__(self, "block_mode", BlockMode(self.block_mode))
        if self.fixed_stress and self.shape != Shape.UPPER:
            raise ConfigurationError("fixed-stress splitting is an upper-triangular preconditioner")
        exact = self.block_mode == BlockMode.EXACT
        if self.inner_u is None:
            object.__setattr__(self, "inner_u", EXACT_INNER if exact else INEXACT_U)
        if self.inner_p is None:
            object.__setattr__(self, "inner_p", EXACT_INNER if exact else INEXACT_P)
        if exact and not (self.inner_u.method == "direct" and self.inner_p.method == "direct"):
            raise ConfigurationError("exact preconditioners use direct block solves")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        prefix = "B" if self.block_mode == BlockMode.EXACT else "M"
        return prefix + self.shape.value[0].upper() + ("-FS" if self.fixed_stress else "")

    @property
    def negated(self) -> bool:
        return self.shape != Shape.DIAGONAL

    @property
    def is_linear(self) -> bool:
        return self.inner_u.is_linear and self.inner_p.is_linear


PRESETS = {
    "BD": PreconditionerSpec(Shape.DIAGONAL, BlockMode.EXACT, name="BD"),
    "BL": PreconditionerSpec(Shape.LOWER, BlockMode.EXACT, name="BL"),
    "BU": PreconditionerSpec(Shape.UPPER, BlockMode.EXACT, name="BU"),
    "MD": PreconditionerSpec(Shape.DIAGONAL, BlockMode.INEXACT, name="MD"),
    "ML": PreconditionerSpec(Shape.LOWER, BlockMode.INEXACT, name="ML"),
    "MU": PreconditionerSpec(Shape.UPPER, BlockMode.INEXACT, name="MU"),
    "FS": PreconditionerSpec(Shape.UPPER, BlockMode.EXACT, fixed_stress=True, name="FS"),
    # fixed linear map, usable inside MINRES
    "MD-sweeps": PreconditionerSpec(
        Shape.DIAGONAL, BlockMode.INEXACT, SWEEPS_U, SWEEPS_P, name="MD-sweeps"
    ),
}


def preset(name: str, inner_tol: Optional[float] = None) -> PreconditionerSpec:
    try:
        spec = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preconditioner {name!r}; choose from {sorted(PRESETS)}") from None
    if inner_tol is not None and spec.block_mode == BlockMode.INEXACT:
        spec = replace(
            spec,
            inner_u=replace(spec.inner_u, tol=inner_tol),
            inner_p=replace(spec.inner_p, tol=inner_tol),
        )
    return spec


class ExactSolver:
    """Sparse symmetric factorization of an SPD matrix.

    SuperLU runs in symmetric mode with diagonal pivoting only, so the
    diagonal of ``U`` holds the pivots of a symmetrically permuted ``LDL^T``
    factorization; a non-positive pivot means the matrix is not SPD.
    """

    def __init__(self, A):
        m = A.scipy if isinstance(A, CsrMatrix) else sps.csr_matrix(A)
        self.n = m.shape[0]
        if self.n == 0:
            self._lu = None
            return
        self._lu = splu(
            m.tocsc(),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
        piv = self._lu.U.diagonal()
        if np.any(piv <= 0) or not np.array_equal(self._lu.perm_r, self._lu.perm_c):
            raise DefinitenessError("non-positive pivot in block factorization")

    def __call__(self, b) -> np.ndarray:
        if self._lu is None:
            return np.zeros(0)
        return self._lu.solve(np.asarray(b, dtype=float))


def exact_block_solver(A) -> ExactSolver:
    return ExactSolver(A)


class _Triangular:
    def __init__(self, T):
        self._lu = splu(T.tocsc(), permc_spec="NATURAL", diag_pivot_thresh=0.0,
                        options=dict(SymmetricMode=True))

    def __call__(self, b):
        return self._lu.solve(b)


class SymmetricGaussSeidel:
    """``k`` symmetric Gauss-Seidel sweeps from a zero initial guess."""

    def __init__(self, A, sweeps: int = 1):
        m = A.scipy if isinstance(A, CsrMatrix) else sps.csr_matrix(A)
        self._A = m
        self._d = m.diagonal()
        if np.any(self._d <= 0):
            raise DefinitenessError("non-positive diagonal entry")
        self._lower = _Triangular(sps.tril(m, format="csc"))
        self._upper = _Triangular(sps.triu(m, format="csc"))
        self.sweeps = sweeps

    def _once(self, r):
        return self._upper(self._d * self._lower(r))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        x = self._once(r)
        for _ in range(self.sweeps - 1):
            x = x + self._once(r - self._A @ x)
        return x


class Jacobi:
    def __init__(self, A, sweeps: int = 1):
        m = A.scipy if isinstance(A, CsrMatrix) else sps.csr_matrix(A)
        self._A = m
        self._inv = 1.0 / m.diagonal()
        self.sweeps = sweeps

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        x = self._inv * r
        for _ in range(self.sweeps - 1):
            x = x + self._inv * (r - self._A @ x)
        return x


class _KrylovBlockSolve:
    def __init__(self, A: CsrMatrix, inner: InnerSolve, block: str):
        self._A = A.scipy
        smoother = SymmetricGaussSeidel if inner.smoother == "sgs" else Jacobi
        self._M = smoother(A)
        self._cfg = SolveConfig(tol=inner.tol, maxit=inner.maxit)
        self._method = pcg if inner.method == "cg" else fgmres
        self.block = block
        self.iterations = []

    def __call__(self, b):
        A = self._A
        try:
            x, rep = self._method(lambda v: A @ v, self._M, b, self._cfg)
        except DefinitenessError as exc:
            raise InnerSolveError(self.block, str(exc)) from exc
        if not np.all(np.isfinite(x)) or (not rep.converged and rep.final_residual >= 1.0):
            raise InnerSolveError(self.block, f"no residual reduction after {rep.iterations} iterations")
        self.iterations.append(rep.iterations)
        return x


def _block_solver(A: CsrMatrix, inner: InnerSolve, block: str):
    try:
        if inner.method == "direct":
            return ExactSolver(A)
        if inner.method == "sweeps":
            cls = SymmetricGaussSeidel if inner.smoother == "sgs" else Jacobi
            return cls(A, inner.sweeps)
        return _KrylovBlockSolve(A, inner, block)
    except DefinitenessError as exc:
        raise InnerSolveError(block, str(exc)) from exc


class BlockPreconditioner:
    """Application of one of the block preconditioners to a stacked residual."""

    def __init__(self, system: BlockSystem, spec: PreconditionerSpec,
                 solve_u=None):
        self.system = system
        self.spec = spec
        self.S = system.pressure_block(fixed_stress=spec.fixed_stress)
        self.solve_u = solve_u if solve_u is not None else _block_solver(system.A_u, spec.inner_u, "u")
        self.solve_p = _block_solver(self.S, spec.inner_p, "p")
        self._n_u = system.n_u

    @property
    def negated(self) -> bool:
        return self.spec.negated

    @property
    def shape(self) -> tuple:
        return (self.system.n, self.system.n)

    def system_operator(self):
        return self.system.operator(negated=self.negated)

    def system_rhs(self, rhs) -> np.ndarray:
        """Bring a right-hand side of the symmetric system to this convention."""
        rhs = np.array(rhs, dtype=float, copy=True)
        if self.negated:
            rhs[self._n_u:] *= -1.0
        return rhs

    def apply(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        ru, rp = r[: self._n_u], r[self._n_u:]
        a = self.system.alpha
        shape = self.spec.shape
        if shape == Shape.DIAGONAL:
            zu = self.solve_u(ru)
            zp = self.solve_p(rp)
        elif shape == Shape.LOWER:
            zu = self.solve_u(ru)
            zp = self.solve_p(rp + a * (self.system.B @ zu))
        else:
            zp = self.solve_p(rp)
            zu = self.solve_u(ru - a * (self.system.B.scipy.T @ zp))
        return np.concatenate([zu, zp])

    __call__ = apply

    def todense(self) -> np.ndarray:
        """Dense matrix of the (linear) preconditioner, column by column."""
        if not self.spec.is_linear:
            raise ConfigurationError("a preconditioner with inner Krylov solves is not a fixed matrix")
        n = self.system.n
        eye = np.eye(n)
        return np.column_stack([self.apply(eye[:, j]) for j in range(n)])

    def inverse_dense(self) -> np.ndarray:
        """Dense block matrix whose inverse the exact preconditioner applies."""
        sysm = self.system
        Au = sysm.A_u.toarray()
        S = self.S.toarray()
        aB = sysm.alpha * sysm.B.toarray()
        zero = np.zeros_like(aB)
        if self.spec.shape == Shape.DIAGONAL:
            return np.block([[Au, zero.T], [zero, S]])
        if self.spec.shape == Shape.LOWER:
            return np.block([[Au, zero.T], [-aB, S]])
        return np.block([[Au, aB.T], [zero, S]])


def build_preconditioner(system: BlockSystem, spec: PreconditionerSpec, solve_u=None) -> BlockPreconditioner:
    return BlockPreconditioner(system, spec, solve_u=solve_u)
