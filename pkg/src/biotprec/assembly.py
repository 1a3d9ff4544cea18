"""Stabilized P1-P1 assembly of the two-field Biot system.

Displacement dofs are interleaved, ``dof = vertex * dim + component``;
pressure dofs coincide with vertices.  All element integrals are exact for
linear elements.  Homogeneous Dirichlet conditions are imposed by
restricting every block to the free dofs, so the blocks stored on a
:class:`BlockSystem` act on free dofs only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .mesh import BoundaryTag, Mesh
from .sparse import BlockOperator, CsrMatrix, ShapeError, write_matrix_market

__all__ = [
    "AssemblyError",
    "ParameterError",
    "ConfigurationError",
    "PhysicalParams",
    "LameParams",
    "BoundaryConfig",
    "BlockSystem",
    "lame_from_engineering",
    "cell_geometry",
    "assemble_elasticity",
    "assemble_strain_gram",
    "assemble_divdiv",
    "assemble_vector_h1",
    "assemble_divergence",
    "assemble_pressure_matrices",
    "traction_vector",
    "body_force_vector",
    "source_vector",
    "assemble_biot_system",
    "step_rhs",
]


class AssemblyError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class PhysicalParams:
    """Material data in engineering form.

    E : Young modulus (N/m^2); nu : Poisson ratio; K : hydraulic
    conductivity (m^2); alpha : Biot-Willis constant.
    """

    E: float = 3.0e4
    nu: float = 0.2
    K: float = 1.0e-6
    alpha: float = 1.0

    def __post_init__(self):
        if not self.E > 0:
            raise ParameterError(f"E must be positive, got {self.E}")
        if not 0 <= self.nu <= 0.5:
            raise ParameterError(f"nu must lie in [0, 0.5), got {self.nu}")
        if not self.K > 0:
            raise ParameterError(f"K must be positive, got {self.K}")
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class LameParams:
    lam: float
    mu: float
    dim: int
    formula_mode: str = "paper"

    def __post_init__(self):
        if self.lam < 0 or not self.mu > 0:
            raise ParameterError(f"invalid Lame pair lambda={self.lam}, mu={self.mu}")

    @property
    def zeta_sq(self) -> float:
        """Drained bulk modulus ``lambda + 2 mu / d``."""
        return self.lam + 2.0 * self.mu / self.dim

    @property
    def zeta(self) -> float:
        return math.sqrt(self.zeta_sq)


def lame_from_engineering(params: PhysicalParams, dim: int, formula_mode: str = "paper") -> LameParams:
    """Lame coefficients from ``(E, nu)``.

    ``"paper"`` uses ``mu = E / (1 + 2 nu)``, ``"standard"`` uses
    ``mu = E / (2 (1 + nu))``; both share ``lambda = E nu / ((1 - 2 nu)(1 + nu))``.
    """
    E, nu = params.E, params.nu
    if nu >= 0.5:
        raise ParameterError("nu = 0.5 makes lambda infinite")
    lam = E * nu / ((1.0 - 2.0 * nu) * (1.0 + nu))
    if formula_mode == "paper":
        mu = E / (1.0 + 2.0 * nu)
    elif formula_mode == "standard":
        mu = E / (2.0 * (1.0 + nu))
    else:
        raise ParameterError(f"unknown formula_mode {formula_mode!r}")
    return LameParams(lam, mu, dim, formula_mode)


def cell_geometry(mesh: Mesh) -> tuple:
    """Barycentric gradients ``(nc, d+1, d)`` and volumes ``(nc,)`` per cell."""
    d = mesh.dim
    x = mesh.vertices[mesh.cells]
    jac = x[:, 1:, :] - x[:, :1, :]
    det = np.linalg.det(jac)
    scale = np.abs(jac).max(axis=(1, 2)) ** d
    bad = np.flatnonzero(np.abs(det) <= 1e-13 * scale)
    if bad.size:
        raise AssemblyError(f"degenerate cell {int(bad[0])} (zero volume)")
    vol = np.abs(det) / math.factorial(d)
    g = np.transpose(np.linalg.inv(jac), (0, 2, 1))
    grads = np.concatenate([-g.sum(axis=1, keepdims=True), g], axis=1)
    return grads, vol


def _assemble(mesh: Mesh, local: np.ndarray, row_dofs: np.ndarray, col_dofs: np.ndarray, shape) -> CsrMatrix:
    nc, nr, ncl = local.shape
    rows = np.repeat(row_dofs, ncl, axis=1).ravel()
    cols = np.tile(col_dofs, (1, nr)).ravel()
    return CsrMatrix.from_coo(rows, cols, local.ravel(), shape)


def _vector_dofs(mesh: Mesh) -> np.ndarray:
    d = mesh.dim
    return (mesh.cells[:, :, None] * d + np.arange(d)).reshape(mesh.num_cells, -1)


def _elastic_local(grads, vol, two_mu_half: float, lam: float) -> np.ndarray:
    # K[a,i,b,j] = vol * (mu (d_ij Ga.Gb + Ga_j Gb_i) + lam Ga_i Gb_j)
    nc, k, d = grads.shape
    gg = np.einsum("cad,cbd->cab", grads, grads)
    eye = np.eye(d)
    loc = two_mu_half * (
        np.einsum("cab,ij->caibj", gg, eye) + np.einsum("caj,cbi->caibj", grads, grads)
    ) + lam * np.einsum("cai,cbj->caibj", grads, grads)
    loc *= vol[:, None, None, None, None]
    return loc.reshape(nc, k * d, k * d)


def assemble_elasticity(mesh: Mesh, lame: LameParams) -> CsrMatrix:
    """``a(u, v) = 2 mu (eps(u), eps(v)) + lambda (div u, div v)`` on all dofs."""
    grads, vol = cell_geometry(mesh)
    dofs = _vector_dofs(mesh)
    n = mesh.num_vertices * mesh.dim
    return _assemble(mesh, _elastic_local(grads, vol, lame.mu, lame.lam), dofs, dofs, (n, n))


def assemble_strain_gram(mesh: Mesh) -> CsrMatrix:
    """Gram matrix of ``(eps(u), eps(v))``."""
    grads, vol = cell_geometry(mesh)
    dofs = _vector_dofs(mesh)
    n = mesh.num_vertices * mesh.dim
    return _assemble(mesh, _elastic_local(grads, vol, 0.5, 0.0), dofs, dofs, (n, n))


def assemble_divdiv(mesh: Mesh) -> CsrMatrix:
    """Gram matrix of ``(div u, div v)``."""
    grads, vol = cell_geometry(mesh)
    dofs = _vector_dofs(mesh)
    n = mesh.num_vertices * mesh.dim
    return _assemble(mesh, _elastic_local(grads, vol, 0.0, 1.0), dofs, dofs, (n, n))


def assemble_vector_h1(mesh: Mesh) -> CsrMatrix:
    """Gram matrix of the full H^1 inner product for vector fields."""
    _, L, M = assemble_pressure_matrices(mesh, 1.0)
    d = mesh.dim
    scalar = (L.scipy + M.scipy).tocoo()
    rows = (scalar.row[:, None] * d + np.arange(d)).ravel()
    cols = (scalar.col[:, None] * d + np.arange(d)).ravel()
    vals = np.repeat(scalar.data, d)
    n = mesh.num_vertices * d
    return CsrMatrix.from_coo(rows, cols, vals, (n, n))


def assemble_divergence(mesh: Mesh, pressure_mesh: Optional[Mesh] = None) -> CsrMatrix:
    """``B[i, (b, j)] = -(div phi_{b,j}, psi_i)`` for P1 displacement and pressure."""
    if pressure_mesh is not None and pressure_mesh is not mesh:
        if pressure_mesh.cells.shape != mesh.cells.shape or np.any(pressure_mesh.cells != mesh.cells):
            raise AssemblyError("displacement and pressure meshes differ")
    grads, vol = cell_geometry(mesh)
    d = mesh.dim
    k = d + 1
    # -d_j psi_b * int psi_i = -d_j psi_b * vol / (d + 1)
    loc = -(vol / k)[:, None, None] * np.broadcast_to(
        grads.reshape(mesh.num_cells, 1, k * d), (mesh.num_cells, k, k * d)
    )
    return _assemble(
        mesh, np.ascontiguousarray(loc), mesh.cells, _vector_dofs(mesh),
        (mesh.num_vertices, mesh.num_vertices * d),
    )


def assemble_pressure_matrices(mesh: Mesh, K: float) -> tuple:
    """Return ``(A_p, L_p, M_p)``: K-weighted stiffness, Laplacian, mass."""
    if not K > 0:
        raise ParameterError(f"conductivity must be positive, got {K}")
    grads, vol = cell_geometry(mesh)
    d = mesh.dim
    n = mesh.num_vertices
    lap = vol[:, None, None] * np.einsum("cad,cbd->cab", grads, grads)
    mass_ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    mass = vol[:, None, None] * mass_ref
    L = _assemble(mesh, lap, mesh.cells, mesh.cells, (n, n))
    M = _assemble(mesh, mass, mesh.cells, mesh.cells, (n, n))
    return L.scaled(K), L, M


def traction_vector(mesh: Mesh, intensity: float, tags=(BoundaryTag.TOP_LOADED,)) -> np.ndarray:
    """Load of a uniform downward surface traction on the tagged facets.

    Each facet vertex receives ``|F| / d`` times the traction (exact for P1
    traces).  Returned on all displacement dofs.
    """
    d = mesh.dim
    f = np.zeros(mesh.num_vertices * d)
    facets = mesh.facets_with_tag(*tags)
    if len(facets) == 0:
        return f
    share = mesh.facet_measures(facets) / d
    np.add.at(f, facets.ravel() * d + (d - 1), -intensity * np.repeat(share, d))
    return f


def body_force_vector(mesh: Mesh, g: Sequence[float]) -> np.ndarray:
    """``(g, v)`` for a constant body force ``g``, on all displacement dofs."""
    d = mesh.dim
    g = np.asarray(g, dtype=float)
    _, vol = cell_geometry(mesh)
    per_vertex = np.zeros(mesh.num_vertices)
    np.add.at(per_vertex, mesh.cells.ravel(), np.repeat(vol / (d + 1), d + 1))
    return (per_vertex[:, None] * g[None, :]).ravel()


def source_vector(mesh: Mesh, f: float) -> np.ndarray:
    """``(f, q)`` for a constant source ``f``, on all pressure dofs."""
    d = mesh.dim
    _, vol = cell_geometry(mesh)
    out = np.zeros(mesh.num_vertices)
    np.add.at(out, mesh.cells.ravel(), np.repeat(f * vol / (d + 1), d + 1))
    return out


DEFAULT_DRAINED = (BoundaryTag.TOP_LOADED, BoundaryTag.TOP_FREE, BoundaryTag.LATERAL)


@dataclass(frozen=True)
class BoundaryConfig:
    """Which tags carry ``u = 0`` and ``p = 0``, and the surface load."""

    fixed: tuple = (BoundaryTag.BASE,)
    drained: tuple = DEFAULT_DRAINED
    traction: float = 0.1
    loaded: tuple = (BoundaryTag.TOP_LOADED,)


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """Assembled stabilized Biot system restricted to free dofs.

    The operator is ``[[A_u, alpha B^T], [alpha B, -(tau A_p + eta h^2 L_p)]]``.
    """

    A_u: CsrMatrix
    B: CsrMatrix
    A_p: CsrMatrix
    L_p: CsrMatrix
    M_p: CsrMatrix
    alpha: float
    tau: float
    eta: float
    h: float
    delta: float
    lame: LameParams
    K: float
    dim: int
    dirichlet_u: np.ndarray
    dirichlet_p: np.ndarray
    free_u: np.ndarray
    free_p: np.ndarray
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    num_vertices: int
    mesh: Optional[Mesh] = field(default=None, repr=False)

    @property
    def zeta(self) -> float:
        return self.lame.zeta

    @property
    def zeta_sq(self) -> float:
        return self.lame.zeta_sq

    @property
    def n_u(self) -> int:
        return self.A_u.nrows

    @property
    def n_p(self) -> int:
        return self.M_p.nrows

    @property
    def n(self) -> int:
        return self.n_u + self.n_p

    @property
    def stab(self) -> float:
        """Coefficient ``eta h^2`` of the stabilizing Laplacian."""
        return self.eta * self.h ** 2

    @property
    def mass_coef(self) -> float:
        return self.alpha ** 2 / self.zeta_sq

    def operator(self, negated: bool = False) -> BlockOperator:
        a = self.alpha
        blocks = {
            (0, 0): [(1.0, self.A_u, False)],
            (0, 1): [(a, self.B, True)],
            (1, 0): [(a, self.B, False)],
            (1, 1): [(-self.tau, self.A_p, False), (-self.stab, self.L_p, False)],
        }
        return BlockOperator((self.n_u, self.n_p), blocks, negated)

    def pressure_block(self, fixed_stress: bool = False) -> CsrMatrix:
        """``S = tau A_p + eta h^2 L_p + (alpha^2 / zeta^2) M``.

        The fixed-stress variant drops the stabilizing Laplacian.
        """
        s = self.A_p.scaled(self.tau) + self.M_p.scaled(self.mass_coef)
        if not fixed_stress and self.stab != 0.0:
            s = s + self.L_p.scaled(self.stab)
        return s

    def rhs(self, negated: bool = False) -> np.ndarray:
        return stack(self.rhs_u, -self.rhs_p if negated else self.rhs_p)

    def norm_sq(self, x) -> float:
        """Squared well-posedness norm of a stacked vector."""
        u, p = x[: self.n_u], x[self.n_u:]
        S = self.pressure_block()
        return float(u @ (self.A_u @ u) + p @ (S @ p))

    def without_stabilization(self) -> "BlockSystem":
        return replace(self, delta=0.0, eta=0.0)

    def with_tau(self, tau: float) -> "BlockSystem":
        if not tau > 0:
            raise ParameterError("tau must be positive")
        return replace(self, tau=float(tau))

    def expand_u(self, u_free) -> np.ndarray:
        out = np.zeros(self.num_vertices * self.dim)
        out[self.free_u] = u_free
        return out

    def expand_p(self, p_free) -> np.ndarray:
        out = np.zeros(self.num_vertices)
        out[self.free_p] = p_free
        return out

    def export(self, directory: Union[str, Path]) -> None:
        """Matrix Market files for every block plus a dof-map listing."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("A_u", "B", "A_p", "L_p", "M_p"):
            write_matrix_market(getattr(self, name), directory / f"{name}.mtx")
        lines = [f"# alpha={self.alpha!r} tau={self.tau!r} eta={self.eta!r} h={self.h!r} zeta={self.zeta!r}"]
        lines += [f"u {i} {int(g)} {int(g) // self.dim} {int(g) % self.dim}" for i, g in enumerate(self.free_u)]
        lines += [f"p {i} {int(g)}" for i, g in enumerate(self.free_p)]
        (directory / "dofmap.txt").write_text("\n".join(lines) + "\n")


def stack(u, p) -> np.ndarray:
    return np.concatenate([np.asarray(u, dtype=float), np.asarray(p, dtype=float)])


def assemble_biot_system(
    mesh: Mesh,
    params: PhysicalParams,
    tau: float,
    delta: float = 0.25,
    bc: Optional[BoundaryConfig] = None,
    formula_mode: str = "paper",
) -> BlockSystem:
    if not mesh.is_tagged:
        raise ConfigurationError("mesh boundary is not tagged")
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    bc = bc or BoundaryConfig()
    d = mesh.dim
    lame = lame_from_engineering(params, d, formula_mode)

    A_u = assemble_elasticity(mesh, lame)
    B = assemble_divergence(mesh)
    A_p, L_p, M_p = assemble_pressure_matrices(mesh, params.K)

    fixed_v = mesh.vertices_with_tag(*bc.fixed) if bc.fixed else np.empty(0, dtype=np.int64)
    dir_u = (fixed_v[:, None] * d + np.arange(d)).ravel()
    dir_p = mesh.vertices_with_tag(*bc.drained) if bc.drained else np.empty(0, dtype=np.int64)
    free_u = np.setdiff1d(np.arange(mesh.num_vertices * d), dir_u)
    free_p = np.setdiff1d(np.arange(mesh.num_vertices), dir_p)

    load = traction_vector(mesh, bc.traction, bc.loaded)
    alpha = params.alpha
    eta = delta * alpha ** 2 / lame.zeta_sq
    return BlockSystem(
        A_u=A_u.restrict(free_u, free_u),
        B=B.restrict(free_p, free_u),
        A_p=A_p.restrict(free_p, free_p),
        L_p=L_p.restrict(free_p, free_p),
        M_p=M_p.restrict(free_p, free_p),
        alpha=alpha,
        tau=float(tau),
        eta=eta,
        h=mesh.h,
        delta=float(delta),
        lame=lame,
        K=params.K,
        dim=d,
        dirichlet_u=dir_u,
        dirichlet_p=dir_p,
        free_u=free_u,
        free_p=free_p,
        rhs_u=load[free_u],
        rhs_p=np.zeros(len(free_p)),
        num_vertices=mesh.num_vertices,
        mesh=mesh,
    )


def step_rhs(system: BlockSystem, prev_u, prev_p, g_n=None, f_n=None, negated: bool = False) -> np.ndarray:
    """Right-hand side of one backward-Euler step.

    The continuity equation is multiplied by ``tau``, giving
    ``rhs_p = tau f + alpha B u_prev - eta h^2 L_p p_prev`` next to
    ``rhs_u = tractions + g``.  `g_n` and `f_n` are load vectors on free dofs.
    """
    prev_u = np.asarray(prev_u, dtype=float)
    prev_p = np.asarray(prev_p, dtype=float)
    if prev_u.shape != (system.n_u,) or prev_p.shape != (system.n_p,):
        raise ShapeError(
            f"previous state sizes {prev_u.shape}, {prev_p.shape} do not match ({system.n_u},), ({system.n_p},)"
        )
    rhs_u = system.rhs_u.copy()
    if g_n is not None:
        rhs_u += g_n
    rhs_p = system.rhs_p + system.alpha * (system.B @ prev_u) - system.stab * (system.L_p @ prev_p)
    if f_n is not None:
        rhs_p = rhs_p + system.tau * np.asarray(f_n, dtype=float)
    return stack(rhs_u, -rhs_p if negated else rhs_p)
