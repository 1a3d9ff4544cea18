"""Backward-Euler time stepping for the quasi-static Biot system."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import BlockSystem, ParameterError, step_rhs
from .krylov import SolveConfig, SolveReport, fgmres, gmres_left, pminres
from .precond import PreconditionerSpec, Shape, build_preconditioner, preset

__all__ = [
    "SOLVERS",
    "StepFailure",
    "TimeLoopConfig",
    "Trajectory",
    "run_time_loop",
    "solve_step",
    "write_trajectory_csv",
    "write_fields",
]

SOLVERS = ("direct", "fgmres", "minres", "gmres")


class StepFailure(RuntimeError):
    """A time step whose linear solve did not converge."""

    def __init__(self, step: int, report: SolveReport):
        super().__init__(
            f"step {step}: {report.method} stopped after {report.iterations} iterations "
            f"at relative residual {report.final_residual:.3e}"
        )
        self.step = step
        self.report = report


@dataclass
class TimeLoopConfig:
    """Time loop settings.

    `tau` must match the step the system was assembled with, since the
    operator depends on it.
    """

    tau: float
    n_steps: int = 1
    initial_u: Optional[np.ndarray] = None
    initial_p: Optional[np.ndarray] = None
    solver: str = "fgmres"
    precond: Union[PreconditionerSpec, str] = "BL"
    solve: SolveConfig = field(default_factory=SolveConfig)

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if self.n_steps < 1:
            raise ParameterError(f"n_steps must be at least 1, got {self.n_steps}")
        if self.solver not in SOLVERS:
            raise ParameterError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if isinstance(self.precond, str):
            self.precond = preset(self.precond)


@dataclass
class Trajectory:
    times: np.ndarray
    u: List[np.ndarray]
    p: List[np.ndarray]
    reports: List[SolveReport]

    @property
    def iterations(self) -> List[int]:
        return [r.iterations for r in self.reports]

    @property
    def first_iterations(self) -> int:
        return self.reports[0].iterations

    @property
    def max_iterations(self) -> int:
        return max(self.iterations)


class _DirectSolver:
    def __init__(self, system: BlockSystem):
        self._lu = spla.splu(system.operator().to_scipy().tocsc())

    def __call__(self, b: np.ndarray) -> tuple:
        x = self._lu.solve(b)
        return x, SolveReport(iterations=0, residuals=[1.0, 0.0], converged=True,
                              final_residual=0.0, method="direct")


def _make_solver(system: BlockSystem, cfg: TimeLoopConfig) -> Callable:
    if cfg.solver == "direct":
        return _DirectSolver(system)
    spec = cfg.precond
    if cfg.solver == "minres" and spec.shape != Shape.DIAGONAL:
        raise ParameterError("MINRES requires a block-diagonal preconditioner")
    P = build_preconditioner(system, spec)
    op = P.system_operator()

    def solve(b):
        b = P.system_rhs(b)
        if cfg.solver == "fgmres":
            return fgmres(op, P, b, cfg.solve)
        if cfg.solver == "minres":
            return pminres(op, P, b, cfg.solve)
        return gmres_left(op, P, b, cfg.solve)

    return solve


def solve_step(system: BlockSystem, rhs: np.ndarray, cfg: TimeLoopConfig) -> tuple:
    """One linear solve with the configured solver; returns ``(x, report)``."""
    return _make_solver(system, cfg)(rhs)


def run_time_loop(
    system: BlockSystem,
    cfg: TimeLoopConfig,
    loads: Optional[Callable[[int, float], tuple]] = None,
) -> Trajectory:
    """March ``n_steps`` backward-Euler steps from the initial data.

    Parameters
    ----------
    system : BlockSystem
        Assembled for ``cfg.tau``; its ``rhs_u`` (traction) is applied at
        every step.
    loads : callable, optional
        ``loads(step, time) -> (g, f)`` giving extra displacement and
        pressure load vectors on free dofs (either may be None).

    Raises
    ------
    StepFailure
        If a step does not converge; carries the step index and report.
    """
    if not np.isclose(cfg.tau, system.tau, rtol=1e-12, atol=0.0):
        raise ParameterError(f"config tau {cfg.tau} differs from the assembled tau {system.tau}")
    u = np.zeros(system.n_u) if cfg.initial_u is None else np.asarray(cfg.initial_u, dtype=float)
    p = np.zeros(system.n_p) if cfg.initial_p is None else np.asarray(cfg.initial_p, dtype=float)
    if u.shape != (system.n_u,) or p.shape != (system.n_p,):
        raise ParameterError("initial data does not match the free dof counts")

    solve = _make_solver(system, cfg)
    traj = Trajectory(times=cfg.tau * np.arange(cfg.n_steps + 1), u=[u], p=[p], reports=[])
    for step in range(1, cfg.n_steps + 1):
        g = f = None
        if loads is not None:
            g, f = loads(step, step * cfg.tau)
        rhs = step_rhs(system, u, p, g, f)
        x, report = solve(rhs)
        if not report.converged:
            raise StepFailure(step, report)
        u, p = x[: system.n_u].copy(), x[system.n_u:].copy()
        traj.u.append(u)
        traj.p.append(p)
        traj.reports.append(report)
    return traj


def write_trajectory_csv(traj: Trajectory, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "iterations", "final_residual"])
        for k, r in enumerate(traj.reports, start=1):
            w.writerow([k, repr(float(traj.times[k])), r.iterations, repr(float(r.final_residual))])


def write_fields(system: BlockSystem, traj: Trajectory, directory: Union[str, Path]) -> None:
    """Dump full-length displacement and pressure vectors, one file per step."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for k, (u, p) in enumerate(zip(traj.u, traj.p)):
        U, P = system.expand_u(u), system.expand_p(p)
        header = f"step {k} time {traj.times[k]!r} dim {system.dim} vertices {system.num_vertices} layout u[vertex*dim+comp] then p[vertex]"
        np.savetxt(out / f"step_{k:04d}.txt", np.concatenate([U, P]), header=header)
