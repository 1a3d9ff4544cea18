"""Acceptance checks, one function per criterion.

Each check returns a :class:`CriterionResult`; ``line()`` gives the one-line
pass/fail summary printed by the test suite and ``bench verify``.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .analysis import (
    condition_number_diag,
    fov_for_preconditioner,
    gmres_bound_check,
    minres_bound_check,
    norm_gram,
    stability_inequality_ratios,
)
from .assembly import (
    PhysicalParams,
    assemble_biot_system,
    assemble_divergence,
    assemble_elasticity,
    assemble_pressure_matrices,
    lame_from_engineering,
)
from .bench import BenchConfig, BenchRow, run_benchmark
from .krylov import SolveConfig, fgmres, gmres_left, pminres, richardson
from .mesh import footing_mesh, mesh_from_arrays
from .precond import build_preconditioner, preset

__all__ = [
    "CriterionResult",
    "REFERENCE_TABLE2",
    "K_SWEEP",
    "NU_SWEEP",
    "TAU_SWEEP",
    "CRITERIA",
    "run_all",
    "verify_results",
    "rigid_modes",
]

TAU_SWEEP = (0.1, 0.01, 0.001, 0.0001)
K_SWEEP = (1.0, 1e-2, 1e-4, 1e-6, 1e-8, 1e-10)
NU_SWEEP = (0.1, 0.2, 0.4, 0.45, 0.49, 0.499)

# iteration counts of the robustness table (h = 1/16, tau = 0.01):
# K sweep at nu = 0.2 followed by nu sweep at K = 1e-6
REFERENCE_TABLE2 = {
    "BD": (4, 7, 8, 8, 8, 8, 7, 8, 11, 11, 12, 12),
    "BL": (2, 5, 6, 6, 6, 6, 5, 6, 8, 8, 8, 9),
    "BU": (3, 4, 5, 5, 5, 5, 4, 5, 6, 6, 5, 4),
    "MD": (5, 8, 9, 9, 9, 9, 8, 9, 12, 13, 14, 13),
    "ML": (5, 7, 8, 8, 8, 8, 7, 8, 11, 11, 12, 12),
    "MU": (5, 7, 8, 8, 9, 8, 7, 8, 7, 8, 17, 11),
}

TABLE1_LIMITS = {"BD": 10, "BL": 8, "BU": 8}
TABLE1_INEXACT_LIMITS = {"MD": 12, "ML": 11, "MU": 11}
FLAT_RATIO = 1.5
TABLE1_BUDGET_S = 600.0
KAPPA_BUDGET_S = 300.0
SPECTRAL_MESHES = (4, 8, 16)
UPSILON_SIGMA_CAP = 20.0
SLACK = 1e-8


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0
    data: dict = field(default_factory=dict, repr=False)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number}: {self.name} ({self.seconds:.1f} s) {self.detail}"


def _timed(fn: Callable[[], CriterionResult]) -> CriterionResult:
    t0 = time.perf_counter()
    res = fn()
    res.seconds = time.perf_counter() - t0
    return res


def _as_dicts(rows) -> List[dict]:
    out = []
    for r in rows:
        if isinstance(r, BenchRow):
            out.append(dict(precond=r.precond, h=r.h, tau=r.tau, K=r.K, nu=r.nu,
                            iters=r.iters, converged=r.converged))
        else:
            out.append(dict(r))
    return out


def table1_config(names: Sequence[str]) -> BenchConfig:
    return BenchConfig(dim=3, levels=(1, 2, 3), base_n=4, tau=TAU_SWEEP, K=(1e-6,), nu=(0.2,),
                       precond=tuple(names), outer_tol=1e-6, inner_tol=1e-2)


def table2_config(names: Sequence[str] = tuple(REFERENCE_TABLE2)) -> BenchConfig:
    return BenchConfig(dim=2, levels=(1,), base_n=16, tau=(0.01,), K=K_SWEEP, nu=NU_SWEEP,
                       mode="cross", K_fixed=1e-6, nu_fixed=0.2, precond=tuple(names))


def evaluate_bounded_flat(rows, limits: Dict[str, int], ratio: float = FLAT_RATIO) -> tuple:
    """Every count within its limit and max/min per preconditioner within `ratio`."""
    rows = _as_dicts(rows)
    ok, parts = True, []
    for name, limit in limits.items():
        sel = [r for r in rows if r["precond"] == name]
        if not sel:
            ok = False
            parts.append(f"{name}: no rows")
            continue
        if any(r["iters"] is None or not r["converged"] for r in sel):
            ok = False
            parts.append(f"{name}: skipped or unconverged cells")
            continue
        counts = [r["iters"] for r in sel]
        r_ = max(counts) / min(counts)
        good = max(counts) <= limit and r_ <= ratio
        ok &= good
        parts.append(f"{name} {min(counts)}..{max(counts)} (<= {limit}) ratio {r_:.2f} (<= {ratio})")
    return ok, "; ".join(parts)


def _strictly_increasing(seq) -> bool:
    return len(seq) > 1 and all(b > a for a, b in zip(seq, seq[1:]))


def evaluate_table2(rows) -> tuple:
    """Counts within twice the reference cell and no strictly increasing sweep."""
    rows = _as_dicts(rows)
    ok, parts = True, []
    nK = len(K_SWEEP)
    for name, ref in REFERENCE_TABLE2.items():
        sel = [r for r in rows if r["precond"] == name]
        if len(sel) != len(ref):
            ok = False
            parts.append(f"{name}: expected {len(ref)} cells, got {len(sel)}")
            continue
        counts = [r["iters"] for r in sel]
        if any(c is None for c in counts) or not all(r["converged"] for r in sel):
            ok = False
            parts.append(f"{name}: unconverged cells")
            continue
        over = [i for i, (c, p) in enumerate(zip(counts, ref)) if c > 2 * p]
        mono = _strictly_increasing(counts[:nK]) or _strictly_increasing(counts[nK:])
        good = not over and not mono
        ok &= good
        parts.append(f"{name} {counts}" + (f" over 2x reference at cells {over}" if over else "")
                     + (" monotone growth" if mono else ""))
    return ok, "; ".join(parts)


def criterion_1() -> CriterionResult:
    def run():
        rows = run_benchmark(table1_config(TABLE1_LIMITS))
        ok, detail = evaluate_bounded_flat(rows, TABLE1_LIMITS)
        return CriterionResult(1, "exact preconditioners on the 3D footing sweep", ok, detail, data={"rows": rows})

    res = _timed(run)
    if res.seconds > TABLE1_BUDGET_S:
        res.passed = False
        res.detail += f"; runtime {res.seconds:.0f} s exceeds {TABLE1_BUDGET_S:.0f} s"
    return res


def criterion_2() -> CriterionResult:
    def run():
        rows = run_benchmark(table1_config(TABLE1_INEXACT_LIMITS))
        ok, detail = evaluate_bounded_flat(rows, TABLE1_INEXACT_LIMITS)
        return CriterionResult(2, "inexact preconditioners on the 3D footing sweep", ok, detail, data={"rows": rows})

    return _timed(run)


def criterion_3() -> CriterionResult:
    def run():
        rows = run_benchmark(table2_config())
        ok, detail = evaluate_table2(rows)
        return CriterionResult(3, "K and nu robustness on the 2D footing", ok, detail, data={"rows": rows})

    return _timed(run)


def parameter_points() -> list:
    """``(tau, K, nu)`` grid of the spectral checks."""
    phys = [(K, 0.2) for K in K_SWEEP] + [(1e-6, nu) for nu in NU_SWEEP if nu != 0.2]
    return [(tau, K, nu) for tau in TAU_SWEEP for K, nu in phys]


def _systems(n: int):
    mesh = footing_mesh(2, n)
    for tau, K, nu in parameter_points():
        yield (tau, K, nu), assemble_biot_system(mesh, PhysicalParams(K=K, nu=nu), tau)


def criterion_4(meshes: Sequence[int] = SPECTRAL_MESHES) -> CriterionResult:
    def run():
        ok, parts, data = True, [], {}
        for n in meshes:
            kappas = [condition_number_diag(s).kappa for _, s in _systems(n)]
            ratio = max(kappas) / min(kappas)
            ok &= ratio <= 2.0
            data[n] = kappas
            parts.append(f"n={n}: kappa {min(kappas):.2f}..{max(kappas):.2f} ratio {ratio:.2f}")
        allk = list(itertools.chain(*data.values()))
        parts.append(f"all meshes ratio {max(allk) / min(allk):.2f}")
        return CriterionResult(4, "condition number flatness of B_D", ok, "; ".join(parts), data=data)

    res = _timed(run)
    if res.seconds > KAPPA_BUDGET_S:
        res.passed = False
        res.detail += f"; runtime {res.seconds:.0f} s exceeds {KAPPA_BUDGET_S:.0f} s"
    return res


def criterion_5(meshes: Sequence[int] = SPECTRAL_MESHES) -> CriterionResult:
    def run():
        ok, parts, data = True, [], {}
        for n in meshes:
            for name in ("BL", "BU"):
                fovs = [fov_for_preconditioner(build_preconditioner(s, preset(name))) for _, s in _systems(n)]
                sig = np.array([f.sigma for f in fovs])
                ups = np.array([f.upsilon for f in fovs])
                good = bool(sig.min() > 0 and sig.max() / sig.min() <= 2.0 and (ups / sig).max() <= UPSILON_SIGMA_CAP)
                ok &= good
                data[(n, name)] = (sig, ups)
                parts.append(f"n={n} {name}: sigma {sig.min():.3f}..{sig.max():.3f} "
                             f"ratio {sig.max() / sig.min():.2f}, max upsilon/sigma {(ups / sig).max():.2f}")
        return CriterionResult(5, "field-of-values constants of B_L and B_U", ok, "; ".join(parts), data=data)

    return _timed(run)


CERT_POINTS = ((0.01, 1e-6, 0.2), (0.1, 1.0, 0.2), (0.0001, 1e-10, 0.2), (0.01, 1e-6, 0.49))


def criterion_6(meshes: Sequence[int] = SPECTRAL_MESHES) -> CriterionResult:
    def run():
        ok, parts = True, []
        cfg = SolveConfig(tol=1e-10, maxit=400)
        for n in meshes:
            mesh = footing_mesh(2, n)
            for tau, K, nu in CERT_POINTS:
                s = assemble_biot_system(mesh, PhysicalParams(K=K, nu=nu), tau)
                b = s.rhs()
                for name in ("BD", "MD-sweeps"):
                    P = build_preconditioner(s, preset(name))
                    kappa = condition_number_diag(s, P).kappa
                    _, rep = pminres(s.operator(), P, b, cfg)
                    good = minres_bound_check(rep, kappa, SLACK)
                    ok &= good
                    if not good:
                        parts.append(f"n={n} {name} tau={tau:g} K={K:g} nu={nu:g}: minres bound violated")
                P = build_preconditioner(s, preset("BL"))
                fov = fov_for_preconditioner(P)
                _, rep = gmres_left(P.system_operator(), P, P.system_rhs(b), cfg, inner=norm_gram(s))
                good = gmres_bound_check(rep, fov.sigma, fov.upsilon, SLACK)
                ok &= good
                if not good:
                    parts.append(f"n={n} BL tau={tau:g} K={K:g} nu={nu:g}: gmres bound violated")
        if ok:
            parts.append(f"{len(meshes) * len(CERT_POINTS) * 3} histories within bounds")
        return CriterionResult(6, "convergence bound certificates", ok, "; ".join(parts))

    return _timed(run)


def rigid_modes(vertices: np.ndarray) -> np.ndarray:
    """Columns spanning the rigid motions, interleaved dof layout."""
    nv, d = vertices.shape
    modes = []
    for k in range(d):
        t = np.zeros((nv, d))
        t[:, k] = 1.0
        modes.append(t.ravel())
    for i, j in itertools.combinations(range(d), 2):
        r = np.zeros((nv, d))
        r[:, i] = -vertices[:, j]
        r[:, j] = vertices[:, i]
        modes.append(r.ravel())
    return np.column_stack(modes)


def criterion_7() -> CriterionResult:
    def run():
        ok, parts = True, []
        unit = mesh_from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])
        _, L, M = assemble_pressure_matrices(unit, 1.0)
        L_ref = np.array([[2, -1, -1], [-1, 1, 0], [-1, 0, 1]]) / 2.0
        M_ref = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
        eL = np.abs(L.toarray() - L_ref).max()
        eM = np.abs(M.toarray() - M_ref).max()
        ok &= eL <= 1e-14 and eM <= 1e-14
        parts.append(f"element L err {eL:.1e}, M err {eM:.1e}")

        for dim, n in ((2, 8), (3, 4)):
            mesh = footing_mesh(dim, n)
            lame = lame_from_engineering(PhysicalParams(), dim)
            A = assemble_elasticity(mesh, lame)
            B = assemble_divergence(mesh)
            R = rigid_modes(mesh.vertices)
            scale = np.abs(A.scipy).max() * np.abs(R).max()
            kA = np.abs(A.scipy @ R).max() / scale
            kB = np.abs(B.scipy @ R).max() / (np.abs(B.scipy).max() * np.abs(R).max())
            s = assemble_biot_system(mesh, PhysicalParams(), 0.01)
            big = s.operator().to_scipy()
            asym = spla.norm(big - big.T) / spla.norm(big)
            good = kA <= 1e-10 and kB <= 1e-10 and asym <= 1e-12
            ok &= good
            parts.append(f"{dim}D rigid-mode residual A {kA:.1e}, B {kB:.1e}; asymmetry {asym:.1e}")
        return CriterionResult(7, "assembly oracles", ok, "; ".join(parts))

    return _timed(run)


EQUIVALENCE_MESHES = ((2, 16), (2, 64), (3, 8), (3, 16))


def criterion_8(meshes=EQUIVALENCE_MESHES, names=("BD", "BL", "BU", "MD", "ML", "MU")) -> CriterionResult:
    def run():
        ok, parts, worst = True, [], 0.0
        cfg = SolveConfig(tol=1e-10, maxit=500)
        for dim, n in meshes:
            mesh = footing_mesh(dim, n)
            s = assemble_biot_system(mesh, PhysicalParams(), 0.01)
            if s.n > 20000:
                continue
            b = s.rhs()
            x_ref = spla.spsolve(s.operator().to_scipy().tocsc(), b)
            # residuals in the dual energy norm; the Euclidean one barely sees the pressure rows
            dual = build_preconditioner(s, preset("BD"))
            for name in names:
                P = build_preconditioner(s, preset(name))
                x, rep = fgmres(P.system_operator(), P, P.system_rhs(b), cfg, inner=dual)
                if not rep.converged:
                    parts.append(f"{dim}D n={n} {name} did not converge")
                    continue
                err = np.linalg.norm(x - x_ref) / np.linalg.norm(x_ref)
                worst = max(worst, err)
                if err > 1e-8:
                    ok = False
                    parts.append(f"{dim}D n={n} {name}: relative error {err:.1e}")
        parts.append(f"worst relative error {worst:.1e}")
        return CriterionResult(8, "iterative versus direct solutions", ok, "; ".join(parts))

    return _timed(run)


def criterion_9() -> CriterionResult:
    def run():
        ok, parts, total = True, [], 0
        for dim, n in ((2, 8), (2, 16), (3, 4)):
            mesh = footing_mesh(dim, n)
            for nu in (0.1, 0.2, 0.49):
                s = assemble_biot_system(mesh, PhysicalParams(nu=nu), 0.01)
                ratios = stability_inequality_ratios(s, samples=200, seed=n)
                for key, vals in ratios.items():
                    bad = int(np.sum(vals > 1.0 + 1e-12))
                    total += bad
                    if bad:
                        parts.append(f"{dim}D n={n} nu={nu} {key}: {bad} violations (max {vals.max():.6f})")
        ok = total == 0
        parts.append(f"{total} violations")
        return CriterionResult(9, "continuity and Korn inequalities", ok, "; ".join(parts))

    return _timed(run)


def criterion_10() -> CriterionResult:
    def run():
        mesh = footing_mesh(2, 16)
        s = assemble_biot_system(mesh, PhysicalParams(K=1e-6, nu=0.2), 0.01).without_stabilization()
        P = build_preconditioner(s, preset("FS"))
        op, b = P.system_operator(), P.system_rhs(s.rhs())
        cfg = SolveConfig(tol=1e-6, maxit=1000)
        _, rich = richardson(op, P, b, cfg)
        _, gm = fgmres(op, P, b, cfg)
        ok = rich.converged and gm.converged and gm.iterations < rich.iterations
        detail = (f"Richardson {rich.iterations} its ({'converged' if rich.converged else 'not converged'}), "
                  f"GMRES {gm.iterations} its")
        return CriterionResult(10, "fixed-stress iteration and its Krylov acceleration", ok, detail)

    return _timed(run)


CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
}


def run_all(numbers: Optional[Sequence[int]] = None) -> List[CriterionResult]:
    return [CRITERIA[k]() for k in (numbers or sorted(CRITERIA))]


def verify_results(rows) -> List[CriterionResult]:
    """Apply the table thresholds to a results CSV.

    A run at a single ``(K, nu)`` is checked against criteria 1 and 2 for
    whichever of their preconditioners it holds; a run with the twelve cells
    of the K and nu sweeps for every preconditioner is checked against
    criterion 3.
    """
    rows = _as_dicts(rows)
    names = {r["precond"] for r in rows}
    table1 = len({(r["K"], r["nu"]) for r in rows}) == 1
    out = []
    if table1 and set(TABLE1_LIMITS) <= names:
        ok, detail = evaluate_bounded_flat(rows, TABLE1_LIMITS)
        out.append(CriterionResult(1, "exact preconditioner limits", ok, detail))
    if table1 and set(TABLE1_INEXACT_LIMITS) <= names:
        ok, detail = evaluate_bounded_flat(rows, TABLE1_INEXACT_LIMITS)
        out.append(CriterionResult(2, "inexact preconditioner limits", ok, detail))
    if not table1 and set(REFERENCE_TABLE2) <= names and all(
        sum(r["precond"] == p for r in rows) == len(REFERENCE_TABLE2[p]) for p in REFERENCE_TABLE2
    ):
        ok, detail = evaluate_table2(rows)
        out.append(CriterionResult(3, "K and nu robustness", ok, detail))
    if not out:
        out.append(CriterionResult(0, "no applicable criterion", False, "results match no table layout"))
    return out
