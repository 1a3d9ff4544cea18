"""Benchmark harness for the footing problem.

A run sweeps refinement levels, time steps, permeabilities and Poisson
ratios, solves one time step per grid point with each preconditioner and
writes the iteration counts as CSV and markdown.

Configuration is a plain ``key = value`` file; lists are comma separated::

    dim = 3
    levels = 1, 2, 3
    tau = 0.1, 0.01, 0.001, 0.0001
    K = 1e-6
    nu = 0.2
    precond = BD, BL, BU

Refinement level ``l`` uses ``base_n * 2**(l-1)`` subdivisions per axis and
is reported as ``h = 1/n``.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .assembly import BoundaryConfig, PhysicalParams, assemble_biot_system
from .analysis import DEFAULT_BUDGET, SizeError, condition_number_diag, fov_for_preconditioner
from .krylov import SolveConfig, fgmres, gmres_left, pminres
from .mesh import BoundaryTag, footing_mesh
from .precond import PRESETS, Shape, build_preconditioner, preset

log = logging.getLogger(__name__)

__all__ = [
    "BenchConfig",
    "BenchRow",
    "CSV_HEADER",
    "WORKERS_ENV",
    "load_config",
    "parse_config",
    "run_benchmark",
    "emit_tables",
    "read_results",
    "markdown_tables",
    "main",
]

CSV_HEADER = ["precond", "h", "tau", "K", "nu", "iters", "converged"]
SPECTRAL_HEADER = ["precond", "h", "tau", "K", "nu", "dofs", "kappa", "sigma", "upsilon", "gamma"]
WORKERS_ENV = "BIOT_BENCH_WORKERS"
SKIP = "*"


class ConfigError(ValueError):
    pass


def _floats(v) -> tuple:
    if isinstance(v, str):
        v = [s for s in v.replace(";", ",").split(",") if s.strip()]
    return tuple(float(x) for x in v)


def _ints(v) -> tuple:
    if isinstance(v, str):
        v = [s for s in v.split(",") if s.strip()]
    return tuple(int(x) for x in v)


def _names(v) -> tuple:
    if isinstance(v, str):
        v = [s.strip() for s in v.split(",") if s.strip()]
    return tuple(v)


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "on", "true", "yes"):
        return True
    if s in ("0", "off", "false", "no"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


@dataclass
class BenchConfig:
    """Sweep definition.

    ``mode = grid`` runs the Cartesian product of levels, tau, K and nu.
    ``mode = cross`` runs, per level and tau, the K sweep at ``nu_fixed``
    followed by the nu sweep at ``K_fixed`` (the layout of the robustness
    table).
    """

    dim: int = 3
    levels: tuple = (1, 2, 3)
    base_n: int = 4
    tau: tuple = (0.1, 0.01, 0.001, 0.0001)
    K: tuple = (1e-6,)
    nu: tuple = (0.2,)
    mode: str = "grid"
    K_fixed: float = 1e-6
    nu_fixed: float = 0.2
    E: float = 3e4
    alpha: float = 1.0
    delta: float = 0.25
    precond: tuple = ("BD", "BL", "BU", "MD", "ML", "MU")
    solver: str = "fgmres"
    outer_tol: float = 1e-6
    inner_tol: float = 1e-2
    maxit: int = 300
    formula_mode: str = "paper"
    drained: tuple = ("TOP_LOADED", "TOP_FREE", "LATERAL")
    analysis: bool = False
    max_dofs: int = 300_000
    analysis_budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        self.levels = _ints(self.levels)
        self.tau, self.K, self.nu = _floats(self.tau), _floats(self.K), _floats(self.nu)
        self.precond = _names(self.precond)
        self.drained = tuple(s.upper() for s in _names(self.drained))
        self.analysis = _bool(self.analysis)
        for name in ("dim", "base_n", "maxit", "max_dofs", "analysis_budget"):
            setattr(self, name, int(getattr(self, name)))
        for name in ("K_fixed", "nu_fixed", "E", "alpha", "delta", "outer_tol", "inner_tol"):
            setattr(self, name, float(getattr(self, name)))
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3")
        if not (self.levels and self.tau and self.K and self.nu):
            raise ConfigError("levels, tau, K and nu sweeps must be nonempty")
        if min(self.tau) <= 0 or min(self.K + (self.K_fixed,)) <= 0:
            raise ConfigError("tau and K must be positive")
        if not all(0 < nu < 0.5 for nu in self.nu + (self.nu_fixed,)):
            raise ConfigError("nu must lie in (0, 0.5)")
        if any(l < 1 for l in self.levels) or self.base_n < 1:
            raise ConfigError("levels and base_n must be positive")
        for tol in (self.outer_tol, self.inner_tol):
            if not 0 < tol < 1:
                raise ConfigError(f"tolerance {tol} outside (0, 1)")
        if self.mode not in ("grid", "cross"):
            raise ConfigError("mode must be 'grid' or 'cross'")
        if self.solver not in ("fgmres", "minres", "gmres"):
            raise ConfigError("solver must be fgmres, minres or gmres")
        unknown = [p for p in self.precond if p not in PRESETS]
        if unknown:
            raise ConfigError(f"unknown preconditioners {unknown}; known: {sorted(PRESETS)}")
        bad = [d for d in self.drained if d not in BoundaryTag.__members__]
        if bad:
            raise ConfigError(f"unknown boundary tags {bad}")

    def subdivisions(self, level: int) -> int:
        return self.base_n * 2 ** (level - 1)

    def dofs(self, level: int) -> int:
        """Total vertex dofs (before Dirichlet removal) of the structured mesh."""
        return (self.subdivisions(level) + 1) ** self.dim * (self.dim + 1)

    def physical_points(self) -> list:
        if self.mode == "grid":
            return [(K, nu) for K in self.K for nu in self.nu]
        return [(K, self.nu_fixed) for K in self.K] + [(self.K_fixed, nu) for nu in self.nu]

    def points(self) -> list:
        """Grid points ``(level, tau, K, nu)`` in sweep order."""
        return [(l, t, K, nu) for l in self.levels for t in self.tau for K, nu in self.physical_points()]

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}


def parse_config(text: str, **overrides) -> BenchConfig:
    values = {}
    known = {f.name for f in fields(BenchConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = val
    values.update({k: v for k, v in overrides.items() if v is not None})
    return BenchConfig(**values)


def load_config(path, **overrides) -> BenchConfig:
    return parse_config(Path(path).read_text(), **overrides)


@dataclass
class BenchRow:
    precond: str
    level: int
    n: int
    tau: float
    K: float
    nu: float
    dofs: int
    iters: Optional[int] = None
    converged: Optional[bool] = None
    true_residual: Optional[float] = None
    kappa: Optional[float] = None
    sigma: Optional[float] = None
    upsilon: Optional[float] = None
    gamma: Optional[float] = None

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def skipped(self) -> bool:
        return self.iters is None


def _run_point(args) -> List[BenchRow]:
    cfg, (level, tau, K, nu) = args
    n = cfg.subdivisions(level)
    rows = [BenchRow(name, level, n, tau, K, nu, cfg.dofs(level)) for name in cfg.precond]
    if not rows or cfg.dofs(level) > cfg.max_dofs:
        return rows
    mesh = footing_mesh(cfg.dim, n)
    bc = BoundaryConfig(drained=tuple(BoundaryTag[d] for d in cfg.drained))
    params = PhysicalParams(E=cfg.E, nu=nu, K=K, alpha=cfg.alpha)
    system = assemble_biot_system(mesh, params, tau, delta=cfg.delta, bc=bc, formula_mode=cfg.formula_mode)
    solve_cfg = SolveConfig(cfg.outer_tol, cfg.maxit)
    kappa = gamma = None
    if cfg.analysis and system.n <= cfg.analysis_budget:
        rep = condition_number_diag(system, budget=cfg.analysis_budget)
        kappa, gamma = rep.kappa, rep.infsup_gamma
    for row in rows:
        row.dofs = system.n
        P = build_preconditioner(system, preset(row.precond, cfg.inner_tol))
        op = P.system_operator()
        b = P.system_rhs(system.rhs())
        if cfg.solver == "minres" and P.spec.shape == Shape.DIAGONAL:
            _, rep = pminres(op, P, b, solve_cfg)
        elif cfg.solver == "gmres" and P.spec.is_linear:
            _, rep = gmres_left(op, P, b, solve_cfg)
        else:
            _, rep = fgmres(op, P, b, solve_cfg)
        row.iters, row.converged, row.true_residual = int(rep.iterations), bool(rep.converged), rep.true_residual
        if cfg.analysis and system.n <= cfg.analysis_budget and P.spec.block_mode.value == "exact":
            if P.spec.shape == Shape.DIAGONAL:
                row.kappa = kappa
            else:
                fov = fov_for_preconditioner(P, cfg.analysis_budget)
                row.sigma, row.upsilon = fov.sigma, fov.upsilon
            row.gamma = gamma
    return rows


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")


def run_benchmark(cfg: BenchConfig, workers: Optional[int] = None) -> List[BenchRow]:
    """Solve every grid point; rows ordered by preconditioner, then sweep order."""
    workers = _workers() if workers is None else workers
    tasks = [(cfg, pt) for pt in cfg.points()]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_point = list(pool.map(_run_point, tasks))
    else:
        per_point = [_run_point(t) for t in tasks]
    rows = []
    for k, name in enumerate(cfg.precond):
        rows.extend(point[k] for point in per_point)
    return rows


def _fmt(x) -> str:
    if x is None:
        return SKIP
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _csv_text(header, records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(records)
    return buf.getvalue()


def markdown_tables(rows: Sequence[BenchRow], cfg: Optional[BenchConfig] = None) -> str:
    """Human-readable tables with the same numbers as the CSV.

    Grid runs get one panel per preconditioner (and per ``(K, nu)``) with
    time steps as rows and mesh sizes as columns.  Cross runs get one table
    per ``(h, tau)`` with preconditioners as rows.
    """
    if not rows:
        return "_no results_\n"
    cell = lambda r: SKIP if r.skipped else (str(r.iters) if r.converged else f"{r.iters}!")
    out = []
    hs = sorted({r.n for r in rows})
    if cfg is not None and cfg.mode == "cross":
        npts = len(cfg.physical_points())
        heads = [f"K={K:g}" for K in cfg.K] + [f"nu={nu:g}" for nu in cfg.nu]
        for n in hs:
            for tau in cfg.tau:
                out.append(f"### h = 1/{n}, tau = {tau:g}\n")
                out.append("| precond | " + " | ".join(heads) + " |")
                out.append("|---" * (npts + 1) + "|")
                for name in cfg.precond:
                    sel = [r for r in rows if r.precond == name and r.n == n and r.tau == tau]
                    out.append(f"| {name} | " + " | ".join(cell(r) for r in sel) + " |")
                out.append("")
        return "\n".join(out) + "\n"
    names = list(dict.fromkeys(r.precond for r in rows))
    taus = list(dict.fromkeys(r.tau for r in rows))
    phys = list(dict.fromkeys((r.K, r.nu) for r in rows))
    for name in names:
        for K, nu in phys:
            out.append(f"### {name} (K = {K:g}, nu = {nu:g})\n")
            out.append("| tau \\ h | " + " | ".join(f"1/{n}" for n in hs) + " |")
            out.append("|---" * (len(hs) + 1) + "|")
            for tau in taus:
                line = []
                for n in hs:
                    match = [r for r in rows if r.precond == name and r.n == n and r.tau == tau and r.K == K and r.nu == nu]
                    line.append(cell(match[0]) if match else "")
                out.append(f"| {tau:g} | " + " | ".join(line) + " |")
            out.append("")
    return "\n".join(out) + "\n"


def emit_tables(rows: Sequence[BenchRow], out_dir, cfg: Optional[BenchConfig] = None) -> dict:
    """Write ``results.csv``, ``spectral.csv``, ``tables.md`` and ``meta.json``.

    Output is a pure function of `rows` and `cfg` (no timestamps), so
    identical runs give identical bytes.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    main_rows = [[r.precond, _fmt(r.h), _fmt(r.tau), _fmt(r.K), _fmt(r.nu),
                  _fmt(r.iters), _fmt(r.converged)] for r in rows]
    spec_rows = [[r.precond, _fmt(r.h), _fmt(r.tau), _fmt(r.K), _fmt(r.nu), _fmt(r.dofs),
                  _fmt(r.kappa), _fmt(r.sigma), _fmt(r.upsilon), _fmt(r.gamma)] for r in rows]
    paths = {
        "csv": out / "results.csv",
        "spectral": out / "spectral.csv",
        "markdown": out / "tables.md",
        "meta": out / "meta.json",
    }
    paths["csv"].write_text(_csv_text(CSV_HEADER, main_rows))
    paths["spectral"].write_text(_csv_text(SPECTRAL_HEADER, spec_rows))
    paths["markdown"].write_text(markdown_tables(rows, cfg))
    meta = {
        "mesh": "structured box, 2 triangles per square / 6 Kuhn tetrahedra per cube",
        "domain": "(-32,32)^(d-1) x (0,64), load on |x| < 16 of the top face",
        "h_column": "1/n with n subdivisions per axis",
        "levels": sorted({(r.level, r.n, r.dofs) for r in rows}),
        "config": cfg.to_dict() if cfg is not None else None,
    }
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths


def read_results(path) -> List[dict]:
    """Rows of a ``results.csv`` as dicts; skipped cells come back as None."""
    path = Path(path)
    if path.is_dir():
        path = path / "results.csv"
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        rows = []
        for rec in reader:
            rows.append({
                "precond": rec["precond"],
                "h": float(rec["h"]), "tau": float(rec["tau"]),
                "K": float(rec["K"]), "nu": float(rec["nu"]),
                "iters": None if rec["iters"] == SKIP else int(rec["iters"]),
                "converged": None if rec["converged"] == SKIP else rec["converged"] == "1",
            })
    return rows


def _cmd_run(args) -> int:
    overrides = dict(levels=args.h_levels, tau=args.tau, K=args.K, nu=args.nu,
                     precond=args.precond, analysis=args.analysis)
    cfg = load_config(args.config, **overrides) if args.config else parse_config("", **overrides)
    t0 = time.perf_counter()
    rows = run_benchmark(cfg)
    paths = emit_tables(rows, args.out, cfg)
    log.info("%d rows in %.1f s", len(rows), time.perf_counter() - t0)
    print(paths["markdown"].read_text(), end="")
    return 0 if all(r.skipped or r.converged for r in rows) else 1


def _cmd_tables(args) -> int:
    rows = read_results(args.results)
    print(_csv_text(CSV_HEADER, [[_fmt(r[k]) for k in CSV_HEADER] for r in rows]), end="")
    return 0


def _cmd_verify(args) -> int:
    from . import acceptance

    if args.all:
        results = acceptance.run_all()
    else:
        results = acceptance.verify_results(read_results(args.results))
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Footing benchmark for Biot block preconditioners.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a sweep and write tables")
    run.add_argument("config", nargs="?", help="key = value configuration file")
    run.add_argument("--h-levels", help="comma separated refinement levels")
    run.add_argument("--tau")
    run.add_argument("--K")
    run.add_argument("--nu")
    run.add_argument("--precond")
    run.add_argument("--analysis", choices=("on", "off"))
    run.add_argument("--out", default="bench_out")
    run.set_defaults(func=_cmd_run)

    tab = sub.add_parser("tables", help="print a results CSV")
    tab.add_argument("results")
    tab.set_defaults(func=_cmd_tables)

    ver = sub.add_parser("verify", help="check results against the acceptance thresholds")
    ver.add_argument("results", nargs="?")
    ver.add_argument("--all", action="store_true", help="run the full acceptance suite")
    ver.set_defaults(func=_cmd_verify)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "verify" and not args.all and not args.results:
        build_parser().error("verify needs a results path or --all")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
