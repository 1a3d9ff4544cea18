"""Stabilized P1-P1 discretization of two-field Biot consolidation with
robust block preconditioners for MINRES and GMRES."""

from .assembly import (
    BlockSystem,
    BoundaryConfig,
    LameParams,
    PhysicalParams,
    assemble_biot_system,
    lame_from_engineering,
    step_rhs,
)
from .krylov import SolveConfig, SolveReport, fgmres, gmres_left, pcg, pminres, richardson
from .mesh import BoundaryTag, Mesh, build_box_mesh, footing_mesh
from .precond import PRESETS, BlockPreconditioner, PreconditionerSpec, build_preconditioner, preset
from .sparse import BlockOperator, CsrMatrix

__version__ = "0.1.0"
