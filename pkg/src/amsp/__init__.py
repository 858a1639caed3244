"""Adaptive multistage stochastic programming: scenario trees, formulations, decomposition."""
from .decomposition import Cut, DecompositionConfig, DecompositionState, run
from .model import (
    AmspInstance, FixedRevisionModel, RevisionSchedule, Vams, build_2sp, build_ams, build_msp,
    fix_revisions, vams,
)
from .nac import NacConstraint, count_cells, generate_nacs, total_count
from .problems import gen_gep, gen_lotsizing
from .scenario_tree import ScenarioTree, build_uniform_tree
from .solver_backend import LinearModel, SolveOutcome, Status, solve_lp_with_duals, solve_milp

__version__ = "0.1.0"

__all__ = [
    "AmspInstance", "Cut", "DecompositionConfig", "DecompositionState", "FixedRevisionModel",
    "LinearModel", "NacConstraint", "RevisionSchedule", "ScenarioTree", "SolveOutcome", "Status",
    "Vams", "build_2sp", "build_ams", "build_msp", "build_uniform_tree", "count_cells",
    "fix_revisions", "gen_gep", "gen_lotsizing", "generate_nacs", "run", "solve_lp_with_duals",
    "solve_milp", "total_count", "vams",
]
