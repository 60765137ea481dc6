"""Logic-based Benders decomposition solved by Branch-and-Check."""
from .cuts import BendersCut, make_feasibility_cut, make_optimality_cut
from .master import (
    MasterAssignment,
    MasterModel,
    ModelInconsistency,
    build_master,
    extract_paths,
    read_master,
    time_infeasible,
)
from .solver import BnCResult, NoFeasibleSolution, branch_and_check, gap_metrics, optimality_gap, warm_start_from
from .subproblem import build_subproblem, decode_subproblem, solve_subproblem

__all__ = [
    "BendersCut",
    "BnCResult",
    "MasterAssignment",
    "MasterModel",
    "ModelInconsistency",
    "NoFeasibleSolution",
    "branch_and_check",
    "build_master",
    "build_subproblem",
    "decode_subproblem",
    "extract_paths",
    "gap_metrics",
    "make_feasibility_cut",
    "make_optimality_cut",
    "optimality_gap",
    "read_master",
    "solve_subproblem",
    "time_infeasible",
    "warm_start_from",
]
