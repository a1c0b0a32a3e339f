"""Core module initialization."""

from .state import PhaseResult, PhaseState, RunReport, RunState
from .instance import (
    Infeasibility,
    Instance,
    ParseError,
    ScheduledRoute,
    Solution,
    Vertex,
    Violation,
    check_feasibility,
    load_instance,
    parse_instance,
    propagate_schedule,
)
from .similarity import SimilarityConfig, SimilarityMatrix, build_similarity_matrix
from .clustering import Clustering, ClusteringSpec, choose_q, cluster_customers
from .decompose import BudgetError, SubProblem, TimeBudget, VicinityIndex, build_subproblems, build_vicinities, budget_time
from .improve import MoveContext, apply_operator, improvement_report, local_search
from .routing import BaselineSolver, ExternalSolver, RoutingError, RoutingSolver, SolverError, baseline_solve, solve_subproblems
from .pipeline import DriConfig, PipelineError, run_baseline_metric, run_dri

__all__ = [
    "PhaseResult",
    "PhaseState",
    "RunReport",
    "RunState",
    "Infeasibility",
    "Instance",
    "ParseError",
    "ScheduledRoute",
    "Solution",
    "Vertex",
    "Violation",
    "check_feasibility",
    "load_instance",
    "parse_instance",
    "propagate_schedule",
    "SimilarityConfig",
    "SimilarityMatrix",
    "build_similarity_matrix",
    "Clustering",
    "ClusteringSpec",
    "choose_q",
    "cluster_customers",
    "BudgetError",
    "SubProblem",
    "TimeBudget",
    "VicinityIndex",
    "build_subproblems",
    "build_vicinities",
    "budget_time",
    "MoveContext",
    "apply_operator",
    "improvement_report",
    "local_search",
    "BaselineSolver",
    "ExternalSolver",
    "RoutingError",
    "RoutingSolver",
    "SolverError",
    "baseline_solve",
    "solve_subproblems",
    "DriConfig",
    "PipelineError",
    "run_baseline_metric",
    "run_dri",
]
