"""
DRI Router

Decompose-route-improve toolkit for the vehicle routing problem with time windows.
"""

__version__ = "0.4.0"
__description__ = "Decompose-route-improve toolkit for VRPTW"

from .core.instance import Instance, Solution, load_instance, parse_instance
from .core.pipeline import DriConfig, PipelineError, run_baseline_metric, run_dri
from .core.routing import BaselineSolver, ExternalSolver, RoutingSolver
from .core.state import PhaseState, RunReport, RunState

__all__ = [
    "Instance",
    "Solution",
    "load_instance",
    "parse_instance",
    "DriConfig",
    "PipelineError",
    "run_dri",
    "run_baseline_metric",
    "BaselineSolver",
    "ExternalSolver",
    "RoutingSolver",
    "PhaseState",
    "RunReport",
    "RunState",
]
