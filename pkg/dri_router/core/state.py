from enum import Enum
from typing import Optional, Dict, Any, List
from datetime import datetime


class PhaseState(Enum):
    """Enumeration for pipeline phase states."""
    PENDING = "pending"
    RUNNING = "running"
    SUCCESS = "success"
    FAILED = "failed"
    SKIPPED = "skipped"


class RunState(Enum):
    """Enumeration for overall run states."""
    PENDING = "pending"
    RUNNING = "running"
    SUCCESS = "success"
    FAILED = "failed"
    PARTIAL_SUCCESS = "partial_success"


class PhaseResult:
    """Container for the outcome of one pipeline phase or subproblem solve."""

    def __init__(
        self,
        name: str,
        state: PhaseState,
        start_time: Optional[datetime] = None,
        end_time: Optional[datetime] = None,
        detail: Optional[Dict[str, Any]] = None,
        error: Optional[Exception] = None,
    ):
        self.name = name
        self.state = state
        self.start_time = start_time
        self.end_time = end_time
        self.detail = detail or {}
        self.error = error

    @property
    def duration(self) -> Optional[float]:
        """Phase duration in seconds."""
        if self.start_time and self.end_time:
            return (self.end_time - self.start_time).total_seconds()
        return None

    @property
    def success(self) -> bool:
        return self.state == PhaseState.SUCCESS

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "state": self.state.value,
            "start_time": self.start_time.isoformat() if self.start_time else None,
            "end_time": self.end_time.isoformat() if self.end_time else None,
            "duration": self.duration,
            "detail": self.detail,
            "error": str(self.error) if self.error else None,
        }


class RunReport:
    """
    Container for the results of one decompose-route-improve run.

    Phase results are kept in insertion order; numeric figures (budgets,
    costs, gaps) are filled in by the pipeline as phases complete.
    """

    def __init__(self, instance_name: str, config: Optional[Dict[str, Any]] = None):
        self.instance_name = instance_name
        self.config = config or {}
        self.state = RunState.PENDING
        self.start_time: Optional[datetime] = None
        self.end_time: Optional[datetime] = None
        self.phases: Dict[str, PhaseResult] = {}
        self.subproblems: List[PhaseResult] = []

        self.q = 1
        self.similarity_time = 0.0
        self.clustering_time = 0.0
        self.nu = 0.0
        self.delta = 0.0
        self.omega = 0.0
        self.upsilon = 0.0
        self.subproblem_budgets: List[float] = []
        self.subproblem_sizes: List[int] = []
        self.fleets: List[int] = []
        self.edge_reduction = 1.0
        self.routing_time = 0.0
        self.improvement_time = 0.0
        self.cost_before: Optional[float] = None
        self.cost_after: Optional[float] = None
        self.routes_before: Optional[int] = None
        self.routes_after: Optional[int] = None
        self.gaps: Optional[Dict[str, Any]] = None
        self.fleet_feasible = True
        self.fleet_overflow = False
        self.feasible = True
        self.peak_rss_mb: Optional[float] = None
        self.improvement_log: List[Dict[str, Any]] = []
        self.route_summaries: List[Dict[str, Any]] = []

    def add_phase_result(self, result: PhaseResult):
        self.phases[result.name] = result

    def update_state(self):
        """Derive the run state from the recorded phases."""
        if not self.phases:
            self.state = RunState.PENDING
            return

        states = [result.state for result in self.phases.values()]
        if any(state == PhaseState.FAILED for state in states):
            succeeded = sum(1 for state in states if state == PhaseState.SUCCESS)
            self.state = RunState.PARTIAL_SUCCESS if succeeded else RunState.FAILED
        elif any(state == PhaseState.RUNNING for state in states):
            self.state = RunState.RUNNING
        else:
            self.state = RunState.SUCCESS

    @property
    def duration(self) -> Optional[float]:
        if self.start_time and self.end_time:
            return (self.end_time - self.start_time).total_seconds()
        return None

    def get_failed_phases(self) -> Dict[str, PhaseResult]:
        return {
            name: result for name, result in self.phases.items()
            if result.state == PhaseState.FAILED
        }

    def to_dict(self) -> Dict[str, Any]:
        """Convert the report to its JSON schema."""
        return {
            "instance": self.instance_name,
            "config": self.config,
            "state": self.state.value,
            "start_time": self.start_time.isoformat() if self.start_time else None,
            "end_time": self.end_time.isoformat() if self.end_time else None,
            "duration": self.duration,
            "timings": {
                "similarity": self.similarity_time,
                "clustering": self.clustering_time,
                "nu": self.nu,
                "routing": self.routing_time,
                "improvement": self.improvement_time,
            },
            "budgets": {
                "delta": self.delta,
                "omega": self.omega,
                "upsilon": self.upsilon,
                "subproblems": list(self.subproblem_budgets),
            },
            "q": self.q,
            "subproblem_sizes": list(self.subproblem_sizes),
            "fleets": list(self.fleets),
            "edge_reduction": self.edge_reduction,
            "cost_before": _round(self.cost_before),
            "cost_after": _round(self.cost_after),
            "routes_before": self.routes_before,
            "routes_after": self.routes_after,
            "gaps": self.gaps,
            "feasible": self.feasible,
            "fleet_feasible": self.fleet_feasible,
            "fleet_overflow": self.fleet_overflow,
            "peak_rss_mb": self.peak_rss_mb,
            "phases": {name: result.to_dict() for name, result in self.phases.items()},
            "subproblem_results": [result.to_dict() for result in self.subproblems],
            "routes": self.route_summaries,
            "improvement_log": self.improvement_log,
        }


def _round(value: Optional[float]) -> Optional[float]:
    return None if value is None else round(value, 2)
