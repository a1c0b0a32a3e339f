import logging
import time
from dataclasses import asdict, dataclass, fields, replace
from datetime import datetime
from typing import Any, Dict, Optional, Tuple

import psutil

from ..utils.seeding import derive_seed
from .clustering import (
    FUZZY_INITS,
    LINKAGES,
    METHODS,
    Q_POLICIES,
    ClusteringSpec,
    choose_q,
    cluster_customers,
    single_cluster,
)
from .decompose import build_subproblems, build_vicinities, budget_time, edge_reduction
from .improve import OPERATORS, STRATEGIES, WORK_RATE, MoveContext, improvement_report, local_search
from .instance import Instance, Solution
from .routing import (
    CONSTRUCTIONS,
    EXECUTION_MODES,
    STOP_MODES,
    BaselineSolver,
    BaselineSolverConfig,
    ExternalSolver,
    RoutingSolver,
    merge_solutions,
    solve_subproblems,
)
from .similarity import METRICS, SimilarityConfig, build_similarity_matrix, reuse_matrix
from .state import PhaseResult, PhaseState, RunReport, RunState


logger = logging.getLogger(__name__)

SOLVERS = ("baseline", "external")


class PipelineError(RuntimeError):
    """Raised when a pipeline stage fails; ``stage`` names the stage."""

    def __init__(self, stage: str, error: Exception):
        self.stage = stage
        self.error = error
        super().__init__(f"{stage} stage failed: {error}")


@dataclass
class DriConfig:
    """
    Hyperparameters of a decompose-route-improve run.

    Defaults follow the usual setup: lambda = 1, k-medoids on the STD metric,
    phi = 5, varphi = 10 and steepest descent.
    """
    # decomposition
    method: str = "k_medoids"
    q_policy: str = "solver"
    q: Optional[int] = None
    target_size: int = 500
    kappa: float = 2.0
    epsilon: float = 1e-4
    linkage: str = "average"
    fuzzy_init: str = "medoids"
    max_iterations: Optional[int] = None
    lam: float = 1.0
    circular_angles: bool = False
    metric: str = "std"
    # dump written by `dri decompose --save-matrix`, loaded instead of rebuilding
    matrix_file: Optional[str] = None

    # budgets
    theta: float = 60.0
    alpha: float = 0.8
    min_subproblem_budget: float = 1.0

    # improvement
    phi: int = 5
    varphi: int = 10
    rho: Optional[float] = None
    vicinity_linkage: str = "average"
    customer_vicinity: str = "std"
    strategy: str = "steepest_descent"
    operators: Tuple[str, ...] = OPERATORS

    # routing
    solver: str = "baseline"
    solver_command: Tuple[str, ...] = ()
    construction: str = "solomon_i1_like"
    restarts: int = 4
    stop_mode: str = "time"
    max_stale: int = 2
    execution_mode: str = "sequential"
    max_workers: Optional[int] = None

    # reproducible runs size routing and improvement by move evaluations
    reproducible: bool = True
    work_rate: float = WORK_RATE

    seed: int = 0

    def validate(self):
        """
        Check every field.

        Raises:
            ValueError: On the first invalid value
        """
        choices = {
            "method": METHODS,
            "q_policy": Q_POLICIES,
            "linkage": LINKAGES,
            "vicinity_linkage": LINKAGES,
            "fuzzy_init": FUZZY_INITS,
            "metric": METRICS,
            "customer_vicinity": ("std", "euclidean"),
            "strategy": STRATEGIES,
            "solver": SOLVERS,
            "construction": CONSTRUCTIONS,
            "stop_mode": STOP_MODES,
            "execution_mode": EXECUTION_MODES,
        }
        for name, allowed in choices.items():
            value = getattr(self, name)
            if value not in allowed:
                raise ValueError(f"Invalid {name}: {value!r} (expected one of {', '.join(allowed)})")

        if self.q_policy == "fixed" and (self.q is None or self.q < 1):
            raise ValueError("q must be a positive integer for the fixed q policy")
        if self.target_size < 1:
            raise ValueError(f"target_size must be positive, got {self.target_size}")
        if not self.kappa > 1:
            raise ValueError(f"kappa must be greater than 1, got {self.kappa}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.min_subproblem_budget < 0:
            raise ValueError("min_subproblem_budget must be non-negative")
        if self.phi < 0 or self.varphi < 0:
            raise ValueError("phi and varphi must be non-negative")
        if self.rho is not None and not 0 <= self.rho <= 1:
            raise ValueError(f"rho must be in [0, 1], got {self.rho}")
        if not self.operators:
            raise ValueError("at least one operator is required")
        unknown = [op for op in self.operators if op not in OPERATORS]
        if unknown:
            raise ValueError(f"Unknown operators: {unknown}")
        if self.solver == "external" and not self.solver_command:
            raise ValueError("solver_command is required for the external solver")
        if self.restarts < 1 or self.max_stale < 1:
            raise ValueError("restarts and max_stale must be at least 1")
        if self.max_workers is not None and self.max_workers < 1:
            raise ValueError(f"max_workers must be positive, got {self.max_workers}")
        if not self.work_rate > 0:
            raise ValueError(f"work_rate must be positive, got {self.work_rate}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["operators"] = list(self.operators)
        data["solver_command"] = list(self.solver_command)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DriConfig":
        """
        Build a validated config from a mapping.

        Raises:
            ValueError: On unknown keys or invalid values
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown configuration keys: {', '.join(unknown)}")
        values = dict(data)
        for key in ("operators", "solver_command"):
            if key in values and values[key] is not None:
                values[key] = tuple(values[key])
        config = cls(**values)
        config.validate()
        return config

    def clustering_spec(self, q: int) -> ClusteringSpec:
        return ClusteringSpec(
            method=self.method,
            q=q,
            kappa=self.kappa,
            epsilon=self.epsilon,
            linkage=self.linkage,
            seed=derive_seed(self.seed, "clustering"),
            max_iterations=self.max_iterations,
            fuzzy_init=self.fuzzy_init,
        )

    def build_solver(self) -> RoutingSolver:
        if self.solver == "external":
            return ExternalSolver(self.solver_command)
        return BaselineSolver(BaselineSolverConfig(
            construction=self.construction,
            restarts=self.restarts,
            stop_mode=self.stop_mode,
            max_stale=self.max_stale,
            reproducible=self.reproducible,
            work_rate=self.work_rate,
        ))


def _rss_mb() -> float:
    return psutil.Process().memory_info().rss / (1024 * 1024)


class _Phase:
    """Records one pipeline stage into the run report."""

    def __init__(self, report: RunReport, name: str):
        self.report = report
        self.name = name
        self.result = PhaseResult(name, PhaseState.PENDING)
        self.started = 0.0
        self.elapsed = 0.0

    def __enter__(self):
        self.result.state = PhaseState.RUNNING
        self.result.start_time = datetime.now()
        self.started = time.perf_counter()
        logger.info(f"Starting {self.name} phase")
        return self

    def __exit__(self, exc_type, exc, tb):
        self.elapsed = time.perf_counter() - self.started
        self.result.end_time = datetime.now()
        self.report.add_phase_result(self.result)
        self.report.peak_rss_mb = max(self.report.peak_rss_mb or 0.0, _rss_mb())
        if exc is not None:
            self.result.state = PhaseState.FAILED
            self.result.error = exc
            logger.error(f"{self.name} phase failed: {exc}")
            if isinstance(exc, PipelineError):
                return False
            raise PipelineError(self.name, exc) from exc
        self.result.state = PhaseState.SUCCESS
        logger.info(f"Finished {self.name} phase in {self.elapsed:.3f}s")
        return False


def _skip(report: RunReport, name: str, reason: str):
    report.add_phase_result(PhaseResult(name, PhaseState.SKIPPED, detail={"reason": reason}))
    logger.info(f"Skipping {name} phase: {reason}")


def run_dri(
    instance: Instance,
    config: Optional[DriConfig] = None,
    bks: Optional[float] = None,
    solver: Optional[RoutingSolver] = None,
) -> Tuple[Solution, RunReport]:
    """
    Decompose the instance, route every subproblem and improve the merged solution.

    Args:
        instance: Instance to solve
        config: Run configuration (defaults to DriConfig())
        bks: Optional best-known cost for gap reporting
        solver: Routing backend overriding the configured one

    Returns:
        (final solution, run report)

    Raises:
        PipelineError: When a stage fails; ``stage`` names it
    """
    config = config or DriConfig()
    config.validate()
    solver = solver or config.build_solver()
    if config.reproducible and not solver.capabilities()["deterministic"]:
        logger.warning(f"The {solver.name} solver is not deterministic: routing results may differ between runs")

    report = RunReport(instance.name, config.to_dict())
    report.start_time = datetime.now()
    report.state = RunState.RUNNING
    logger.info(f"Running DRI on {instance.name} ({instance.n} customers, theta={config.theta}s)")

    try:
        solution = _run(instance, config, bks, solver, report)
    finally:
        report.end_time = datetime.now()
        report.update_state()

    logger.info(
        f"DRI finished on {instance.name}: cost {report.cost_after:.2f}, "
        f"{report.routes_after} routes, state {report.state.value}"
    )
    return solution, report


def _run(instance: Instance, config: DriConfig, bks: Optional[float], solver: RoutingSolver, report: RunReport) -> Solution:
    with _Phase(report, "similarity") as phase:
        similarity_config = SimilarityConfig.from_instance(instance, config.lam, config.circular_angles, config.metric)
        if config.matrix_file:
            similarity = reuse_matrix(instance, similarity_config, config.matrix_file)
        else:
            similarity = build_similarity_matrix(instance, similarity_config)
        phase.result.detail = {"reused": bool(config.matrix_file)}
    report.similarity_time = phase.elapsed

    with _Phase(report, "clustering") as phase:
        q = choose_q(instance, config.q_policy, config.target_size, config.q)
        if q > 1:
            clustering = cluster_customers(similarity, config.clustering_spec(q))
        else:
            clustering = single_cluster(instance.n, config.method)
        phase.result.detail = {"q": q, "sizes": clustering.sizes(), "iterations": clustering.iterations}
    report.clustering_time = phase.elapsed
    report.q = q
    report.nu = report.similarity_time + report.clustering_time

    with _Phase(report, "decompose") as phase:
        sizes = clustering.sizes()
        alpha = config.alpha if q > 1 else 1.0
        budget = budget_time(config.theta, report.nu, alpha, sizes)
        # measured nu varies between runs; work is sized from the nominal budget
        planned = budget_time(config.theta, 0.0, alpha, sizes) if config.reproducible else budget
        subproblems = build_subproblems(instance, clustering, planned.per_subproblem)
        vicinity = None
        if q > 1:
            vicinity = build_vicinities(
                similarity,
                clustering,
                phi=config.phi,
                varphi=config.varphi,
                rho=config.rho,
                linkage=config.vicinity_linkage,
                customer_metric=config.customer_vicinity,
                instance=instance,
            )
    report.delta, report.omega, report.upsilon = budget.delta, budget.omega, budget.upsilon
    report.subproblem_budgets = list(budget.per_subproblem)
    report.subproblem_sizes = [sub.size for sub in subproblems]
    report.fleets = [sub.fleet for sub in subproblems]
    report.fleet_overflow = sum(report.fleets) > instance.fleet_size
    report.edge_reduction = edge_reduction(report.subproblem_sizes, instance.n)

    with _Phase(report, "routing") as phase:
        routed = solve_subproblems(
            subproblems,
            solver,
            seed=config.seed,
            execution_mode=config.execution_mode,
            max_workers=config.max_workers,
            min_budget=config.min_subproblem_budget,
            report=report,
        )
    report.routing_time = phase.elapsed

    with _Phase(report, "merge"):
        merged = merge_solutions(routed, subproblems, instance)
    report.cost_before = merged.total_cost
    report.routes_before = len(merged.routes)

    final = merged
    if q == 1:
        _skip(report, "improve", "no decomposition")
    elif planned.upsilon <= 0:
        _skip(report, "improve", "no improvement budget")
    else:
        with _Phase(report, "improve") as phase:
            context = MoveContext(
                operators=config.operators,
                strategy=config.strategy,
                vicinity=vicinity,
                budget=None if config.reproducible else budget.upsilon,
                max_evaluations=int(planned.upsilon * config.work_rate) if config.reproducible else None,
            )
            result = local_search(instance, merged, context)
            final = result.solution
            phase.result.detail = {
                "moves": result.moves,
                "stop_reason": result.stop_reason,
                "evaluations": result.evaluations,
            }
        report.improvement_time = phase.elapsed
        report.improvement_log = result.log

    report.cost_after = final.total_cost
    report.routes_after = len(final.routes)
    report.feasible = final.feasible
    report.fleet_feasible = final.fleet_feasible
    report.route_summaries = [
        {
            "vehicle": r.vehicle,
            "origin": r.origin,
            "customers": len(r.visits),
            "load": round(r.load, 2),
            "distance": round(r.distance, 2),
            "utilization": round(r.load / instance.capacity, 4),
        }
        for r in final.routes
    ]
    if bks is not None:
        report.gaps = improvement_report(report.cost_before, report.cost_after, bks).to_dict()
    if not final.fleet_feasible:
        logger.warning(f"{instance.name}: {len(final.routes)} routes exceed the fleet of {instance.fleet_size}")
    return final


def run_baseline_metric(
    instance: Instance,
    config: Optional[DriConfig] = None,
    bks: Optional[float] = None,
    solver: Optional[RoutingSolver] = None,
) -> Tuple[Solution, RunReport]:
    """Run the same pipeline with pure travel cost as the similarity metric."""
    config = replace(config or DriConfig(), metric="euclidean")
    return run_dri(instance, config, bks, solver)
