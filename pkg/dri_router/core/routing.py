import json
import logging
import os
import subprocess
import tempfile
import time
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..utils.seeding import derive_seed
from .decompose import SubProblem
from .improve import EPS, INTRA_OPERATORS, WORK_RATE, MoveContext, improve_route, local_search
from .instance import Instance, Solution, build_route, format_instance
from .state import PhaseResult, PhaseState, RunReport


logger = logging.getLogger(__name__)

CONSTRUCTIONS = ("solomon_i1_like", "savings")
STOP_MODES = ("time", "iterations")
EXECUTION_MODES = ("sequential", "threading", "multiprocessing")

# (mu, lambda, alpha1, seed rule) parameter sets cycled over restarts.
I1_PARAMETERS = (
    (1.0, 1.0, 1.0, "farthest"),
    (1.0, 2.0, 1.0, "farthest"),
    (1.0, 1.0, 0.0, "deadline"),
    (1.0, 2.0, 0.5, "deadline"),
    (1.0, 1.0, 0.5, "farthest"),
    (1.0, 2.0, 0.0, "farthest"),
)


class SolverError(RuntimeError):
    """Raised when a routing backend fails to return a solution."""


class RoutingError(RuntimeError):
    """Raised when a subproblem can't be solved, even by the fallback solver."""

    def __init__(self, message: str, subproblem: Optional[int] = None):
        self.subproblem = subproblem
        super().__init__(message)


class RoutingSolver(ABC):
    """
    Contract of a routing backend.

    ``solve`` returns a Solution on the given instance's local vertex ids;
    routes that break constraints carry explicit violation flags.
    """

    name = "solver"
    respects_budget = True
    deterministic = True

    @abstractmethod
    def solve(self, instance: Instance, fleet: int, budget: Optional[float], seed: int) -> Solution:
        """
        Solve a VRPTW instance.

        Args:
            instance: Instance to route
            fleet: Number of available vehicles
            budget: Wall-clock budget in seconds (None for unlimited)
            seed: Random seed

        Returns:
            Solution on the instance's vertex ids
        """

    def capabilities(self) -> Dict[str, bool]:
        return {"respects_budget": self.respects_budget, "deterministic": self.deterministic}


@dataclass
class BaselineSolverConfig:
    """
    Settings of the built-in solver.

    Attributes:
        construction: 'solomon_i1_like' or 'savings'
        intra_operators: Intra-route operators used after construction
        inter_route: Run inter-route local search after construction
        restarts: Number of seeded restarts (cap in both stop modes)
        stop_mode: 'time' (restarts until the budget ends) or 'iterations'
            (stop after ``max_stale`` restarts without improvement)
        max_stale: Non-improving restarts tolerated in 'iterations' mode
        noise: Relative perturbation of construction scores on restarts
        seed: Default seed when none is passed to solve
        reproducible: Convert the budget into a count of move evaluations
            (budget x work_rate) instead of stopping on the wall clock
        work_rate: Move evaluations granted per budget second
    """
    construction: str = "solomon_i1_like"
    intra_operators: Tuple[str, ...] = INTRA_OPERATORS
    inter_route: bool = True
    restarts: int = 4
    stop_mode: str = "time"
    max_stale: int = 2
    noise: float = 0.1
    seed: int = 0
    reproducible: bool = True
    work_rate: float = WORK_RATE

    def validate(self):
        if self.construction not in CONSTRUCTIONS:
            raise ValueError(f"Invalid construction: {self.construction}")
        if self.stop_mode not in STOP_MODES:
            raise ValueError(f"Invalid stop mode: {self.stop_mode}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be at least 1, got {self.restarts}")
        if self.max_stale < 1:
            raise ValueError(f"max_stale must be at least 1, got {self.max_stale}")
        if not self.work_rate > 0:
            raise ValueError(f"work_rate must be positive, got {self.work_rate}")
        unknown = [op for op in self.intra_operators if op not in INTRA_OPERATORS]
        if unknown:
            raise ValueError(f"Unknown intra-route operators: {unknown}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["intra_operators"] = list(self.intra_operators)
        return data


class _PartialRoute:
    """Route under construction with forward start times and latest feasible starts."""

    def __init__(self, instance: Instance, visits: List[int]):
        self.instance = instance
        self.visits = visits
        self.refresh()

    def refresh(self):
        demand, earliest, latest, service = self.instance.vertex_table
        times = self.instance.time_rows
        self.load = sum(demand[v] for v in self.visits)

        starts = []
        clock, prev = earliest[0], 0
        for v in self.visits:
            clock = max(earliest[v], clock + service[prev] + times[prev][v])
            starts.append(clock)
            prev = v
        starts.append(clock + service[prev] + times[prev][0] if self.visits else earliest[0])
        self.starts = starts

        latest_starts = [0.0] * (len(self.visits) + 1)
        latest_starts[-1] = latest[0]
        nxt = 0
        for k in range(len(self.visits) - 1, -1, -1):
            v = self.visits[k]
            latest_starts[k] = min(latest[v], latest_starts[k + 1] - service[v] - times[v][nxt])
            nxt = v
        self.latest_starts = latest_starts

    def insertion(self, u: int, mu: float, alpha1: float) -> Optional[Tuple[float, int]]:
        """Best feasible insertion of u as (c1 score, position), or None."""
        demand, earliest, latest, service = self.instance.vertex_table
        if self.load + demand[u] > self.instance.capacity + 1e-9:
            return None
        times = self.instance.time_rows
        costs = self.instance.cost_rows
        best = None
        prev_start = earliest[0]
        prev = 0
        for k in range(len(self.visits) + 1):
            nxt = self.visits[k] if k < len(self.visits) else 0
            if k > 0:
                prev = self.visits[k - 1]
                prev_start = self.starts[k - 1]
            arrival = max(earliest[u], prev_start + service[prev] + times[prev][u])
            if arrival <= latest[u]:
                reached = arrival + service[u] + times[u][nxt]
                pushed = reached if nxt == 0 else max(earliest[nxt], reached)
                if pushed <= self.latest_starts[k]:
                    c11 = costs[prev][u] + costs[u][nxt] - mu * costs[prev][nxt]
                    c12 = pushed - self.starts[k]
                    score = alpha1 * c11 + (1.0 - alpha1) * c12
                    if best is None or score < best[0] - EPS:
                        best = (score, k)
        return best

    def insert(self, u: int, position: int):
        self.visits.insert(position, u)
        self.refresh()


def construct_i1(instance: Instance, rng: np.random.Generator, restart: int, noise: float) -> List[List[int]]:
    """
    Sequential insertion construction in the style of Solomon's I1 heuristic.

    Restart 0 uses unperturbed scores; later restarts perturb the selection
    criterion with ``noise``.
    """
    mu, lam, alpha1, seed_rule = I1_PARAMETERS[restart % len(I1_PARAMETERS)]
    costs = instance.cost_rows
    latest = instance.vertex_table[2]
    unrouted = set(range(1, instance.n + 1))
    routes: List[List[int]] = []

    while unrouted:
        candidates = sorted(unrouted)
        if seed_rule == "farthest":
            seed = max(candidates, key=lambda v: (costs[0][v], -v))
        else:
            seed = min(candidates, key=lambda v: (latest[v], v))
        route = _PartialRoute(instance, [seed])
        unrouted.discard(seed)

        while unrouted:
            best = None
            for u in sorted(unrouted):
                found = route.insertion(u, mu, alpha1)
                if found is None:
                    continue
                c1, position = found
                c2 = lam * costs[0][u] - c1
                if restart > 0 and noise > 0:
                    c2 *= 1.0 + noise * float(rng.uniform(-1.0, 1.0))
                if best is None or c2 > best[0] + EPS:
                    best = (c2, u, position)
            if best is None:
                break
            route.insert(best[1], best[2])
            unrouted.discard(best[1])

        routes.append(route.visits)
    return routes


def construct_savings(instance: Instance, rng: np.random.Generator, restart: int, noise: float) -> List[List[int]]:
    """Clarke-Wright parallel savings with time-window checks on every merge."""
    costs = instance.cost_rows
    demand = instance.vertex_table[0]
    n = instance.n

    savings = []
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i == j:
                continue
            value = costs[0][i] + costs[0][j] - costs[i][j]
            if restart > 0 and noise > 0:
                value *= 1.0 + noise * float(rng.uniform(-1.0, 1.0))
            if value > EPS:
                savings.append((-value, i, j))
    savings.sort()

    routes: Dict[int, List[int]] = {v: [v] for v in range(1, n + 1)}
    owner = {v: v for v in range(1, n + 1)}
    loads = {v: demand[v] for v in range(1, n + 1)}

    for _, i, j in savings:
        ri, rj = owner[i], owner[j]
        if ri == rj or routes[ri][-1] != i or routes[rj][0] != j:
            continue
        if loads[ri] + loads[rj] > instance.capacity + 1e-9:
            continue
        merged = routes[ri] + routes[rj]
        if not build_route(instance, merged).feasible:
            continue
        routes[ri] = merged
        loads[ri] += loads.pop(rj)
        del routes[rj]
        for v in merged:
            owner[v] = ri

    return [routes[key] for key in sorted(routes)]


class BaselineSolver(RoutingSolver):
    """
    Built-in construction + local-search solver.

    Each restart builds routes with the configured construction, runs an
    intra-route descent on every route and, optionally, inter-route local
    search over all route pairs. The best restart wins, preferring solutions
    within the fleet bound and then lower cost.

    Reproducible runs never read the clock: the budget becomes a number of
    move evaluations shared by all restarts, so a seed fixes the result.
    """

    name = "baseline"

    def __init__(self, config: Optional[BaselineSolverConfig] = None):
        self.config = config or BaselineSolverConfig()
        self.config.validate()
        self.deterministic = self.config.reproducible

    def solve(self, instance: Instance, fleet: int, budget: Optional[float], seed: Optional[int] = None) -> Solution:
        seed = self.config.seed if seed is None else seed
        start = time.perf_counter()
        timed = budget is not None and budget > 0
        deadline = start + budget if timed and not self.config.reproducible else None
        allowance = int(budget * self.config.work_rate) if timed and self.config.reproducible else None

        best: Optional[Solution] = None
        best_key = None
        stale = 0
        restart = 0
        spent = 0

        while True:
            if self.config.stop_mode == "time" and restart >= self.config.restarts:
                break
            if self.config.stop_mode == "iterations" and (stale >= self.config.max_stale or restart >= self.config.restarts * 25):
                break
            if restart > 0 and deadline is not None and time.perf_counter() >= deadline:
                break
            if restart > 0 and allowance is not None and spent >= allowance:
                break

            remaining = None if allowance is None else allowance - spent
            candidate, used = self._restart(instance, fleet, seed, restart, deadline, remaining)
            spent += used
            key = (max(0, len(candidate.routes) - fleet), candidate.total_cost)
            if best_key is None or key[0] < best_key[0] or (key[0] == best_key[0] and key[1] < best_key[1] - EPS):
                best, best_key = candidate, key
                stale = 0
            else:
                stale += 1
            restart += 1

        if not best.fleet_feasible:
            logger.warning(
                f"Baseline solver used {len(best.routes)} routes on {instance.name}, fleet limit is {fleet}"
            )
        logger.debug(
            f"Baseline solved {instance.name} in {time.perf_counter() - start:.2f}s "
            f"({restart} restarts, {spent} move evaluations, cost {best.total_cost:.2f})"
        )
        return best

    def _restart(
        self,
        instance: Instance,
        fleet: int,
        seed: int,
        restart: int,
        deadline: Optional[float],
        allowance: Optional[int],
    ) -> Tuple[Solution, int]:
        rng = np.random.default_rng([seed, restart])
        if self.config.construction == "savings":
            sequences = construct_savings(instance, rng, restart, self.config.noise)
        else:
            sequences = construct_i1(instance, rng, restart, self.config.noise)

        if self.config.intra_operators:
            sequences = [
                improve_route(instance, seq, self.config.intra_operators, deadline) if len(seq) > 1 else seq
                for seq in sequences
            ]
        solution = Solution.from_sequences(instance, sequences, fleet_size=fleet)

        if self.config.inter_route and len(solution.routes) > 1:
            remaining = None if deadline is None else max(0.0, deadline - time.perf_counter())
            context = MoveContext(strategy="first_descent", budget=remaining, max_evaluations=allowance)
            result = local_search(instance, solution, context)
            return result.solution, result.evaluations
        return solution, 0


def baseline_solve(
    instance: Instance,
    fleet: Optional[int] = None,
    budget: Optional[float] = None,
    seed: int = 0,
    config: Optional[BaselineSolverConfig] = None,
) -> Solution:
    """Solve an instance with the built-in solver."""
    fleet = instance.fleet_size if fleet is None else fleet
    return BaselineSolver(config).solve(instance, fleet, budget, seed)


class ExternalSolver(RoutingSolver):
    """
    Adapter for a routing binary speaking the subprocess protocol.

    The command is called with ``<instance path> <fleet> <budget> <seed>``
    appended; the instance file uses the Gehring-Homberger layout and the
    solution JSON is read from stdout. A nonzero exit status is a failure.
    """

    name = "external"
    deterministic = False

    def __init__(self, command: Sequence[str], grace: float = 5.0, keep_files: bool = False):
        if not command:
            raise ValueError("external solver command must not be empty")
        self.command = list(command)
        self.grace = grace
        self.keep_files = keep_files

    def solve(self, instance: Instance, fleet: int, budget: Optional[float], seed: int) -> Solution:
        handle, path = tempfile.mkstemp(prefix=f"{instance.name}_", suffix=".txt")
        try:
            with os.fdopen(handle, "w") as f:
                f.write(format_instance(instance))

            budget_arg = budget if budget is not None else 0
            argv = self.command + [path, str(fleet), f"{budget_arg:g}", str(seed)]
            timeout = None if budget is None or budget <= 0 else budget + self.grace
            logger.debug(f"Running external solver: {' '.join(argv)}")

            try:
                completed = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
            except subprocess.TimeoutExpired:
                raise SolverError(f"external solver timed out after {timeout:.1f}s on {instance.name}")
            except OSError as e:
                raise SolverError(f"external solver could not be started: {e}")

            if completed.returncode != 0:
                raise SolverError(
                    f"external solver exited with status {completed.returncode}: {completed.stderr.strip()}"
                )
            try:
                data = json.loads(completed.stdout)
                return Solution.from_routes(instance, Solution.from_dict(instance, data).routes, fleet)
            except (json.JSONDecodeError, ValueError, TypeError) as e:
                raise SolverError(f"external solver returned an invalid solution: {e}")
        finally:
            if not self.keep_files and os.path.exists(path):
                os.remove(path)


def _solve_wrapper(solver: RoutingSolver, instance: Instance, fleet: int, budget: float, seed: int) -> Tuple[Solution, float]:
    start = time.perf_counter()
    solution = solver.solve(instance, fleet, budget, seed)
    return solution, time.perf_counter() - start


def _tag(solution: Solution, instance: Instance, origin: int, fleet: int) -> Solution:
    return Solution.from_sequences(instance, solution.sequences(), [origin] * len(solution.routes), fleet_size=fleet)


def solve_subproblems(
    subproblems: Sequence[SubProblem],
    solver: RoutingSolver,
    budgets: Optional[Sequence[float]] = None,
    seed: int = 0,
    execution_mode: str = "sequential",
    max_workers: Optional[int] = None,
    min_budget: float = 1.0,
    fallback: Optional[RoutingSolver] = None,
    report: Optional[RunReport] = None,
) -> List[Solution]:
    """
    Solve every subproblem independently.

    Args:
        subproblems: Subproblems to solve
        solver: Routing backend
        budgets: Seconds per subproblem (defaults to each subproblem's budget)
        seed: Master seed; each subproblem gets its own derived seed
        execution_mode: 'sequential', 'threading' or 'multiprocessing'
        max_workers: Worker count for the concurrent modes
        min_budget: Budgets below this are raised to it
        fallback: Solver used when the backend fails (defaults to the baseline)
        report: Optional run report receiving one phase result per subproblem

    Returns:
        One Solution per subproblem, on local ids, routes tagged with origin p

    Raises:
        RoutingError: If a subproblem fails with both the backend and the fallback
    """
    if execution_mode not in EXECUTION_MODES:
        raise ValueError(f"Invalid execution mode: {execution_mode}")
    if budgets is None:
        budgets = [sub.budget for sub in subproblems]
    if len(budgets) != len(subproblems):
        raise ValueError(f"expected {len(subproblems)} budgets, got {len(budgets)}")

    effective = []
    for sub, budget in zip(subproblems, budgets):
        if budget < min_budget:
            logger.warning(f"Subproblem {sub.index}: budget {budget:.2f}s raised to {min_budget:.2f}s")
            budget = min_budget
        effective.append(budget)

    seeds = [derive_seed(seed, "solver", sub.index) for sub in subproblems]
    outcomes: Dict[int, Any] = {}
    started: Dict[int, datetime] = {}

    if execution_mode == "sequential" or len(subproblems) == 1:
        for k, sub in enumerate(subproblems):
            started[k] = datetime.now()
            try:
                outcomes[k] = _solve_wrapper(solver, sub.instance, sub.fleet, effective[k], seeds[k])
            except Exception as e:
                outcomes[k] = e
    else:
        executor_class = ThreadPoolExecutor if execution_mode == "threading" else ProcessPoolExecutor
        with executor_class(max_workers=max_workers) as executor:
            future_to_index = {}
            for k, sub in enumerate(subproblems):
                started[k] = datetime.now()
                future = executor.submit(_solve_wrapper, solver, sub.instance, sub.fleet, effective[k], seeds[k])
                future_to_index[future] = k
            for future in as_completed(future_to_index):
                k = future_to_index[future]
                try:
                    outcomes[k] = future.result()
                except Exception as e:
                    outcomes[k] = e

    solutions = []
    for k, sub in enumerate(subproblems):
        outcome = outcomes[k]
        used_solver = solver
        fell_back = False
        if isinstance(outcome, Exception):
            logger.warning(f"Subproblem {sub.index}: {solver.name} solver failed ({outcome}), falling back to baseline")
            backup = fallback or BaselineSolver()
            try:
                outcome = _solve_wrapper(backup, sub.instance, sub.fleet, effective[k], seeds[k])
            except Exception as e:
                if report is not None:
                    report.subproblems.append(PhaseResult(
                        f"subproblem_{sub.index}", PhaseState.FAILED, started[k], datetime.now(), error=e,
                    ))
                raise RoutingError(f"subproblem {sub.index} could not be solved: {e}", sub.index) from e
            used_solver = backup
            fell_back = True

        solution, duration = outcome
        tagged = _tag(solution, sub.instance, sub.index, sub.fleet)
        solutions.append(tagged)

        if duration > effective[k] + 1.0:
            logger.warning(f"Subproblem {sub.index} took {duration:.2f}s, budget was {effective[k]:.2f}s")
        if report is not None:
            report.subproblems.append(PhaseResult(
                f"subproblem_{sub.index}",
                PhaseState.SUCCESS,
                started[k],
                datetime.now(),
                detail={
                    "solver": used_solver.name,
                    "fallback": fell_back,
                    "deterministic": used_solver.capabilities()["deterministic"],
                    "budget": effective[k],
                    "duration": duration,
                    "customers": sub.size,
                    "fleet": sub.fleet,
                    "routes": len(tagged.routes),
                    "cost": round(tagged.total_cost, 2),
                },
            ))
        logger.info(
            f"Subproblem {sub.index} solved by {used_solver.name} in {duration:.2f}s: "
            f"{len(tagged.routes)} routes, cost {tagged.total_cost:.2f}"
        )

    return solutions


def merge_solutions(
    solutions: Sequence[Solution],
    subproblems: Sequence[SubProblem],
    parent: Instance,
) -> Solution:
    """
    Re-index subproblem solutions to parent ids and combine them.

    Feasibility is re-verified on the parent; origins are the subproblem indices.
    """
    if len(solutions) != len(subproblems):
        raise ValueError(f"expected {len(subproblems)} solutions, got {len(solutions)}")

    sequences, origins = [], []
    for solution, sub in zip(solutions, subproblems):
        mapping = sub.local_to_parent
        for route in solution.routes:
            sequences.append([mapping[v] for v in route.visits])
            origins.append(sub.index)
    return Solution.from_sequences(parent, sequences, origins)
