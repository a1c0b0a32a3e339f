"""
Independent re-implementations used as ground truth, and the oracle suite.

Every oracle here is written from the definitions, without sharing code
paths with the optimised modules it checks.
"""

import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..core.clustering import (
    Clustering,
    ClusteringSpec,
    agglomerate,
    fuzzy_cmedoids,
    kmedoids,
    medoid_objective,
)
from ..core.decompose import budget_time, build_vicinities, edge_reduction
from ..core.improve import INTRA_OPERATORS, OPERATORS, enumerate_candidates
from ..core.instance import (
    CAPACITY_EPS,
    Instance,
    ScheduledRoute,
    Solution,
    Vertex,
    build_route,
    propagate_schedule,
)
from ..core.pipeline import DriConfig, run_dri
from ..core.routing import BaselineSolverConfig, baseline_solve
from ..core.similarity import SimilarityConfig, build_similarity_matrix
from ..utils.seeding import derive_seed, make_rng
from .synthetic import random_instance


logger = logging.getLogger(__name__)

TOLERANCE = 1e-9


@dataclass
class OracleCheck:
    """Outcome of one oracle."""
    name: str
    passed: bool
    detail: str = ""
    cases: int = 0
    elapsed: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "detail": self.detail,
            "cases": self.cases,
            "elapsed": round(self.elapsed, 3),
        }


@dataclass
class OracleReport:
    checks: List[OracleCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failed(self) -> List[OracleCheck]:
        return [check for check in self.checks if not check.passed]

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "checks": [check.to_dict() for check in self.checks]}


class OracleFailure(AssertionError):
    """Raised inside an oracle with the first mismatch found."""


# Schedules


def naive_schedule(instance: Instance, visits: Sequence[int]) -> Tuple[bool, List[float], Optional[str]]:
    """
    Schedule a visit sequence straight from the vertex records.

    Returns:
        (feasible, service start times, first violation or None)
    """
    vertices = instance.vertices
    depot = vertices[0]
    clock = depot.earliest
    previous = 0
    load = 0.0
    starts: List[float] = []
    reason: Optional[str] = None

    for position, index in enumerate(visits):
        vertex = vertices[index]
        arrival = clock + vertices[previous].service + float(instance.travel_time[previous, index])
        start = arrival if arrival > vertex.earliest else vertex.earliest
        load += vertex.demand
        if reason is None and start > vertex.latest:
            reason = f"time_window at position {position}"
        elif reason is None and load > instance.capacity + CAPACITY_EPS:
            reason = f"capacity at position {position}"
        starts.append(start)
        clock = start
        previous = index

    if visits:
        back = clock + vertices[previous].service + float(instance.travel_time[previous, 0])
        if reason is None and back > depot.latest:
            reason = f"depot_closing at position {len(visits)}"
    return reason is None, starts, reason


def check_schedule_fixture(fixture: Dict[str, Any]) -> OracleCheck:
    """
    Compare build_route against a recorded schedule.

    The fixture holds ``instance``, ``visits``, ``start_times`` and ``feasible``.
    A mismatch fails with the position and customer involved.
    """
    instance: Instance = fixture["instance"]
    visits = list(fixture["visits"])
    expected = list(fixture["start_times"])
    route = build_route(instance, visits)

    if route.feasible != fixture["feasible"]:
        return OracleCheck(
            "schedule_fixture", False,
            f"feasibility mismatch: expected {fixture['feasible']}, got {route.feasible}", 1,
        )
    for position, (want, got) in enumerate(zip(expected, route.start_times)):
        if abs(want - got) > TOLERANCE:
            return OracleCheck(
                "schedule_fixture", False,
                f"start time mismatch at position {position} (customer {visits[position]}): "
                f"expected {want}, got {got}",
                1,
            )
    if len(expected) != len(route.start_times):
        return OracleCheck("schedule_fixture", False, "start time count mismatch", 1)
    return OracleCheck("schedule_fixture", True, "", 1)


def schedule_fixture(seed: int = 0, n: int = 8) -> Dict[str, Any]:
    """A recorded schedule of a random visit order, taken from the naive scheduler."""
    instance = random_instance(n, seed)
    rng = make_rng(seed, "oracle", 1)
    visits = [int(v) for v in rng.permutation(np.arange(1, n + 1))[: max(1, n // 2)]]
    feasible, starts, _ = naive_schedule(instance, visits)
    return {"instance": instance, "visits": visits, "start_times": starts, "feasible": feasible}


def corrupt_fixture(fixture: Dict[str, Any], position: int = 0, shift: float = 1.0) -> Dict[str, Any]:
    corrupted = dict(fixture)
    starts = list(fixture["start_times"])
    starts[position] += shift
    corrupted["start_times"] = starts
    return corrupted


def edge_fixture(seed: int, n: int = 40) -> Instance:
    """
    Instance where the depot never binds: every ready time exceeds the
    direct travel time, capacity fits any pair and the depot closes late.
    """
    rng = make_rng(seed, "oracle", 2)
    depot = Vertex(0, 50.0, 50.0, 0.0, 0.0, 1e5, 0.0)
    customers = []
    for k in range(n):
        x, y = rng.uniform(0.0, 100.0, size=2)
        earliest = float(rng.integers(80, 601))
        customers.append(Vertex(k + 1, float(x), float(y), 1.0, earliest, earliest + float(rng.integers(0, 151)), 10.0))
    return Instance(f"edge_fixture_{seed}", depot, customers, n, float(n))


# Clustering


def _naive_linkage(matrix: np.ndarray, a: Sequence[int], b: Sequence[int], linkage: str) -> float:
    values = [matrix[i, j] for i in a for j in b]
    if linkage == "single":
        return min(values)
    if linkage == "complete":
        return max(values)
    return sum(values) / (len(a) * len(b))


def naive_agglomerative(
    matrix: np.ndarray,
    q: int,
    linkage: str = "average",
    rng: Optional[np.random.Generator] = None,
) -> List[Tuple[int, int, float]]:
    """
    Agglomerate by recomputing every cluster-pair linkage from scratch.

    Clusters are named by their smallest member; exactly tied pairs are
    drawn uniformly in (a, b) order.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    clusters: Dict[int, List[int]] = {k: [k] for k in range(matrix.shape[0])}
    merges = []
    while len(clusters) > q:
        names = sorted(clusters)
        scores = {
            (a, b): _naive_linkage(matrix, clusters[a], clusters[b], linkage)
            for a, b in itertools.combinations(names, 2)
        }
        best = min(scores.values())
        tied = [pair for pair in sorted(scores) if scores[pair] == best]
        a, b = tied[int(rng.choice(len(tied)))] if len(tied) > 1 else tied[0]
        merges.append((a, b, best))
        clusters[a] = sorted(clusters[a] + clusters.pop(b))
    return merges


def exhaustive_kmedoids_objective(matrix: np.ndarray, q: int) -> float:
    """Smallest assignment cost over every set of q medoids."""
    n = matrix.shape[0]
    best = math.inf
    for medoids in itertools.combinations(range(n), q):
        cost = sum(min(matrix[i, m] for m in medoids) for i in range(n))
        best = min(best, cost)
    return best


# Routing


def exhaustive_vrptw_optimum(instance: Instance) -> float:
    """
    Optimal distance of a small instance with an unlimited fleet.

    A depth-first search finds the cheapest feasible route over every
    customer subset; a subset-partition recursion then combines routes.
    """
    n = instance.n
    if n > 10:
        raise ValueError(f"exhaustive search is limited to 10 customers, got {n}")
    cost = instance.cost.tolist()
    travel = instance.travel_time.tolist()
    demand, earliest, latest, service = (v.tolist() for v in (instance.demand, instance.earliest, instance.latest, instance.service))
    capacity = instance.capacity + CAPACITY_EPS

    best_route = [math.inf] * (1 << n)

    def extend(last: int, mask: int, clock: float, load: float, distance: float):
        if mask:
            back = clock + service[last] + travel[last][0]
            if back <= latest[0]:
                closed = distance + cost[last][0]
                if closed < best_route[mask]:
                    best_route[mask] = closed
        for j in range(1, n + 1):
            bit = 1 << (j - 1)
            if mask & bit:
                continue
            start = max(earliest[j], clock + service[last] + travel[last][j])
            if start > latest[j] or load + demand[j] > capacity:
                continue
            extend(j, mask | bit, start, load + demand[j], distance + cost[last][j])

    extend(0, 0, earliest[0], 0.0, 0.0)

    full = (1 << n) - 1
    best = [math.inf] * (1 << n)
    best[0] = 0.0
    for mask in range(1, full + 1):
        low = mask & -mask
        rest = mask ^ low
        sub = rest
        while True:
            route = low | sub
            if best_route[route] < math.inf:
                value = best_route[route] + best[mask ^ route]
                if value < best[mask]:
                    best[mask] = value
            if sub == 0:
                break
            sub = (sub - 1) & rest
    return best[full]


def brute_force_candidates(
    solution: Solution,
    operators: Sequence[str] = OPERATORS,
) -> Set[Tuple[str, int, int, int, int]]:
    """
    Every move on route pairs from different subproblems plus every
    intra-route move, as (operator, route a, route b, i, j).
    """
    routes = [r.visits for r in solution.routes]
    origins = [r.origin for r in solution.routes]
    moves = set()
    for op in operators:
        for a, route_a in enumerate(routes):
            la = len(route_a)
            if op in INTRA_OPERATORS:
                moves.update((op, a, a, i, j) for i in range(la) for j in range(i + 1, la))
                continue
            for b, route_b in enumerate(routes):
                if b == a or origins[b] == origins[a]:
                    continue
                lb = len(route_b)
                first = la if op in ("relocate", "swap") else la + 1
                second = lb if op == "swap" else lb + 1
                moves.update((op, a, b, i, j) for i in range(first) for j in range(second))
    return moves


# Suite


def _timed(name: str, body: Callable[[], Tuple[int, str]]) -> OracleCheck:
    started = time.perf_counter()
    try:
        cases, detail = body()
        check = OracleCheck(name, True, detail, cases)
    except OracleFailure as e:
        check = OracleCheck(name, False, str(e))
    check.elapsed = time.perf_counter() - started
    level = logging.INFO if check.passed else logging.ERROR
    logger.log(level, f"Oracle {name}: {'pass' if check.passed else 'FAIL'} {check.detail}")
    return check


def _expect(condition: bool, message: str):
    if not condition:
        raise OracleFailure(message)


def _metric_reduction(seed: int) -> Tuple[int, str]:
    span = 1e15
    rng = make_rng(seed, "oracle", 3)
    n = 200
    depot = Vertex(0, 50.0, 50.0, 0.0, 0.0, span, 0.0)
    customers = [
        Vertex(k + 1, float(x), float(y), 0.0, 0.0, span, 0.0)
        for k, (x, y) in enumerate(rng.uniform(0.0, 100.0, size=(n, 2)))
    ]
    instance = Instance("reduction", depot, customers, n, 1.0)
    matrix = build_similarity_matrix(instance, SimilarityConfig(lam=0.0, span=span, capacity=1.0))
    error = float(np.max(np.abs(matrix.symmetric - instance.cost[1:, 1:])))
    _expect(error <= TOLERANCE, f"symmetrized STD differs from Euclidean by {error:.3e}")
    return 1, f"max deviation {error:.2e}"


def _edge_soundness(seed: int, pairs: int) -> Tuple[int, str]:
    checked = 0
    fixture = 0
    while checked < pairs:
        instance = edge_fixture(derive_seed(seed, "oracle", fixture))
        flexibility = build_similarity_matrix(instance).flexibility
        rng = make_rng(seed, "oracle", 1000 + fixture)
        for _ in range(min(100, pairs - checked)):
            i, j = (int(v) for v in rng.choice(instance.n, size=2, replace=False))
            rejected = not build_route(instance, [i + 1, j + 1]).feasible
            _expect(
                (flexibility[i, j] < 0) == rejected,
                f"{instance.name}: f[{i + 1},{j + 1}] = {flexibility[i, j]:.6f} but rejected={rejected}",
            )
            checked += 1
        fixture += 1
    return checked, f"{checked} pairs"


def _schedule_recursion(seed: int, count: int) -> Tuple[int, str]:
    for case in range(count):
        n = 6 + case % 10
        instance = random_instance(n, derive_seed(seed, "oracle", case), window="tight" if case % 2 else "loose")
        rng = make_rng(seed, "oracle", 2000 + case)
        visits = [int(v) for v in rng.permutation(np.arange(1, n + 1))[: 1 + case % n]]
        feasible, starts, reason = naive_schedule(instance, visits)
        route = build_route(instance, visits)
        _expect(route.feasible == feasible, f"case {case}: feasibility {route.feasible} vs naive {feasible} ({reason})")
        for position, (want, got) in enumerate(zip(starts, route.start_times)):
            _expect(abs(want - got) <= TOLERANCE, f"case {case}: start time at position {position}: {got} vs {want}")
        outcome = propagate_schedule(instance, visits)
        _expect(isinstance(outcome, ScheduledRoute) == feasible, f"case {case}: propagate_schedule disagrees")
    return count, f"{count} sequences"


def _clustering_oracles(seed: int, count: int) -> Tuple[int, str]:
    for case in range(count):
        case_seed = derive_seed(seed, "oracle", 3000 + case)
        n = 5 + case % 8
        q = 2 + case % 2
        instance = random_instance(n, case_seed, layout="clustered", integral=False)
        similarity = build_similarity_matrix(instance)
        matrix = np.asarray(similarity.symmetric)

        for linkage in ("single", "complete", "average"):
            _, merges = agglomerate(matrix, q, linkage, np.random.default_rng(case_seed))
            expected = naive_agglomerative(matrix, q, linkage, np.random.default_rng(case_seed))
            _expect(len(merges) == len(expected), f"case {case} {linkage}: merge count differs")
            for step, (got, want) in enumerate(zip(merges, expected)):
                _expect(
                    got[:2] == want[:2] and abs(got[2] - want[2]) <= TOLERANCE,
                    f"case {case} {linkage}: merge {step} is {got}, naive gives {want}",
                )

        spec = ClusteringSpec(method="k_medoids", q=q, seed=case_seed)
        result = kmedoids(similarity, spec)
        reported = result.objective_history[-1]
        recomputed = medoid_objective(matrix, result.assignment, np.asarray(result.medoids))
        _expect(abs(reported - recomputed) <= TOLERANCE, f"case {case}: objective {reported} vs recomputed {recomputed}")
        best = exhaustive_kmedoids_objective(matrix, q)
        _expect(reported >= best - TOLERANCE, f"case {case}: k-medoids objective {reported} below exhaustive {best}")
        history = result.objective_history
        _expect(
            all(b <= a + TOLERANCE for a, b in zip(history, history[1:])),
            f"case {case}: k-medoids objective increased: {history}",
        )

        fuzzy = fuzzy_cmedoids(similarity, None, ClusteringSpec(method="fuzzy_c_medoids", q=q, seed=case_seed))
        rows = fuzzy.membership.sum(axis=1)
        _expect(np.allclose(rows, 1.0, atol=TOLERANCE, rtol=0.0), f"case {case}: membership rows sum to {rows}")
    return count, f"{count} instances"


def _budget_arithmetic() -> Tuple[int, str]:
    budget = budget_time(61.0, 1.0, 1.0, [100, 120, 780])
    _expect(budget.omega == 60.0, f"routing budget {budget.omega} != 60")
    _expect(budget.per_subproblem[:2] == (6.0, 7.0), f"per-subproblem budgets {budget.per_subproblem[:2]} != (6, 7)")
    for q in (2, 5, 10):
        value = edge_reduction([100] * q)
        _expect(abs(value - 1.0 / q) <= 1e-12, f"balanced edge reduction for q={q} is {value}")
        split = edge_reduction([50, 50] + [100] * (q - 1))
        _expect(split < value, f"splitting a subproblem for q={q} does not reduce the ratio")
    return 4, "budgets and edge reduction"


def _pruning_soundness(seed: int, count: int) -> Tuple[int, str]:
    total = 0
    for case in range(count):
        case_seed = derive_seed(seed, "oracle", 4000 + case)
        n = 12 + case % 19
        instance = random_instance(n, case_seed, layout="mixed", integral=False)
        similarity = build_similarity_matrix(instance)
        q = 2 + case % 2
        method = "fuzzy_c_medoids" if case % 2 else "k_medoids"
        clustering = kmedoids(similarity, ClusteringSpec(q=q)) if method == "k_medoids" else fuzzy_cmedoids(
            similarity, None, ClusteringSpec(method=method, q=q, seed=case_seed),
        )
        solution = _clustered_solution(instance, clustering)
        vicinity = build_vicinities(similarity, clustering, phi=q - 1, varphi=n - 1, rho=1.0)
        pruned = {(m.operator, m.route_a, m.route_b, m.i, m.j) for m in enumerate_candidates(instance, solution, vicinity)}
        expected = brute_force_candidates(solution)
        _expect(
            pruned == expected,
            f"case {case}: {len(expected - pruned)} moves pruned, {len(pruned - expected)} unexpected",
        )
        total += len(expected)
    return count, f"{total} candidate moves"


def _clustered_solution(instance: Instance, clustering: Clustering) -> Solution:
    """Singleton-free routes: every cluster split into routes of three customers."""
    sequences, origins = [], []
    for p, members in enumerate(clustering.clusters()):
        vertices = [int(k) + 1 for k in members]
        for start in range(0, len(vertices), 3):
            sequences.append(vertices[start:start + 3])
            origins.append(p)
    return Solution.from_sequences(instance, sequences, origins)


def _optimality_bound(seed: int, count: int) -> Tuple[int, str]:
    worst = 1.0
    config = BaselineSolverConfig(restarts=4, stop_mode="time")
    for case in range(count):
        case_seed = derive_seed(seed, "oracle", 5000 + case)
        n = 4 + case % 5
        instance = random_instance(n, case_seed, window="tight" if case % 3 == 0 else "loose", capacity=60.0)
        optimum = exhaustive_vrptw_optimum(instance)
        solution = baseline_solve(instance, seed=case_seed, config=config)
        _expect(solution.feasible, f"case {case}: baseline returned an infeasible solution")
        cost = solution.total_cost
        _expect(cost >= optimum - TOLERANCE, f"case {case}: baseline cost {cost} below optimum {optimum}")
        _expect(cost <= 1.5 * optimum + TOLERANCE, f"case {case}: baseline cost {cost} exceeds 1.5 x optimum {optimum}")
        worst = max(worst, cost / optimum)
    return count, f"worst ratio {worst:.3f}"


def _feasibility_sweep(seed: int, count: int) -> Tuple[int, str]:
    config = DriConfig(q_policy="fixed", q=2, theta=30.0, restarts=2)
    for case in range(count):
        instance = random_instance(20, derive_seed(seed, "oracle", 6000 + case), layout="mixed", window="tight")
        solution, report = run_dri(instance, config)
        _expect(solution.feasible, f"case {case}: {list(solution.report.violations)[:3]}")
        _expect(report.cost_after <= report.cost_before + TOLERANCE, f"case {case}: improvement worsened the cost")
    return count, f"{count} runs"


def oracle_suite(seed: int = 0, quick: bool = False) -> OracleReport:
    """
    Run every oracle.

    Args:
        seed: Master seed for the generated fixtures
        quick: Run a tenth of the cases

    Returns:
        OracleReport; ``passed`` is True only if every check passed
    """
    scale = 10 if quick else 1
    report = OracleReport()

    fixture = schedule_fixture(seed)
    report.checks.append(_timed("metric_reduction", lambda: _metric_reduction(seed)))
    report.checks.append(_timed("edge_soundness", lambda: _edge_soundness(seed, 1000 // scale)))
    report.checks.append(_timed("schedule_recursion", lambda: _schedule_recursion(seed, 200 // scale)))

    def negative_control():
        clean = check_schedule_fixture(fixture)
        _expect(clean.passed, f"recorded fixture fails: {clean.detail}")
        corrupted = check_schedule_fixture(corrupt_fixture(fixture))
        _expect(not corrupted.passed, "corrupted fixture was not detected")
        return 2, corrupted.detail

    report.checks.append(_timed("schedule_negative_control", negative_control))
    report.checks.append(_timed("clustering", lambda: _clustering_oracles(seed, max(5, 50 // scale))))
    report.checks.append(_timed("budget_arithmetic", _budget_arithmetic))
    report.checks.append(_timed("pruning_soundness", lambda: _pruning_soundness(seed, max(4, 20 // scale))))
    report.checks.append(_timed("optimality_bound", lambda: _optimality_bound(seed, max(10, 100 // scale))))
    report.checks.append(_timed("feasibility_sweep", lambda: _feasibility_sweep(seed, max(10, 100 // scale))))

    logger.info(f"Oracle suite: {len(report.checks) - len(report.failed())}/{len(report.checks)} checks passed")
    return report
