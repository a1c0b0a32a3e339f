import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

from .decompose import VicinityIndex
from .instance import Instance, Solution, build_route, route_distance


logger = logging.getLogger(__name__)

EPS = 1e-9
INTER_OPERATORS = ("cross_over", "relocate", "swap", "two_opt_inter")
INTRA_OPERATORS = ("two_opt_intra", "swap_intra")
OPERATORS = INTER_OPERATORS + INTRA_OPERATORS
STRATEGIES = ("first_descent", "steepest_descent")

_DEADLINE_CHECK = 4096
# Candidate-move evaluations granted per budget second in reproducible runs.
WORK_RATE = 200_000.0


@dataclass(frozen=True)
class RouteQuality:
    """Per-subproblem cost Z_p, average route cost and per-route utilization."""
    subproblem_cost: Dict[int, float]
    average_cost: Dict[int, float]
    utilization: Tuple[float, ...]

    @classmethod
    def from_routes(
        cls,
        origins: Sequence[int],
        distances: Sequence[float],
        loads: Sequence[float],
        capacity: float,
    ) -> "RouteQuality":
        totals: Dict[int, float] = {}
        counts: Dict[int, int] = {}
        for origin, distance in zip(origins, distances):
            totals[origin] = totals.get(origin, 0.0) + distance
            counts[origin] = counts.get(origin, 0) + 1
        average = {p: totals[p] / counts[p] for p in totals}
        return cls(totals, average, tuple(load / capacity for load in loads))

    @classmethod
    def from_solution(cls, solution: Solution, capacity: float) -> "RouteQuality":
        routes = solution.routes
        return cls.from_routes(
            [r.origin for r in routes], [r.distance for r in routes], [r.load for r in routes], capacity
        )


@dataclass(frozen=True)
class MoveContext:
    """
    Local-search settings.

    Attributes:
        operators: Operators tried, scanned in OPERATORS order
        strategy: 'first_descent' or 'steepest_descent'
        vicinity: Pruning structures; None makes every route pair eligible
        budget: Seconds available; None means unlimited
        intra_repair: Run intra-route operators on routes changed by an inter-route move
        max_moves: Optional cap on accepted moves
        max_evaluations: Optional cap on evaluated candidate moves; unlike
            ``budget`` it stops the search at the same point on every run
    """
    operators: Tuple[str, ...] = OPERATORS
    strategy: str = "steepest_descent"
    vicinity: Optional[VicinityIndex] = None
    budget: Optional[float] = None
    intra_repair: bool = True
    max_moves: Optional[int] = None
    max_evaluations: Optional[int] = None

    def __post_init__(self):
        if not self.operators:
            raise ValueError("at least one operator is required")
        unknown = [op for op in self.operators if op not in OPERATORS]
        if unknown:
            raise ValueError(f"Unknown operators: {unknown}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"Invalid descent strategy: {self.strategy}")
        if self.budget is not None and self.budget < 0:
            raise ValueError(f"budget must be non-negative, got {self.budget}")
        if self.max_evaluations is not None and self.max_evaluations < 0:
            raise ValueError(f"max_evaluations must be non-negative, got {self.max_evaluations}")

    @property
    def ordered_operators(self) -> Tuple[str, ...]:
        return tuple(op for op in OPERATORS if op in self.operators)


@dataclass(frozen=True)
class Move:
    """
    One candidate move.

    Inter-route moves act on routes ``route_a`` and ``route_b`` at positions
    ``i`` and ``j``; intra-route moves have ``route_a == route_b`` and act on
    positions ``i < j`` of that route. For ``relocate``, ``j`` is the
    insertion index in route b.
    """
    operator: str
    route_a: int
    route_b: int
    i: int
    j: int
    delta: float = 0.0

    def key(self) -> Tuple[int, int, int, int, int]:
        return (OPERATORS.index(self.operator), self.route_a, self.route_b, self.i, self.j)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "operator": self.operator,
            "routes": [self.route_a, self.route_b],
            "positions": [self.i, self.j],
            "delta": self.delta,
        }


@dataclass(frozen=True)
class MoveOutcome:
    """Result of applying a move: the two modified sequences and whether both are feasible."""
    move: Move
    route_a: Tuple[int, ...]
    route_b: Tuple[int, ...]
    feasible: bool

    @property
    def delta(self) -> float:
        return self.move.delta


@dataclass
class LocalSearchResult:
    solution: Solution
    log: List[Dict[str, Any]] = field(default_factory=list)
    moves: int = 0
    stop_reason: str = "local_optimum"
    elapsed: float = 0.0
    evaluations: int = 0


@dataclass(frozen=True)
class GapReport:
    """Error gaps against a best-known cost; gaps are None when the cost is unusable."""
    bks: float
    xi_before: Optional[float]
    xi_after: Optional[float]
    xi_tilde: Optional[float]
    below_bks: bool
    bks_invalid: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bks": self.bks,
            "xi_before": self.xi_before,
            "xi_after": self.xi_after,
            "xi_tilde": self.xi_tilde,
            "below_bks": self.below_bks,
            "bks_invalid": self.bks_invalid,
        }


def _at(seq: Sequence[int], k: int) -> int:
    return seq[k] if 0 <= k < len(seq) else 0


def move_delta(costs: List[List[float]], operator: str, a: Sequence[int], b: Sequence[int], i: int, j: int) -> float:
    """
    Cost change of a move from the edges it removes and adds.

    Costs must be symmetric; segments reversed by the 2-opt variants keep their cost.
    """
    if operator == "cross_over":
        ap, an, bp, bn = _at(a, i - 1), _at(a, i), _at(b, j - 1), _at(b, j)
        return costs[ap][bn] + costs[bp][an] - costs[ap][an] - costs[bp][bn]
    if operator == "relocate":
        u = a[i]
        p, n = _at(a, i - 1), _at(a, i + 1)
        x, y = _at(b, j - 1), _at(b, j)
        return costs[p][n] - costs[p][u] - costs[u][n] + costs[x][u] + costs[u][y] - costs[x][y]
    if operator == "swap":
        u, v = a[i], b[j]
        pa, na, pb, nb = _at(a, i - 1), _at(a, i + 1), _at(b, j - 1), _at(b, j + 1)
        return (
            costs[pa][v] + costs[v][na] - costs[pa][u] - costs[u][na]
            + costs[pb][u] + costs[u][nb] - costs[pb][v] - costs[v][nb]
        )
    if operator == "two_opt_inter":
        ap, an, bp, bn = _at(a, i - 1), _at(a, i), _at(b, j - 1), _at(b, j)
        return costs[ap][bp] + costs[an][bn] - costs[ap][an] - costs[bp][bn]
    if operator == "two_opt_intra":
        p, n = _at(a, i - 1), _at(a, j + 1)
        return costs[p][a[j]] + costs[a[i]][n] - costs[p][a[i]] - costs[a[j]][n]
    if operator == "swap_intra":
        u, v = a[i], a[j]
        p, n = _at(a, i - 1), _at(a, j + 1)
        if j == i + 1:
            return costs[p][v] + costs[u][n] - costs[p][u] - costs[v][n]
        nu, pv = a[i + 1], a[j - 1]
        return (
            costs[p][v] + costs[v][nu] + costs[pv][u] + costs[u][n]
            - costs[p][u] - costs[u][nu] - costs[pv][v] - costs[v][n]
        )
    raise ValueError(f"Unknown operator: {operator}")


def move_sequences(
    operator: str, a: Sequence[int], b: Sequence[int], i: int, j: int
) -> Tuple[List[int], List[int]]:
    """New visit sequences produced by a move; intra moves return the route twice."""
    a, b = list(a), list(b)
    if operator == "cross_over":
        return a[:i] + b[j:], b[:j] + a[i:]
    if operator == "relocate":
        return a[:i] + a[i + 1:], b[:j] + [a[i]] + b[j:]
    if operator == "swap":
        new_a, new_b = a[:], b[:]
        new_a[i], new_b[j] = b[j], a[i]
        return new_a, new_b
    if operator == "two_opt_inter":
        return a[:i] + b[:j][::-1], a[i:][::-1] + b[j:]
    if operator == "two_opt_intra":
        new_a = a[:i] + a[i:j + 1][::-1] + a[j + 1:]
        return new_a, new_a
    if operator == "swap_intra":
        new_a = a[:]
        new_a[i], new_a[j] = a[j], a[i]
        return new_a, new_a
    raise ValueError(f"Unknown operator: {operator}")


def apply_operator(
    instance: Instance,
    operator: str,
    route_a: Sequence[int],
    route_b: Sequence[int],
    i: int,
    j: int,
) -> MoveOutcome:
    """
    Evaluate one move: cost delta plus schedule propagation of both modified routes.

    Args:
        instance: Instance the vertex ids refer to
        operator: Operator name
        route_a: Route holding position i
        route_b: Partner route holding position j (ignored by intra operators)
        i: Position in route a
        j: Position in route b (insertion index for relocate, second position for intra moves)

    Returns:
        MoveOutcome; infeasible outcomes must be discarded
    """
    if operator in INTRA_OPERATORS:
        if not 0 <= i < j < len(route_a):
            raise ValueError(f"invalid intra-route positions ({i}, {j})")
        route_b = route_a
    delta = move_delta(instance.cost_rows, operator, route_a, route_b, i, j)
    new_a, new_b = move_sequences(operator, route_a, route_b, i, j)
    feasible = build_route(instance, new_a).feasible
    if operator in INTER_OPERATORS:
        feasible = feasible and build_route(instance, new_b).feasible
    return MoveOutcome(Move(operator, 0, 0 if operator in INTRA_OPERATORS else 1, i, j, delta), tuple(new_a), tuple(new_b), feasible)


def _worklist(
    routes: Sequence[Sequence[int]],
    origins: Sequence[int],
    distances: Sequence[float],
    loads: Sequence[float],
    capacity: float,
) -> List[int]:
    quality = RouteQuality.from_routes(origins, distances, loads, capacity)
    return sorted(
        range(len(routes)),
        key=lambda r: (
            -quality.average_cost[origins[r]],
            origins[r],
            quality.utilization[r],
            tuple(routes[r]),
        ),
    )


def order_routes(solution: Solution, quality: Optional[RouteQuality] = None, capacity: Optional[float] = None) -> List[int]:
    """
    Improvement worklist as route indices of ``solution``.

    Subproblems come in descending order of average route cost; within a
    subproblem, routes are ordered by ascending utilization. Remaining ties
    are broken on route content, so the order doesn't depend on the input
    route order.

    Args:
        solution: Merged solution whose routes carry origin tags
        quality: Precomputed quality measures
        capacity: Vehicle capacity, required when quality is None
    """
    routes = solution.routes
    if quality is None:
        if capacity is None:
            raise ValueError("capacity is required to derive route quality")
        quality = RouteQuality.from_solution(solution, capacity)
    return sorted(
        range(len(routes)),
        key=lambda r: (
            -quality.average_cost[routes[r].origin],
            routes[r].origin,
            quality.utilization[r],
            routes[r].visits,
        ),
    )


def eligible_pairs(
    route: int,
    worklist: Sequence[int],
    origins: Sequence[int],
    vicinity: Optional[VicinityIndex] = None,
) -> List[Tuple[int, int]]:
    """
    Partner routes of ``route`` for inter-route moves, in worklist order.

    With a vicinity the partner must come from another subproblem lying in
    the route's subproblem vicinity; without one every other route qualifies.
    """
    pairs = []
    p = origins[route]
    allowed = vicinity.subproblem_vicinity(p) if vicinity is not None else None
    for other in worklist:
        if other == route:
            continue
        if allowed is not None:
            g = origins[other]
            if g == p or g not in allowed:
                continue
        pairs.append((route, other))
    return pairs


def _moving_vertices(operator: str, a: Sequence[int], b: Sequence[int], i: int, j: int) -> Tuple[int, Tuple[int, ...]]:
    if operator == "relocate":
        partners = []
        if j < len(b):
            partners.append(b[j])
        if j > 0:
            partners.append(b[j - 1])
        return a[i], tuple(partners)
    if operator == "swap":
        return a[i], (b[j],)
    u = a[i] if i < len(a) else a[i - 1]
    v = b[j] if j < len(b) else b[j - 1]
    return u, (v,)


def _iter_moves(
    costs: List[List[float]],
    routes: Sequence[Sequence[int]],
    origins: Sequence[int],
    worklist: Sequence[int],
    operators: Sequence[str],
    vicinity: Optional[VicinityIndex],
) -> Iterator[Tuple[int, int, int, int, int, float]]:
    """Yield (operator index, a, b, i, j, delta) for every admitted move, in scan order."""
    op_index = {op: OPERATORS.index(op) for op in operators}
    for ra in worklist:
        a = routes[ra]
        partners = [rb for _, rb in eligible_pairs(ra, worklist, origins, vicinity)]
        la = len(a)
        for op in operators:
            k = op_index[op]
            if op in INTRA_OPERATORS:
                for i in range(la - 1):
                    for j in range(i + 1, la):
                        yield k, ra, ra, i, j, move_delta(costs, op, a, a, i, j)
                continue
            for rb in partners:
                b = routes[rb]
                lb = len(b)
                if op == "relocate":
                    ranges = (range(la), range(lb + 1))
                elif op == "swap":
                    ranges = (range(la), range(lb))
                else:
                    ranges = (range(la + 1), range(lb + 1))
                for i in ranges[0]:
                    for j in ranges[1]:
                        if vicinity is not None:
                            u, vs = _moving_vertices(op, a, b, i, j)
                            if not any(vicinity.admits(u, v) for v in vs):
                                continue
                        yield k, ra, rb, i, j, move_delta(costs, op, a, b, i, j)


def enumerate_candidates(
    instance: Instance,
    solution: Solution,
    vicinity: Optional[VicinityIndex] = None,
    operators: Sequence[str] = OPERATORS,
) -> List[Move]:
    """
    Every move local search may evaluate on ``solution``, in scan order.

    Route indices refer to ``solution.routes``.
    """
    routes = [list(r.visits) for r in solution.routes]
    origins = [r.origin for r in solution.routes]
    worklist = order_routes(solution, capacity=instance.capacity)
    ordered = [op for op in OPERATORS if op in operators]
    return [
        Move(OPERATORS[k], a, b, i, j, delta)
        for k, a, b, i, j, delta in _iter_moves(instance.cost_rows, routes, origins, worklist, ordered, vicinity)
    ]


def _capacity_ok(op: str, loads, prefix, demand, capacity: float, a: int, b: int, i: int, j: int, routes) -> bool:
    if op in INTRA_OPERATORS:
        return True
    limit = capacity + 1e-9
    if op == "relocate":
        return loads[b] + demand[routes[a][i]] <= limit
    if op == "swap":
        du, dv = demand[routes[a][i]], demand[routes[b][j]]
        return loads[a] - du + dv <= limit and loads[b] - dv + du <= limit
    pa, pb = prefix[a][i], prefix[b][j]
    if op == "cross_over":
        return pa + loads[b] - pb <= limit and pb + loads[a] - pa <= limit
    return pa + pb <= limit and (loads[a] - pa) + (loads[b] - pb) <= limit


def improve_route(
    instance: Instance,
    visits: Sequence[int],
    operators: Sequence[str] = INTRA_OPERATORS,
    deadline: Optional[float] = None,
) -> List[int]:
    """
    First-improvement intra-route descent on one route.

    Returns:
        The improved visit sequence (the input when no move helps)
    """
    operators = [op for op in INTRA_OPERATORS if op in operators]
    costs = instance.cost_rows
    current = list(visits)
    improved = True
    while improved:
        improved = False
        if deadline is not None and time.perf_counter() >= deadline:
            break
        n = len(current)
        for op in operators:
            for i in range(n - 1):
                for j in range(i + 1, n):
                    if move_delta(costs, op, current, current, i, j) < -EPS:
                        candidate, _ = move_sequences(op, current, current, i, j)
                        if build_route(instance, candidate).feasible:
                            current = candidate
                            improved = True
                            break
                if improved:
                    break
            if improved:
                break
    return current


class _BudgetExhausted(Exception):
    pass


class _Work:
    """Counts evaluated candidate moves against an optional cap."""

    __slots__ = ("spent", "limit")

    def __init__(self, limit: Optional[int] = None):
        self.spent = 0
        self.limit = limit


def _select_move(
    instance: Instance,
    routes: List[List[int]],
    origins: List[int],
    distances: List[float],
    loads: List[float],
    context: MoveContext,
    deadline: Optional[float],
    work: _Work,
):
    costs = instance.cost_rows
    demand = instance.vertex_table[0]
    capacity = instance.capacity
    prefix = []
    for seq in routes:
        acc = [0.0]
        for v in seq:
            acc.append(acc[-1] + demand[v])
        prefix.append(acc)

    worklist = _worklist(routes, origins, distances, loads, capacity)
    operators = context.ordered_operators
    steepest = context.strategy == "steepest_descent"
    improving = []
    scanned = 0

    for k, a, b, i, j, delta in _iter_moves(costs, routes, origins, worklist, operators, context.vicinity):
        scanned += 1
        work.spent += 1
        if work.limit is not None and work.spent > work.limit:
            work.spent = work.limit
            raise _BudgetExhausted()
        if deadline is not None and scanned % _DEADLINE_CHECK == 0 and time.perf_counter() >= deadline:
            raise _BudgetExhausted()
        if delta >= -EPS:
            continue
        op = OPERATORS[k]
        if not _capacity_ok(op, loads, prefix, demand, capacity, a, b, i, j, routes):
            continue
        if steepest:
            improving.append((delta, k, a, b, i, j))
            continue
        new_a, new_b = move_sequences(op, routes[a], routes[b], i, j)
        if build_route(instance, new_a).feasible and (a == b or build_route(instance, new_b).feasible):
            return Move(op, a, b, i, j, delta), new_a, new_b

    improving.sort()
    for delta, k, a, b, i, j in improving:
        op = OPERATORS[k]
        new_a, new_b = move_sequences(op, routes[a], routes[b], i, j)
        if build_route(instance, new_a).feasible and (a == b or build_route(instance, new_b).feasible):
            return Move(op, a, b, i, j, delta), new_a, new_b
    return None


def local_search(instance: Instance, solution: Solution, context: Optional[MoveContext] = None) -> LocalSearchResult:
    """
    Strict-descent local search over the routes of a merged solution.

    Only strictly improving, feasible moves are accepted. After each
    accepted inter-route move the modified routes get an intra-route
    descent. The search stops at a local optimum or when the budget runs out.

    Args:
        instance: Parent instance
        solution: Solution whose route visits are parent vertex ids
        context: Operators, strategy, pruning and budget

    Returns:
        LocalSearchResult with the improved solution and a per-move log
    """
    context = context or MoveContext()
    start = time.perf_counter()
    if (context.budget is not None and context.budget <= 0) or context.max_evaluations == 0:
        return LocalSearchResult(solution, stop_reason="budget")
    deadline = None if context.budget is None else start + context.budget

    routes = [list(r.visits) for r in solution.routes]
    origins = [r.origin for r in solution.routes]
    distances = [r.distance for r in solution.routes]
    loads = [r.load for r in solution.routes]
    demand = instance.vertex_table[0]

    log: List[Dict[str, Any]] = []
    moves = 0
    stop_reason = "local_optimum"
    cost = sum(distances)
    work = _Work(context.max_evaluations)

    while True:
        if deadline is not None and time.perf_counter() >= deadline:
            stop_reason = "budget"
            break
        if context.max_moves is not None and moves >= context.max_moves:
            stop_reason = "max_moves"
            break
        try:
            selected = _select_move(instance, routes, origins, distances, loads, context, deadline, work)
        except _BudgetExhausted:
            stop_reason = "budget"
            break
        if selected is None:
            break

        move, new_a, new_b = selected
        touched = [move.route_a] if move.route_a == move.route_b else [move.route_a, move.route_b]
        routes[move.route_a] = new_a
        if move.route_b != move.route_a:
            routes[move.route_b] = new_b

        repair = 0.0
        if context.intra_repair and move.operator in INTER_OPERATORS:
            for r in touched:
                if len(routes[r]) > 2:
                    before = route_distance(instance, routes[r])
                    routes[r] = improve_route(instance, routes[r], deadline=deadline)
                    repair += route_distance(instance, routes[r]) - before

        for r in touched:
            distances[r] = route_distance(instance, routes[r])
            loads[r] = sum(demand[v] for v in routes[r])

        keep = [r for r in range(len(routes)) if routes[r]]
        if len(keep) < len(routes):
            routes = [routes[r] for r in keep]
            origins = [origins[r] for r in keep]
            distances = [distances[r] for r in keep]
            loads = [loads[r] for r in keep]

        moves += 1
        cost = sum(distances)
        log.append({
            "move": moves,
            "operator": move.operator,
            "routes": [move.route_a, move.route_b],
            "positions": [move.i, move.j],
            "delta": move.delta,
            "repair_delta": repair,
            "cost": cost,
            "route_count": len(routes),
            "elapsed": time.perf_counter() - start,
        })
        logger.debug(f"Accepted {move.operator} (delta {move.delta:.4f}), cost now {cost:.2f}")

    elapsed = time.perf_counter() - start
    if moves == 0:
        return LocalSearchResult(solution, log, 0, stop_reason, elapsed, work.spent)

    improved = Solution.from_sequences(instance, routes, origins, fleet_size=solution.report.fleet_size)
    logger.info(
        f"Local search accepted {moves} moves in {elapsed:.2f}s: "
        f"{solution.total_cost:.2f} -> {improved.total_cost:.2f} ({stop_reason})"
    )
    return LocalSearchResult(improved, log, moves, stop_reason, elapsed, work.spent)


def improvement_report(before: float, after: float, bks: float) -> GapReport:
    """
    Error gaps xi = (Z - Z*) / Z* before and after improvement, and xi~ = (xi' - xi) / |xi|.

    xi~ is 0 when xi is 0 and never positive when the cost went down, also
    for runs that beat the best-known cost. Gaps below the best-known cost
    are reported as negative values with ``below_bks`` set. A best-known
    cost that is not positive gives no gaps and sets ``bks_invalid``.
    """
    if not bks > 0:
        logger.warning(f"Best-known cost {bks} is not positive: gaps are not reported")
        return GapReport(bks, None, None, None, before < bks or after < bks, bks_invalid=True)
    xi_before = (before - bks) / bks
    xi_after = (after - bks) / bks
    xi_tilde = 0.0 if xi_before == 0 else (xi_after - xi_before) / abs(xi_before)
    return GapReport(bks, xi_before, xi_after, xi_tilde, before < bks or after < bks)


def write_improvement_log(log: Sequence[Dict[str, Any]], path: str) -> str:
    """Write the improvement log as JSON lines."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        for entry in log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    return path
