import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np


logger = logging.getLogger(__name__)

DISTANCE_MODES = ("exact", "round2", "truncate1")
CAPACITY_EPS = 1e-9


class ParseError(ValueError):
    """Raised when instance text does not follow the Gehring-Homberger layout."""

    def __init__(self, message: str, line: Optional[int] = None, detail: Optional[str] = None):
        self.line = line
        self.detail = detail
        text = message
        if line is not None:
            text = f"{text} at line {line}"
        if detail:
            text = f"{text}: {detail}"
        super().__init__(text)


class Violation(Enum):
    """Constraint violated by a visit sequence."""
    TIME_WINDOW = "time_window"
    CAPACITY = "capacity"
    DEPOT_CLOSING = "depot_closing"


@dataclass(frozen=True)
class Vertex:
    """A depot or customer location with demand, time window and service time."""
    id: int
    x: float
    y: float
    demand: float = 0.0
    earliest: float = 0.0
    latest: float = math.inf
    service: float = 0.0

    def __post_init__(self):
        if self.earliest > self.latest:
            raise ValueError(
                f"time window inverted for vertex {self.id}: "
                f"{self.earliest} > {self.latest}"
            )
        if self.demand < 0:
            raise ValueError(f"negative demand for vertex {self.id}")
        if self.service < 0:
            raise ValueError(f"negative service time for vertex {self.id}")


@dataclass(frozen=True)
class Infeasibility:
    """First violated constraint found while propagating a schedule."""
    reason: Violation
    position: int
    customer: int
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.reason.value} at position {self.position} (customer {self.customer}): {self.detail}"


def euclidean_matrix(coords: np.ndarray, distance_mode: str = "exact") -> np.ndarray:
    """
    Pairwise Euclidean distances between coordinate rows.

    Args:
        coords: Array of shape (k, 2)
        distance_mode: 'exact', 'round2' or 'truncate1'

    Returns:
        Dense (k, k) float64 matrix with zero diagonal
    """
    if distance_mode not in DISTANCE_MODES:
        raise ValueError(f"Invalid distance mode: {distance_mode}")

    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    if distance_mode == "round2":
        dist = np.round(dist, 2)
    elif distance_mode == "truncate1":
        dist = np.floor(dist * 10.0) / 10.0
    np.fill_diagonal(dist, 0.0)
    return dist


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=np.float64)
    array.setflags(write=False)
    return array


class Instance:
    """
    Immutable VRPTW instance.

    Vertex index 0 is the depot and indices 1..n are the customers, in every
    array and matrix. ``Vertex.id`` keeps the label the vertex had in its
    source (the parent instance for carved subproblems).
    """

    def __init__(
        self,
        name: str,
        depot: Vertex,
        customers: Sequence[Vertex],
        fleet_size: int,
        capacity: float,
        distance_mode: str = "exact",
        cost: Optional[np.ndarray] = None,
        travel_time: Optional[np.ndarray] = None,
    ):
        """
        Build and validate an instance.

        Args:
            name: Instance name
            depot: Depot vertex
            customers: Customer vertices, in index order 1..n
            fleet_size: Number of available vehicles m
            capacity: Vehicle capacity Q
            distance_mode: Convention used when matrices are derived from coordinates
            cost: Optional (n+1, n+1) cost matrix
            travel_time: Optional (n+1, n+1) travel-time matrix, defaults to cost

        Raises:
            ValueError: If any instance invariant is violated
        """
        if fleet_size < 1:
            raise ValueError(f"fleet size must be positive, got {fleet_size}")
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        if depot.demand != 0 or depot.service != 0:
            raise ValueError("depot must have zero demand and zero service time")

        self.name = name
        self.depot = depot
        self.customers: Tuple[Vertex, ...] = tuple(customers)
        self.fleet_size = int(fleet_size)
        self.capacity = float(capacity)
        self.distance_mode = distance_mode

        for customer in self.customers:
            if customer.demand > self.capacity:
                raise ValueError(
                    f"customer {customer.id} demand {customer.demand} exceeds capacity {self.capacity}"
                )

        vertices = self.vertices
        self.coords = _readonly(np.array([[v.x, v.y] for v in vertices], dtype=np.float64).reshape(-1, 2))
        self.demand = _readonly(np.array([v.demand for v in vertices]))
        self.earliest = _readonly(np.array([v.earliest for v in vertices]))
        self.latest = _readonly(np.array([v.latest for v in vertices]))
        self.service = _readonly(np.array([v.service for v in vertices]))

        if cost is None:
            cost = euclidean_matrix(self.coords, distance_mode)
        if travel_time is None:
            travel_time = cost
        self.cost = _readonly(cost)
        self.travel_time = _readonly(travel_time)

        size = len(vertices)
        for label, matrix in (("cost", self.cost), ("travel_time", self.travel_time)):
            if matrix.shape != (size, size):
                raise ValueError(f"{label} matrix must be {size}x{size}, got {matrix.shape}")
            if np.any(np.diag(matrix) != 0):
                raise ValueError(f"{label} matrix must have a zero diagonal")
            if np.any(matrix < 0):
                raise ValueError(f"{label} matrix must be non-negative")

    @property
    def vertices(self) -> Tuple[Vertex, ...]:
        return (self.depot,) + self.customers

    @property
    def n(self) -> int:
        """Number of customers."""
        return len(self.customers)

    @property
    def horizon(self) -> float:
        """Operational span l_w - e_w."""
        return float(self.latest[0] - self.earliest[0])

    @property
    def total_demand(self) -> float:
        return float(self.demand[1:].sum())

    # Plain-list views used by the scalar hot loops (schedule propagation,
    # move evaluation); numpy scalar indexing is slower there.
    @cached_property
    def cost_rows(self) -> List[List[float]]:
        return self.cost.tolist()

    @cached_property
    def time_rows(self) -> List[List[float]]:
        return self.travel_time.tolist()

    @cached_property
    def vertex_table(self) -> Tuple[List[float], List[float], List[float], List[float]]:
        """(demand, earliest, latest, service) as lists indexed by vertex."""
        return (
            self.demand.tolist(),
            self.earliest.tolist(),
            self.latest.tolist(),
            self.service.tolist(),
        )

    def subinstance(self, customer_indices: Sequence[int], fleet_size: int, name: str) -> "Instance":
        """
        Carve a stand-alone instance holding a copy of the depot and the given customers.

        Args:
            customer_indices: Parent vertex indices (1..n) in the order they get local indices 1..k
            fleet_size: Fleet allotted to the carved instance
            name: Name of the carved instance

        Returns:
            Instance whose matrices are the parent's sub-matrices
        """
        rows = [0] + [int(i) for i in customer_indices]
        grid = np.ix_(rows, rows)
        return Instance(
            name=name,
            depot=self.depot,
            customers=[self.customers[i - 1] for i in rows[1:]],
            fleet_size=fleet_size,
            capacity=self.capacity,
            distance_mode=self.distance_mode,
            cost=self.cost[grid],
            travel_time=self.travel_time[grid],
        )

    def __repr__(self) -> str:
        return f"Instance(name={self.name}, n={self.n}, fleet={self.fleet_size}, capacity={self.capacity:g})"


@dataclass(frozen=True)
class ScheduledRoute:
    """
    One vehicle route with its forward schedule.

    The depot is implicit at both ends of ``visits``. ``violation`` is None for
    routes that satisfy time windows, capacity and depot closing.
    """
    vehicle: int
    visits: Tuple[int, ...]
    start_times: Tuple[float, ...]
    load: float
    distance: float
    return_time: float
    origin: int = 0
    violation: Optional[Infeasibility] = None

    @property
    def feasible(self) -> bool:
        return self.violation is None

    def __len__(self) -> int:
        return len(self.visits)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "vehicle": self.vehicle,
            "origin": self.origin,
            "visits": list(self.visits),
            "start_times": [round(t, 2) for t in self.start_times],
            "load": round(self.load, 2),
            "distance": round(self.distance, 2),
            "return_time": round(self.return_time, 2),
            "feasible": self.feasible,
            "violation": str(self.violation) if self.violation else None,
        }


def _forward_pass(instance: Instance, visits: Sequence[int]):
    demand, earliest, latest, service = instance.vertex_table
    times = instance.time_rows
    costs = instance.cost_rows
    capacity = instance.capacity

    clock = earliest[0]
    prev = 0
    load = 0.0
    distance = 0.0
    start_times = []
    violation = None

    for position, j in enumerate(visits):
        start = max(earliest[j], clock + service[prev] + times[prev][j])
        load += demand[j]
        distance += costs[prev][j]
        if violation is None:
            if start > latest[j]:
                violation = Infeasibility(
                    Violation.TIME_WINDOW, position, j,
                    f"service starts at {start:.2f} after due date {latest[j]:.2f}",
                )
            elif load > capacity + CAPACITY_EPS:
                violation = Infeasibility(
                    Violation.CAPACITY, position, j,
                    f"load {load:.2f} exceeds capacity {capacity:.2f}",
                )
        start_times.append(start)
        clock = start
        prev = j

    if visits:
        return_time = clock + service[prev] + times[prev][0]
        distance += costs[prev][0]
    else:
        return_time = earliest[0]

    if violation is None and return_time > latest[0]:
        violation = Infeasibility(
            Violation.DEPOT_CLOSING, len(visits), 0,
            f"return at {return_time:.2f} after depot closing {latest[0]:.2f}",
        )

    return tuple(start_times), load, distance, return_time, violation


def _check_sequence(instance: Instance, visits: Sequence[int]):
    seen = set()
    for j in visits:
        if not 1 <= j <= instance.n:
            raise ValueError(f"unknown customer index {j} for instance {instance.name}")
        if j in seen:
            raise ValueError(f"customer {j} appears twice in the visit sequence")
        seen.add(j)


def build_route(instance: Instance, visits: Sequence[int], vehicle: int = 0, origin: int = 0) -> ScheduledRoute:
    """Schedule a visit sequence, keeping the first violation (if any) on the route."""
    _check_sequence(instance, visits)
    start_times, load, distance, return_time, violation = _forward_pass(instance, visits)
    return ScheduledRoute(
        vehicle=vehicle,
        visits=tuple(int(j) for j in visits),
        start_times=start_times,
        load=load,
        distance=distance,
        return_time=return_time,
        origin=origin,
        violation=violation,
    )


def propagate_schedule(
    instance: Instance,
    visits: Sequence[int],
    vehicle: int = 0,
    origin: int = 0,
) -> Union[ScheduledRoute, Infeasibility]:
    """
    Forward time-window propagation of a visit sequence.

    The vehicle leaves the depot at e_w and service at each visit starts at
    T_j = max(e_j, T_prev + s_prev + t_prev,j).

    Args:
        instance: Instance the indices refer to
        visits: Distinct customer indices (depot implicit at both ends)
        vehicle: Vehicle index stored on the route
        origin: Subproblem index stored on the route

    Returns:
        The scheduled route, or the first violated constraint
    """
    route = build_route(instance, visits, vehicle=vehicle, origin=origin)
    if route.violation is not None:
        return route.violation
    return route


def route_distance(instance: Instance, visits: Sequence[int]) -> float:
    """Closed-circuit distance of a visit sequence."""
    if not visits:
        return 0.0
    costs = instance.cost_rows
    total = costs[0][visits[0]]
    for a, b in zip(visits, visits[1:]):
        total += costs[a][b]
    return total + costs[visits[-1]][0]


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-constraint violations of a solution; the fleet bound is flagged separately."""
    violations: Tuple[str, ...] = ()
    fleet_feasible: bool = True
    route_count: int = 0
    fleet_size: int = 0

    @property
    def feasible(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feasible": self.feasible,
            "fleet_feasible": self.fleet_feasible,
            "route_count": self.route_count,
            "fleet_size": self.fleet_size,
            "violations": list(self.violations),
        }


def _feasibility(
    instance: Instance,
    routes: Sequence[ScheduledRoute],
    fleet_size: Optional[int] = None,
) -> FeasibilityReport:
    fleet_size = instance.fleet_size if fleet_size is None else fleet_size
    violations: List[str] = []
    counts: Dict[int, int] = {}
    for route in routes:
        for j in route.visits:
            counts[j] = counts.get(j, 0) + 1
        if route.violation is not None:
            violations.append(f"route {route.vehicle}: {route.violation}")

    for j in range(1, instance.n + 1):
        seen = counts.get(j, 0)
        if seen == 0:
            violations.append(f"customer {j} is not visited")
        elif seen > 1:
            violations.append(f"customer {j} is visited {seen} times")
    for j in counts:
        if not 1 <= j <= instance.n:
            violations.append(f"unknown customer {j}")

    return FeasibilityReport(
        violations=tuple(violations),
        fleet_feasible=len(routes) <= fleet_size,
        route_count=len(routes),
        fleet_size=fleet_size,
    )


@dataclass(frozen=True)
class Solution:
    """A set of scheduled routes for one instance plus its feasibility report."""
    instance_name: str
    routes: Tuple[ScheduledRoute, ...]
    report: FeasibilityReport = field(default_factory=FeasibilityReport)

    @classmethod
    def from_routes(
        cls,
        instance: Instance,
        routes: Iterable[ScheduledRoute],
        fleet_size: Optional[int] = None,
    ) -> "Solution":
        routes = tuple(r for r in routes if r.visits)
        return cls(instance.name, routes, _feasibility(instance, routes, fleet_size))

    @classmethod
    def from_sequences(
        cls,
        instance: Instance,
        sequences: Iterable[Sequence[int]],
        origins: Optional[Sequence[int]] = None,
        fleet_size: Optional[int] = None,
    ) -> "Solution":
        """
        Schedule visit sequences into a solution; empty sequences are dropped.

        Args:
            instance: Instance the indices refer to
            sequences: Visit sequences, one per route
            origins: Optional subproblem index per sequence
            fleet_size: Fleet bound for the report (defaults to the instance's)

        Returns:
            Solution with vehicles numbered in sequence order
        """
        sequences = [list(seq) for seq in sequences]
        if origins is None:
            origins = [0] * len(sequences)
        routes = []
        for seq, origin in zip(sequences, origins):
            if seq:
                routes.append(build_route(instance, seq, vehicle=len(routes), origin=origin))
        return cls.from_routes(instance, routes, fleet_size)

    @classmethod
    def from_dict(cls, instance: Instance, data: Dict[str, Any]) -> "Solution":
        """Rebuild a solution from its JSON document; schedules are re-propagated."""
        if "routes" not in data or not isinstance(data["routes"], list):
            raise ValueError("solution document must contain a 'routes' list")
        sequences, origins = [], []
        for entry in data["routes"]:
            visits = entry.get("visits") if isinstance(entry, dict) else entry
            if not isinstance(visits, list):
                raise ValueError("each route must provide a 'visits' list")
            sequences.append([int(j) for j in visits])
            origins.append(int(entry.get("origin", 0)) if isinstance(entry, dict) else 0)
        return cls.from_sequences(instance, sequences, origins)

    @property
    def total_cost(self) -> float:
        return solution_cost(self)

    @property
    def origins(self) -> Tuple[int, ...]:
        return tuple(route.origin for route in self.routes)

    @property
    def feasible(self) -> bool:
        return self.report.feasible

    @property
    def fleet_feasible(self) -> bool:
        return self.report.fleet_feasible

    def sequences(self) -> List[List[int]]:
        return [list(route.visits) for route in self.routes]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "instance": self.instance_name,
            "total_cost": round(self.total_cost, 2),
            "route_count": len(self.routes),
            "feasible": self.feasible,
            "fleet_feasible": self.fleet_feasible,
            "violations": list(self.report.violations),
            "routes": [route.to_dict() for route in self.routes],
        }

    def __repr__(self) -> str:
        return (
            f"Solution(instance={self.instance_name}, routes={len(self.routes)}, "
            f"cost={self.total_cost:.2f}, feasible={self.feasible})"
        )


def solution_cost(solution: Solution) -> float:
    """Total travelled distance Z of a solution."""
    return math.fsum(route.distance for route in solution.routes)


def check_feasibility(instance: Instance, solution: Solution) -> FeasibilityReport:
    """
    Re-verify a solution against an instance from its visit sequences alone.

    Returns:
        FeasibilityReport with coverage, time-window, capacity and depot violations
    """
    routes = []
    for k, route in enumerate(solution.routes):
        try:
            routes.append(build_route(instance, route.visits, vehicle=k, origin=route.origin))
        except ValueError as e:
            return FeasibilityReport(
                violations=(f"route {k}: {e}",),
                fleet_feasible=len(solution.routes) <= instance.fleet_size,
                route_count=len(solution.routes),
                fleet_size=instance.fleet_size,
            )
    return _feasibility(instance, routes)


def solution_to_json(solution: Solution) -> str:
    """Deterministic JSON document for a solution."""
    return json.dumps(solution.to_dict(), indent=2, sort_keys=True)


def _number(token: str, line: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError("non-numeric field", line, f"{token!r}")


def parse_instance(text: str, distance_mode: str = "exact", name: Optional[str] = None) -> Instance:
    """
    Parse Gehring-Homberger / Solomon instance text.

    Args:
        text: File contents
        distance_mode: Distance convention for the derived matrices
        name: Optional name override (defaults to the first line)

    Returns:
        Validated Instance; row 0 of the CUSTOMER block is the depot

    Raises:
        ParseError: On malformed headers, non-numeric fields, duplicate ids
            or inverted time windows
    """
    text = text.replace("\r\n", "\n").replace("\r", "\n").lstrip("﻿")
    lines = [(number, raw.strip()) for number, raw in enumerate(text.split("\n"), start=1)]
    content = [(number, line) for number, line in lines if line]
    if not content:
        raise ParseError("empty instance file", 1)

    idx = 0
    header_name = content[0][1]
    idx += 1

    while idx < len(content) and content[idx][1].upper() != "VEHICLE":
        idx += 1
    if idx >= len(content):
        raise ParseError("malformed header", content[-1][0], "missing VEHICLE section")
    idx += 1

    if idx >= len(content):
        raise ParseError("malformed header", content[-1][0], "missing NUMBER CAPACITY header")
    number, line = content[idx]
    upper = line.upper()
    if "NUMBER" not in upper or "CAPACITY" not in upper:
        raise ParseError("malformed header", number, f"expected 'NUMBER CAPACITY', found {line!r}")
    idx += 1

    if idx >= len(content):
        raise ParseError("malformed header", number, "missing vehicle data line")
    number, line = content[idx]
    parts = re.split(r"\s+", line)
    if len(parts) < 2:
        raise ParseError("malformed header", number, f"expected 'm Q', found {line!r}")
    fleet_value = _number(parts[0], number)
    capacity = _number(parts[1], number)
    if fleet_value != int(fleet_value):
        raise ParseError("non-numeric field", number, f"fleet size {parts[0]!r} is not an integer")
    idx += 1

    while idx < len(content) and content[idx][1].upper() != "CUSTOMER":
        idx += 1
    if idx >= len(content):
        raise ParseError("malformed header", content[-1][0], "missing CUSTOMER section")
    idx += 1
    if idx >= len(content) or "CUST" not in content[idx][1].upper():
        at = content[idx][0] if idx < len(content) else content[-1][0]
        raise ParseError("malformed header", at, "missing customer column header")
    idx += 1

    vertices: List[Vertex] = []
    seen: Dict[int, int] = {}
    for number, line in content[idx:]:
        parts = re.split(r"\s+", line)
        if len(parts) != 7:
            raise ParseError("malformed customer row", number, f"expected 7 columns, found {len(parts)}")
        values = [_number(token, number) for token in parts]
        vertex_id = int(values[0])
        if vertex_id in seen:
            raise ParseError("duplicate customer id", number, f"{vertex_id} first defined at line {seen[vertex_id]}")
        seen[vertex_id] = number
        x, y, demand, ready, due, service = values[1:]
        if ready > due:
            raise ParseError(
                "time window inverted", number,
                f"customer {vertex_id} has ready time {ready:g} > due date {due:g}",
            )
        try:
            vertices.append(Vertex(vertex_id, x, y, demand, ready, due, service))
        except ValueError as e:
            raise ParseError("invalid customer row", number, str(e))

    if not vertices:
        raise ParseError("malformed header", content[-1][0], "no depot row")

    try:
        instance = Instance(
            name=name or header_name,
            depot=vertices[0],
            customers=vertices[1:],
            fleet_size=int(fleet_value),
            capacity=capacity,
            distance_mode=distance_mode,
        )
    except ValueError as e:
        raise ParseError(f"invalid instance ({e})")

    logger.debug(f"Parsed instance {instance.name} with {instance.n} customers")
    return instance


def load_instance(path: str, distance_mode: str = "exact") -> Instance:
    """
    Read and parse an instance file.

    Raises:
        FileNotFoundError: If the file doesn't exist
        ParseError: If the contents are malformed
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Instance file not found: {path}")

    logger.info(f"Loading instance from: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return parse_instance(f.read(), distance_mode=distance_mode)


def _fmt(value: float) -> str:
    if math.isfinite(value) and float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def format_instance(instance: Instance) -> str:
    """
    Render an instance in the Gehring-Homberger layout.

    Rows are numbered by vertex index, so a carved subproblem is written with
    its local indices.
    """
    lines = [
        instance.name,
        "",
        "VEHICLE",
        "NUMBER     CAPACITY",
        f"  {instance.fleet_size}         {_fmt(instance.capacity)}",
        "",
        "CUSTOMER",
        "CUST NO.  XCOORD.   YCOORD.    DEMAND   READY TIME  DUE DATE   SERVICE   TIME",
        "",
    ]
    for index, v in enumerate(instance.vertices):
        lines.append(
            "  ".join(
                [
                    f"{index:5d}",
                    _fmt(v.x),
                    _fmt(v.y),
                    _fmt(v.demand),
                    _fmt(v.earliest),
                    _fmt(v.latest),
                    _fmt(v.service),
                ]
            )
        )
    return "\n".join(lines) + "\n"
