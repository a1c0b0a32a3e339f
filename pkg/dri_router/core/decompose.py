import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .clustering import LINKAGES, Clustering
from .instance import Instance, format_instance
from .similarity import SimilarityMatrix


logger = logging.getLogger(__name__)


class BudgetError(ValueError):
    """Raised when the decomposition leaves no time for routing and improvement."""


@dataclass(frozen=True)
class SubProblem:
    """
    Stand-alone VRPTW carved from a parent instance.

    ``local_to_parent[k]`` maps local vertex k of ``instance`` to its parent
    vertex; index 0 is the duplicated depot.
    """
    index: int
    customers: Tuple[int, ...]
    instance: Instance
    fleet: int
    budget: float = 0.0

    @property
    def local_to_parent(self) -> Tuple[int, ...]:
        return (0,) + self.customers

    @property
    def parent_to_local(self) -> Dict[int, int]:
        return {parent: local for local, parent in enumerate(self.local_to_parent)}

    def to_parent(self, local: int) -> int:
        return self.local_to_parent[local]

    def to_local(self, parent: int) -> int:
        return self.parent_to_local[parent]

    @property
    def size(self) -> int:
        return len(self.customers)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "name": self.instance.name,
            "customers": list(self.customers),
            "fleet": self.fleet,
            "budget": self.budget,
        }


@dataclass(frozen=True)
class TimeBudget:
    """Runtime split: delta = theta - nu, omega = alpha * delta, upsilon = (1 - alpha) * delta."""
    theta: float
    nu: float
    alpha: float
    delta: float
    omega: float
    upsilon: float
    per_subproblem: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "theta": self.theta,
            "nu": self.nu,
            "alpha": self.alpha,
            "delta": self.delta,
            "omega": self.omega,
            "upsilon": self.upsilon,
            "subproblems": list(self.per_subproblem),
        }


def fleet_split(demands: Sequence[float], fleet_size: int, sizes: Optional[Sequence[int]] = None) -> List[int]:
    """
    Vehicles per cluster, K_p = ceil(m * d_p / D) with at least one vehicle each.

    Falls back to customer-count shares when the total demand is zero.
    """
    total = float(sum(demands))
    if total <= 0:
        if sizes is None:
            raise ValueError("cluster sizes required when the total demand is zero")
        demands = [float(s) for s in sizes]
        total = float(sum(demands))
    return [max(1, math.ceil(fleet_size * d / total - 1e-9)) for d in demands]


def build_subproblems(
    instance: Instance,
    clustering: Clustering,
    budgets: Optional[Sequence[float]] = None,
) -> List[SubProblem]:
    """
    Carve one sub-VRPTW per cluster, each with its own copy of the depot.

    Args:
        instance: Parent instance
        clustering: Partition of its customers
        budgets: Optional routing budget per subproblem

    Returns:
        Subproblems ordered by cluster index

    Raises:
        ValueError: If a cluster is empty or the budgets don't match q
    """
    clusters = clustering.clusters()
    if budgets is not None and len(budgets) != len(clusters):
        raise ValueError(f"expected {len(clusters)} budgets, got {len(budgets)}")

    for p, members in enumerate(clusters):
        if len(members) == 0:
            raise ValueError(f"cluster {p} is empty")

    if len(clusters) == 1:
        budget = budgets[0] if budgets is not None else 0.0
        customers = tuple(range(1, instance.n + 1))
        return [SubProblem(0, customers, instance, instance.fleet_size, budget)]

    demands = [float(instance.demand[members + 1].sum()) for members in clusters]
    fleets = fleet_split(demands, instance.fleet_size, [len(m) for m in clusters])
    if sum(fleets) > instance.fleet_size:
        logger.warning(
            f"Subproblem fleets sum to {sum(fleets)} vehicles, above the fleet size {instance.fleet_size}"
        )

    subproblems = []
    for p, members in enumerate(clusters):
        customers = tuple(int(k) + 1 for k in members)
        carved = instance.subinstance(customers, fleets[p], f"{instance.name}_p{p}")
        budget = budgets[p] if budgets is not None else 0.0
        subproblems.append(SubProblem(p, customers, carved, fleets[p], budget))
        logger.debug(f"Subproblem {p}: {len(customers)} customers, fleet {fleets[p]}")

    return subproblems


def budget_time(theta: float, nu: float, alpha: float, sizes: Sequence[int]) -> TimeBudget:
    """
    Split the remaining runtime between routing and improvement.

    Args:
        theta: Total budget in seconds
        nu: Seconds spent on decomposition
        alpha: Share of the remainder given to routing, in (0, 1]
        sizes: Customers per subproblem

    Returns:
        TimeBudget with omega_p = floor(omega * |V_p| / n)

    Raises:
        BudgetError: If theta <= nu
        ValueError: If alpha or the sizes are invalid
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if not sizes or any(s <= 0 for s in sizes):
        raise ValueError("subproblem sizes must be positive")
    if theta <= nu:
        raise BudgetError(f"budget exhausted by decomposition (theta={theta}, nu={nu:.3f})")

    n = sum(sizes)
    delta = theta - nu
    omega = alpha * delta
    upsilon = (1.0 - alpha) * delta
    per_subproblem = tuple(float(math.floor(omega * size / n + 1e-9)) for size in sizes)
    return TimeBudget(theta, nu, alpha, delta, omega, upsilon, per_subproblem)


def edge_reduction(sizes: Sequence[int], n: Optional[int] = None) -> float:
    """Sum of subproblem edge-set sizes relative to the parent's, sum |V_p|^2 / n^2."""
    sizes = [int(s) for s in sizes]
    if not sizes or any(s <= 0 for s in sizes):
        raise ValueError("subproblem sizes must be positive")
    n = sum(sizes) if n is None else int(n)
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    return sum(s * s for s in sizes) / (n * n)


def cluster_distances(matrix: np.ndarray, clustering: Clustering, linkage: str = "average") -> np.ndarray:
    """Linkage distance between every pair of clusters, +inf on the diagonal."""
    if linkage not in LINKAGES:
        raise ValueError(f"Invalid linkage: {linkage}")
    clusters = clustering.clusters()
    q = len(clusters)
    distances = np.full((q, q), np.inf)
    for p in range(q):
        for g in range(p + 1, q):
            block = matrix[np.ix_(clusters[p], clusters[g])]
            if linkage == "single":
                value = block.min()
            elif linkage == "complete":
                value = block.max()
            else:
                value = block.mean()
            distances[p, g] = distances[g, p] = float(value)
    return distances


class VicinityIndex:
    """
    Pruning structures of the improvement phase.

    Subproblem vicinities live in ``graph``, a DiGraph with an edge p -> g
    for every g in the vicinity of p, weighted by the linkage distance.
    Customer neighbours and fuzzy flags are keyed by parent vertex id.
    """

    def __init__(
        self,
        subproblem_neighbors: Sequence[Sequence[int]],
        customer_neighbors: Sequence[Sequence[int]],
        fuzzy: Optional[Sequence[bool]] = None,
        rho: Optional[float] = None,
        subproblem_distance: Optional[np.ndarray] = None,
        sizes: Optional[Sequence[int]] = None,
    ):
        self.graph = nx.DiGraph()
        for p in range(len(subproblem_neighbors)):
            self.graph.add_node(p, size=int(sizes[p]) if sizes is not None else None)
        for p, row in enumerate(subproblem_neighbors):
            for g in row:
                weight = float(subproblem_distance[p, g]) if subproblem_distance is not None else 1.0
                self.graph.add_edge(p, int(g), weight=weight)

        self.subproblem_neighbors: Tuple[Tuple[int, ...], ...] = tuple(
            tuple(self.graph.successors(p)) for p in range(self.graph.number_of_nodes())
        )
        self.customer_neighbors: Tuple[Tuple[int, ...], ...] = tuple(tuple(int(j) for j in row) for row in customer_neighbors)
        self.fuzzy = tuple(bool(f) for f in fuzzy) if fuzzy is not None else None
        self.rho = rho
        self.subproblem_distance = subproblem_distance
        self._subproblem_sets = [frozenset(row) for row in self.subproblem_neighbors]
        self._customer_sets = [frozenset(row) for row in self.customer_neighbors]

    @property
    def has_fuzzy_flags(self) -> bool:
        return self.fuzzy is not None

    def subproblem_vicinity(self, p: int) -> FrozenSet[int]:
        return self._subproblem_sets[p]

    def customer_vicinity(self, vertex: int) -> FrozenSet[int]:
        return self._customer_sets[vertex - 1]

    def is_fuzzy(self, vertex: int) -> bool:
        """True when the vertex may move; always True without fuzzy flags."""
        return True if self.fuzzy is None else self.fuzzy[vertex - 1]

    def admits(self, vertex: int, partner: int) -> bool:
        return self.is_fuzzy(vertex) and partner in self._customer_sets[vertex - 1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "subproblem_neighbors": [list(row) for row in self.subproblem_neighbors],
            "subproblem_edges": [[p, g, weight] for p, g, weight in self.graph.edges(data="weight")],
            "customer_neighbors": {str(k + 1): list(row) for k, row in enumerate(self.customer_neighbors)},
            "rho": self.rho,
            "fuzzy": [k + 1 for k, flag in enumerate(self.fuzzy) if flag] if self.fuzzy is not None else None,
        }


def build_vicinities(
    similarity: SimilarityMatrix,
    clustering: Clustering,
    phi: int = 5,
    varphi: int = 10,
    rho: Optional[float] = None,
    linkage: str = "average",
    customer_metric: str = "std",
    instance: Optional[Instance] = None,
) -> VicinityIndex:
    """
    Build subproblem and customer vicinities.

    Args:
        similarity: Similarity structure the clustering was built on
        clustering: Customer partition
        phi: Number of nearest subproblems kept per subproblem
        varphi: Number of most similar customers kept per customer
        rho: Fuzzy threshold; customers with max membership <= rho may move
        linkage: Linkage used for subproblem distances
        customer_metric: 'std' (symmetric similarity) or 'euclidean' (travel cost)
        instance: Parent instance, required for the Euclidean customer metric

    Returns:
        Immutable VicinityIndex
    """
    if phi < 0 or varphi < 0:
        raise ValueError("vicinity sizes must be non-negative")
    if rho is not None and not 0 <= rho <= 1:
        raise ValueError(f"rho must be in [0, 1], got {rho}")

    matrix = np.asarray(similarity.symmetric)
    n = matrix.shape[0]
    q = clustering.q

    distances = cluster_distances(matrix, clustering, linkage)
    keep_p = min(phi, q - 1)
    subproblem_neighbors = [
        [int(g) for g in np.argsort(distances[p], kind="stable") if g != p][:keep_p]
        for p in range(q)
    ]

    if customer_metric == "euclidean":
        if instance is None:
            raise ValueError("the Euclidean customer vicinity needs the instance")
        customer_matrix = np.array(instance.cost[1:, 1:], dtype=np.float64)
    elif customer_metric == "std":
        customer_matrix = np.array(matrix, dtype=np.float64)
    else:
        raise ValueError(f"Invalid customer vicinity metric: {customer_metric}")
    np.fill_diagonal(customer_matrix, np.inf)
    keep_i = min(varphi, n - 1)
    order = np.argsort(customer_matrix, axis=1, kind="stable")[:, :keep_i]
    customer_neighbors = (order + 1).tolist()

    fuzzy = None
    if rho is not None:
        if clustering.membership is None:
            logger.warning("rho is ignored: the clustering has no membership matrix")
            rho = None
        else:
            fuzzy = (clustering.membership.max(axis=1) <= rho).tolist()

    return VicinityIndex(
        subproblem_neighbors=subproblem_neighbors,
        customer_neighbors=customer_neighbors,
        fuzzy=fuzzy,
        rho=rho,
        subproblem_distance=distances,
        sizes=clustering.sizes(),
    )


def write_decomposition(
    out_dir: str,
    instance: Instance,
    clustering: Clustering,
    subproblems: Sequence[SubProblem],
    budget: Optional[TimeBudget] = None,
    vicinity: Optional[VicinityIndex] = None,
    matrix_file: Optional[str] = None,
) -> str:
    """
    Write every subproblem as an instance file plus a manifest JSON.

    ``matrix_file`` names a similarity dump saved next to the manifest.

    Returns:
        Path of the manifest
    """
    os.makedirs(out_dir, exist_ok=True)

    files = []
    for sub in subproblems:
        filename = f"{sub.instance.name}.txt"
        with open(os.path.join(out_dir, filename), "w") as f:
            f.write(format_instance(sub.instance))
        files.append(filename)

    manifest = {
        "instance": instance.name,
        "n": instance.n,
        "q": clustering.q,
        "method": clustering.method,
        "assignment": {str(k + 1): int(p) for k, p in enumerate(clustering.assignment)},
        "medoids": [int(m) + 1 for m in clustering.medoids],
        "subproblems": [dict(sub.to_dict(), file=name) for sub, name in zip(subproblems, files)],
        "fleets": [sub.fleet for sub in subproblems],
        "fleet_overflow": sum(sub.fleet for sub in subproblems) > instance.fleet_size,
        "edge_reduction": edge_reduction([sub.size for sub in subproblems], instance.n),
        "budget": budget.to_dict() if budget is not None else None,
        "vicinity": vicinity.to_dict() if vicinity is not None else None,
        "similarity_matrix": matrix_file,
    }

    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)

    logger.info(f"Decomposition written to: {out_dir}")
    return path
