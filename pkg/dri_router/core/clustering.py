import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .instance import Instance
from .similarity import Features, FeatureVector, SimilarityMatrix, pseudo_std_distance


logger = logging.getLogger(__name__)

METHODS = ("k_medoids", "fuzzy_c_medoids", "agglomerative")
LINKAGES = ("single", "complete", "average")
Q_POLICIES = ("solver", "fleet", "fixed")
FUZZY_INITS = ("medoids", "random")

DEFAULT_MAX_ITERATIONS = {"k_medoids": 100, "fuzzy_c_medoids": 200, "agglomerative": 0}


@dataclass(frozen=True)
class ClusteringSpec:
    """
    Clustering parameters.

    Attributes:
        method: 'k_medoids', 'fuzzy_c_medoids' or 'agglomerative'
        q: Target number of clusters
        kappa: Fuzziness exponent (fuzzy only), strictly greater than 1
        epsilon: Convergence threshold on max |dU| (fuzzy only)
        linkage: 'single', 'complete' or 'average' (agglomerative only)
        seed: Seed for the membership initialisation and tie-breaking
        max_iterations: Iteration cap; None selects the method default
        fuzzy_init: Start fuzzy c-medoids from the k-medoids partition ('medoids')
            or from seeded random memberships ('random')
    """
    method: str = "k_medoids"
    q: int = 2
    kappa: float = 2.0
    epsilon: float = 1e-4
    linkage: str = "average"
    seed: int = 0
    max_iterations: Optional[int] = None
    fuzzy_init: str = "medoids"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"Invalid clustering method: {self.method}")
        if self.fuzzy_init not in FUZZY_INITS:
            raise ValueError(f"Invalid fuzzy initialisation: {self.fuzzy_init}")
        if self.linkage not in LINKAGES:
            raise ValueError(f"Invalid linkage: {self.linkage}")
        if not self.kappa > 1:
            raise ValueError(f"kappa must be greater than 1, got {self.kappa}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")

    @property
    def iteration_cap(self) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return DEFAULT_MAX_ITERATIONS[self.method]


@dataclass(frozen=True, eq=False)
class Clustering:
    """
    Partition of the customers into q clusters.

    ``assignment[k]`` is the cluster (0..q-1) of customer position k, i.e.
    instance vertex k+1; ``medoids`` holds customer positions.
    """
    method: str
    q: int
    assignment: np.ndarray
    medoids: Tuple[int, ...]
    iterations: int = 0
    membership: Optional[np.ndarray] = None
    objective_history: Tuple[float, ...] = ()
    merges: Tuple[Tuple[int, int, float], ...] = ()
    linkage: Optional[str] = None
    seed: int = 0

    def clusters(self) -> List[np.ndarray]:
        """Sorted customer positions of every cluster."""
        return [np.flatnonzero(self.assignment == p) for p in range(self.q)]

    def sizes(self) -> List[int]:
        return np.bincount(self.assignment, minlength=self.q).tolist()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "q": self.q,
            "assignment": self.assignment.tolist(),
            "medoids": [int(m) + 1 for m in self.medoids],
            "iterations": self.iterations,
            "linkage": self.linkage,
            "seed": self.seed,
            "objective_history": list(self.objective_history),
            "merges": [[a, b, d] for a, b, d in self.merges],
            "membership": self.membership.tolist() if self.membership is not None else None,
        }


def _check_q(q: int, n: int, minimum: int):
    if q < minimum:
        raise ValueError(f"q must be at least {minimum}, got {q}")
    if q > n:
        raise ValueError(f"q ({q}) exceeds the number of customers ({n})")


def _nearest_medoid(matrix: np.ndarray, medoids: np.ndarray) -> np.ndarray:
    # Columns ordered by medoid position so equal distances go to the lowest id.
    order = np.argsort(medoids, kind="stable")
    nearest = order[np.argmin(matrix[:, medoids[order]], axis=1)]
    nearest[medoids] = np.arange(len(medoids))
    return nearest


def medoid_objective(matrix: np.ndarray, assignment: np.ndarray, medoids) -> float:
    """Sum of distances from every customer to the medoid of its cluster."""
    medoids = np.asarray(medoids)
    return float(matrix[np.arange(len(assignment)), medoids[assignment]].sum())


def cluster_medoids(matrix: np.ndarray, assignment: np.ndarray, q: int) -> np.ndarray:
    """Member with the smallest summed distance to its cluster, lowest position on ties."""
    medoids = np.empty(q, dtype=np.int64)
    for p in range(q):
        members = np.flatnonzero(assignment == p)
        if len(members) == 0:
            raise ValueError(f"cluster {p} is empty")
        costs = matrix[np.ix_(members, members)].sum(axis=0)
        medoids[p] = members[int(np.argmin(costs))]
    return medoids


def kmedoids_seeds(matrix: np.ndarray, q: int) -> np.ndarray:
    """The q customers with the smallest normalised similarity score v_i."""
    column_sums = matrix.sum(axis=0)
    inverse = np.divide(1.0, column_sums, out=np.zeros_like(column_sums), where=column_sums > 0)
    scores = matrix @ inverse
    return np.argsort(scores, kind="stable")[:q]


def kmedoids(similarity: SimilarityMatrix, spec: ClusteringSpec) -> Clustering:
    """
    k-medoids clustering over the symmetric similarity matrix.

    Alternates nearest-medoid assignment and medoid update until the medoid
    set stops changing or the iteration cap is hit.

    Raises:
        ValueError: If q < 2 or q > n
    """
    matrix = np.asarray(similarity.symmetric)
    n = matrix.shape[0]
    _check_q(spec.q, n, 2)

    medoids = kmedoids_seeds(matrix, spec.q)
    assignment = _nearest_medoid(matrix, medoids)
    history = [medoid_objective(matrix, assignment, medoids)]

    iterations = 0
    while iterations < spec.iteration_cap:
        iterations += 1
        updated = cluster_medoids(matrix, assignment, spec.q)
        if np.array_equal(updated, medoids):
            break
        medoids = updated
        assignment = _nearest_medoid(matrix, medoids)
        history.append(medoid_objective(matrix, assignment, medoids))

    logger.debug(f"k-medoids converged after {iterations} iterations, objective {history[-1]:.4f}")
    return Clustering(
        method="k_medoids",
        q=spec.q,
        assignment=assignment,
        medoids=tuple(int(m) for m in medoids),
        iterations=iterations,
        objective_history=tuple(history),
        seed=spec.seed,
    )


def membership_from_distances(distances: np.ndarray, kappa: float) -> np.ndarray:
    """
    Degrees of membership mu_ip = 1 / sum_g (D_ip / D_ig)^(2 / (kappa - 1)).

    Rows with a zero distance get membership 1 to the first such cluster.
    """
    distances = np.asarray(distances, dtype=np.float64)
    exponent = 2.0 / (kappa - 1.0)
    zero = distances <= 0
    singular = zero.any(axis=1)

    safe = np.where(zero, 1.0, distances)
    logits = -exponent * np.log(safe)
    logits -= logits.max(axis=1, keepdims=True)
    weights = np.exp(logits)
    membership = weights / weights.sum(axis=1, keepdims=True)

    if singular.any():
        rows = np.flatnonzero(singular)
        membership[rows] = 0.0
        membership[rows, np.argmax(zero[rows], axis=1)] = 1.0
    return membership


def _cluster_prototype(matrix: np.ndarray, weights: np.ndarray) -> FeatureVector:
    total = weights.sum()
    if total <= 0:
        mean = matrix.mean(axis=0)
    else:
        mean = weights @ matrix / total
    return FeatureVector(*(float(v) for v in mean))


def _pseudo_medoids(features: Features, membership: np.ndarray, similarity: SimilarityMatrix) -> np.ndarray:
    table = features.as_matrix()
    q = membership.shape[1]
    taken = np.zeros(len(features), dtype=bool)
    medoids = np.empty(q, dtype=np.int64)
    for p in range(q):
        tau = _cluster_prototype(table, membership[:, p])
        distances = pseudo_std_distance(features, tau, similarity.config)
        distances = np.where(taken, np.inf, distances)
        medoids[p] = int(np.argmin(distances))
        taken[medoids[p]] = True
    return medoids


def fuzzy_cmedoids(
    similarity: SimilarityMatrix,
    features: Optional[Features],
    spec: ClusteringSpec,
) -> Clustering:
    """
    Fuzzy c-medoids clustering.

    Each iteration forms the membership-weighted mean feature vector of every
    cluster, picks the distinct customer closest to it as medoid and then
    recomputes the membership matrix from the customer-medoid distances.
    Memberships start from the k-medoids partition unless
    ``spec.fuzzy_init`` is 'random'. Clusters left with one customer are
    logged as a warning.

    Args:
        similarity: Similarity structure of the instance
        features: Customer features (defaults to ``similarity.features``)
        spec: Clustering parameters

    Returns:
        Clustering with hard assignment by maximum membership and the full U
    """
    matrix = np.asarray(similarity.symmetric)
    n = matrix.shape[0]
    _check_q(spec.q, n, 2)
    features = features if features is not None else similarity.features

    if spec.fuzzy_init == "medoids":
        start = kmedoids(similarity, replace(spec, method="k_medoids", max_iterations=None))
        membership = membership_from_distances(matrix[:, np.asarray(start.medoids)], spec.kappa)
    else:
        rng = np.random.default_rng(spec.seed)
        membership = rng.random((n, spec.q))
        membership /= membership.sum(axis=1, keepdims=True)

    medoids = np.arange(spec.q)
    iterations = 0
    while iterations < spec.iteration_cap:
        iterations += 1
        medoids = _pseudo_medoids(features, membership, similarity)
        updated = membership_from_distances(matrix[:, medoids], spec.kappa)
        change = float(np.max(np.abs(updated - membership)))
        membership = updated
        if change < spec.epsilon:
            break

    assignment = np.argmax(membership, axis=1)
    assignment[medoids] = np.arange(spec.q)
    membership.setflags(write=False)

    singletons = int(np.sum(np.bincount(assignment, minlength=spec.q) == 1))
    if singletons and n > spec.q:
        logger.warning(f"Fuzzy c-medoids left {singletons} of {spec.q} clusters with a single customer")

    logger.debug(f"Fuzzy c-medoids stopped after {iterations} iterations")
    return Clustering(
        method="fuzzy_c_medoids",
        q=spec.q,
        assignment=assignment,
        medoids=tuple(int(m) for m in medoids),
        iterations=iterations,
        membership=membership,
        seed=spec.seed,
    )


def agglomerate(
    matrix: np.ndarray,
    q: int,
    linkage: str = "average",
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, List[Tuple[int, int, float]]]:
    """
    Merge singletons until q clusters remain.

    Clusters are identified by their smallest member. Exactly tied pairs are
    listed in (a, b) order and one is drawn uniformly with ``rng``.

    Every active cluster caches its nearest neighbour; a merge updates one
    linkage row in place (Lance-Williams) and rescans only the rows whose
    neighbour was merged, so the usual cost is O(n^2) overall.

    Returns:
        (cluster label per position with labels ordered by smallest member,
        merge sequence of (a, b, linkage distance))
    """
    if linkage not in LINKAGES:
        raise ValueError(f"Invalid linkage: {linkage}")
    rng = rng if rng is not None else np.random.default_rng(0)

    n = matrix.shape[0]
    link = np.array(matrix, dtype=np.float64, copy=True)
    np.fill_diagonal(link, np.inf)
    totals = np.array(matrix, dtype=np.float64, copy=True)
    sizes = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    root = np.arange(n)
    nearest = link.argmin(axis=1)
    closest = link[np.arange(n), nearest]
    merges: List[Tuple[int, int, float]] = []

    for _ in range(n - q):
        best = closest.min()
        pairs = [
            (int(i), int(j))
            for i in np.flatnonzero(closest == best)
            for j in np.flatnonzero(link[i, i + 1:] == best) + i + 1
        ]
        a, b = pairs[int(rng.choice(len(pairs)))] if len(pairs) > 1 else pairs[0]
        merges.append((a, b, float(best)))

        if linkage == "single":
            row = np.minimum(link[a], link[b])
        elif linkage == "complete":
            row = np.maximum(link[a], link[b])
        else:
            totals[a] += totals[b]
            totals[:, a] = totals[a]
            sizes[a] += sizes[b]
            row = totals[a] / (sizes[a] * sizes)

        active[b] = False
        root[root == b] = a
        row = np.where(active, row, np.inf)
        row[a] = np.inf
        link[a] = row
        link[:, a] = row
        link[b] = np.inf
        link[:, b] = np.inf

        stale = active & ((nearest == a) | (nearest == b))
        stale[a] = True
        closer = active & ~stale & (row < closest)
        closest[closer] = row[closer]
        nearest[closer] = a
        rows = np.flatnonzero(stale)
        nearest[rows] = link[rows].argmin(axis=1)
        closest[rows] = link[rows, nearest[rows]]
        closest[b] = np.inf

    representatives = np.flatnonzero(active)
    labels = np.searchsorted(representatives, root)
    return labels, merges


def agglomerative(similarity: SimilarityMatrix, spec: ClusteringSpec) -> Clustering:
    """
    Agglomerative clustering with single, complete or average linkage.

    Raises:
        ValueError: If q < 1 or q > n
    """
    matrix = np.asarray(similarity.symmetric)
    n = matrix.shape[0]
    _check_q(spec.q, n, 1)

    labels, merges = agglomerate(matrix, spec.q, spec.linkage, np.random.default_rng(spec.seed))
    medoids = cluster_medoids(matrix, labels, spec.q)

    logger.debug(f"Agglomerative ({spec.linkage}) performed {len(merges)} merges")
    return Clustering(
        method="agglomerative",
        q=spec.q,
        assignment=labels,
        medoids=tuple(int(m) for m in medoids),
        iterations=len(merges),
        merges=tuple(merges),
        linkage=spec.linkage,
        seed=spec.seed,
    )


def cluster_customers(similarity: SimilarityMatrix, spec: ClusteringSpec) -> Clustering:
    """Dispatch to the configured clustering method."""
    if spec.method == "k_medoids":
        return kmedoids(similarity, spec)
    if spec.method == "fuzzy_c_medoids":
        return fuzzy_cmedoids(similarity, None, spec)
    return agglomerative(similarity, spec)


def choose_q(
    instance: Instance,
    policy: str = "solver",
    target_size: int = 500,
    q: Optional[int] = None,
) -> int:
    """
    Number of subproblems for an instance.

    Args:
        instance: Instance to decompose
        policy: 'solver' (ceil(n / target_size)), 'fleet' (ceil(sum d / Q))
            or 'fixed' (use ``q``)
        target_size: Customers per subproblem the routing backend handles well
        q: Cluster count for the fixed policy

    Returns:
        q clamped to [1, n]; 1 means no decomposition
    """
    if policy not in Q_POLICIES:
        raise ValueError(f"Invalid q policy: {policy}")

    if policy == "solver":
        if target_size < 1:
            raise ValueError(f"target_size must be positive, got {target_size}")
        value = math.ceil(instance.n / target_size)
    elif policy == "fleet":
        value = math.ceil(instance.total_demand / instance.capacity - 1e-9)
    else:
        if q is None:
            raise ValueError("fixed q policy requires q")
        value = q

    return max(1, min(int(value), max(instance.n, 1)))


def single_cluster(n: int, method: str = "k_medoids") -> Clustering:
    """Trivial clustering with every customer in cluster 0."""
    return Clustering(method=method, q=1, assignment=np.zeros(n, dtype=np.int64), medoids=(0,))
