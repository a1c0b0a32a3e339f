import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from .instance import Instance, Vertex


logger = logging.getLogger(__name__)

METRICS = ("std", "euclidean")


@dataclass(frozen=True)
class FeatureVector:
    """Customer feature vector (x, y, theta, e, l, s, d)."""
    x: float
    y: float
    theta: float
    earliest: float
    latest: float
    service: float
    demand: float


@dataclass(frozen=True)
class SimilarityConfig:
    """
    Parameters of the STD metric.

    Attributes:
        lam: Weight of the polar-angle term
        span: Operational span l_w - e_w
        capacity: Vehicle capacity Q
        circular_angles: Use the wrapped angle difference instead of the raw one
        metric: 'std' or 'euclidean' (pure travel cost)
    """
    lam: float = 1.0
    span: float = 1.0
    capacity: float = 1.0
    circular_angles: bool = False
    metric: str = "std"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if not self.span > 0:
            raise ValueError(f"operational span must be positive, got {self.span}")
        if not self.capacity > 0:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        if self.metric not in METRICS:
            raise ValueError(f"Invalid similarity metric: {self.metric}")

    @classmethod
    def from_instance(
        cls,
        instance: Instance,
        lam: float = 1.0,
        circular_angles: bool = False,
        metric: str = "std",
    ) -> "SimilarityConfig":
        return cls(
            lam=lam,
            span=instance.horizon,
            capacity=instance.capacity,
            circular_angles=circular_angles,
            metric=metric,
        )


class Features:
    """Column-wise feature vectors of all customers (row k is customer k+1)."""

    def __init__(self, instance: Instance):
        depot = instance.depot
        coords = instance.coords[1:]
        self.x = coords[:, 0].copy()
        self.y = coords[:, 1].copy()
        self.theta = polar_angles(self.x, self.y, depot.x, depot.y)
        self.earliest = instance.earliest[1:].copy()
        self.latest = instance.latest[1:].copy()
        self.service = instance.service[1:].copy()
        self.demand = instance.demand[1:].copy()

    def __len__(self) -> int:
        return len(self.x)

    def vector(self, k: int) -> FeatureVector:
        return FeatureVector(
            float(self.x[k]), float(self.y[k]), float(self.theta[k]),
            float(self.earliest[k]), float(self.latest[k]),
            float(self.service[k]), float(self.demand[k]),
        )

    def as_matrix(self) -> np.ndarray:
        """(n, 7) matrix with columns x, y, theta, e, l, s, d."""
        return np.column_stack(
            [self.x, self.y, self.theta, self.earliest, self.latest, self.service, self.demand]
        )


def polar_angle(vertex: Vertex, depot: Vertex) -> float:
    """
    Polar angle of a vertex around the depot, in (-pi, pi].

    A vertex located on the depot gets angle 0.
    """
    dx = vertex.x - depot.x
    dy = vertex.y - depot.y
    if dx == 0 and dy == 0:
        return 0.0
    angle = math.atan2(dy, dx)
    return math.pi if angle == -math.pi else angle


def polar_angles(x: np.ndarray, y: np.ndarray, x_depot: float, y_depot: float) -> np.ndarray:
    dx = x - x_depot
    dy = y - y_depot
    angles = np.arctan2(dy, dx)
    angles = np.where(angles == -np.pi, np.pi, angles)
    return np.where((dx == 0) & (dy == 0), 0.0, angles)


def _angle_difference(theta_i, theta_j, circular: bool):
    diff = np.abs(np.asarray(theta_j) - np.asarray(theta_i))
    if circular:
        diff = np.minimum(diff, 2.0 * np.pi - diff)
    return diff


def spatial_similarity(fi: FeatureVector, fj: FeatureVector, lam: float, circular: bool = False) -> float:
    """sqrt(dx^2 + dy^2 + lam * dtheta^2); reduces to the Euclidean distance for lam = 0."""
    dtheta = float(_angle_difference(fi.theta, fj.theta, circular))
    return math.hypot(math.hypot(fj.x - fi.x, fj.y - fi.y), math.sqrt(lam) * dtheta)


def spatial_matrix(features: Features, lam: float, circular: bool = False) -> np.ndarray:
    dx = features.x[None, :] - features.x[:, None]
    dy = features.y[None, :] - features.y[:, None]
    dtheta = _angle_difference(features.theta[:, None], features.theta[None, :], circular)
    return np.hypot(np.hypot(dx, dy), math.sqrt(lam) * dtheta)


def scheduling_flexibility(instance: Instance, i: int, j: int) -> float:
    """f_ij = l_j - (e_i + s_i + t_ij) for vertex indices i, j; negative marks an infeasible edge."""
    return float(instance.latest[j] - (instance.earliest[i] + instance.service[i] + instance.travel_time[i, j]))


def min_waiting(instance: Instance, i: int, j: int) -> float:
    """h_ij = max(e_j - (l_i + s_i + t_ij), 0)."""
    return max(float(instance.earliest[j] - (instance.latest[i] + instance.service[i] + instance.travel_time[i, j])), 0.0)


def std_distance(
    spatial: float,
    flexibility: float,
    waiting: float,
    demand_i: float,
    demand_j: float,
    config: SimilarityConfig,
) -> float:
    """Directed STD distance S^s * (2 - (f - h) / span + (d_i + d_j) / Q)."""
    return spatial * (2.0 - (flexibility - waiting) / config.span + (demand_i + demand_j) / config.capacity)


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """
    Pairwise similarity structure over customer positions 0..n-1.

    Position k corresponds to instance vertex k+1. ``symmetric`` is the
    matrix consumed by clustering and vicinity construction. Matrices
    reloaded from a dump carry only ``symmetric``; the component arrays
    are None.
    """
    directed: Optional[np.ndarray]
    symmetric: np.ndarray
    flexibility: Optional[np.ndarray]
    waiting: Optional[np.ndarray]
    spatial: Optional[np.ndarray]
    features: Features
    config: SimilarityConfig

    @property
    def n(self) -> int:
        return self.symmetric.shape[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "lambda": self.config.lam,
            "metric": self.config.metric,
            "span": self.config.span,
            "capacity": self.config.capacity,
            "circular_angles": self.config.circular_angles,
        }


def build_similarity_matrix(instance: Instance, config: Optional[SimilarityConfig] = None) -> SimilarityMatrix:
    """
    Build the directed and symmetrized similarity matrices of an instance.

    Args:
        instance: Instance to analyse
        config: Metric parameters; defaults to lambda = 1 and the STD metric

    Returns:
        Immutable SimilarityMatrix
    """
    if config is None:
        config = SimilarityConfig.from_instance(instance)

    features = Features(instance)
    travel = instance.travel_time[1:, 1:]
    e, l, s, d = features.earliest, features.latest, features.service, features.demand

    flexibility = l[None, :] - (e[:, None] + s[:, None] + travel)
    waiting = np.maximum(e[None, :] - (l[:, None] + s[:, None] + travel), 0.0)

    if config.metric == "euclidean":
        spatial = np.array(instance.cost[1:, 1:])
        directed = spatial.copy()
    else:
        spatial = spatial_matrix(features, config.lam, config.circular_angles)
        directed = spatial * (
            2.0 - (flexibility - waiting) / config.span + (d[:, None] + d[None, :]) / config.capacity
        )

    symmetric = np.minimum(directed, directed.T)
    for array in (directed, symmetric, flexibility, waiting, spatial):
        array.setflags(write=False)

    logger.debug(f"Built {config.metric} similarity matrix for {instance.n} customers")
    return SimilarityMatrix(
        directed=directed,
        symmetric=symmetric,
        flexibility=flexibility,
        waiting=waiting,
        spatial=spatial,
        features=features,
        config=config,
    )


def pseudo_std_distance(features: Features, tau: FeatureVector, config: SimilarityConfig) -> np.ndarray:
    """
    Symmetrized STD distance from every customer to a synthetic feature vector.

    The travel time to the synthetic point equals its spatial similarity.

    Returns:
        Array of length n
    """
    if config.metric == "euclidean":
        return np.hypot(features.x - tau.x, features.y - tau.y)

    dtheta = _angle_difference(features.theta, tau.theta, config.circular_angles)
    spatial = np.hypot(np.hypot(features.x - tau.x, features.y - tau.y), math.sqrt(config.lam) * dtheta)
    travel = spatial

    demand_term = (tau.demand + features.demand) / config.capacity

    flex_out = features.latest - (tau.earliest + tau.service + travel)
    wait_out = np.maximum(features.earliest - (tau.latest + tau.service + travel), 0.0)
    out = spatial * (2.0 - (flex_out - wait_out) / config.span + demand_term)

    flex_in = tau.latest - (features.earliest + features.service + travel)
    wait_in = np.maximum(tau.earliest - (features.latest + features.service + travel), 0.0)
    inbound = spatial * (2.0 - (flex_in - wait_in) / config.span + demand_term)

    return np.minimum(out, inbound)


def save_matrix(matrix: SimilarityMatrix, path: str) -> str:
    """
    Dump the symmetric matrix as row-major little-endian float64 plus a JSON sidecar.

    Returns:
        Path of the sidecar file
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    payload = np.ascontiguousarray(matrix.symmetric, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(payload)

    sidecar = f"{path}.json"
    meta = dict(matrix.to_dict(), sha256=hashlib.sha256(payload).hexdigest())
    with open(sidecar, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)

    logger.info(f"Similarity matrix saved to: {path}")
    return sidecar


def load_matrix(path: str) -> np.ndarray:
    """
    Read a matrix written by save_matrix.

    Raises:
        FileNotFoundError: If the matrix or sidecar is missing
        ValueError: If the checksum or size doesn't match the sidecar
    """
    sidecar = f"{path}.json"
    for required in (path, sidecar):
        if not os.path.exists(required):
            raise FileNotFoundError(f"Similarity matrix file not found: {required}")

    with open(sidecar, "r") as f:
        meta = json.load(f)
    with open(path, "rb") as f:
        payload = f.read()

    if hashlib.sha256(payload).hexdigest() != meta.get("sha256"):
        raise ValueError(f"Checksum mismatch for similarity matrix: {path}")

    n = int(meta["n"])
    if len(payload) != n * n * 8:
        raise ValueError(f"Similarity matrix size mismatch: expected {n}x{n}")

    return np.frombuffer(payload, dtype="<f8").reshape(n, n).copy()


def _same_setting(stored: Any, current: Any) -> bool:
    numeric = (int, float)
    if isinstance(stored, numeric) and isinstance(current, numeric) and not isinstance(stored, bool):
        return math.isclose(stored, current)
    return stored == current


def reuse_matrix(instance: Instance, config: SimilarityConfig, path: str) -> SimilarityMatrix:
    """
    Load a dumped matrix for an instance instead of rebuilding it.

    Raises:
        FileNotFoundError: If the matrix or sidecar is missing
        ValueError: If the dump was written for another size or metric setting
    """
    symmetric = load_matrix(path)
    with open(f"{path}.json", "r") as f:
        meta = json.load(f)

    features = Features(instance)
    expected = SimilarityMatrix(None, symmetric, None, None, None, features, config).to_dict()
    expected["n"] = instance.n
    mismatched = sorted(key for key, value in expected.items() if not _same_setting(meta.get(key), value))
    if mismatched:
        raise ValueError(f"Similarity matrix {path} doesn't match this run: {', '.join(mismatched)} differ")

    symmetric.setflags(write=False)
    logger.info(f"Reusing similarity matrix from: {path}")
    return SimilarityMatrix(None, symmetric, None, None, None, features, config)
