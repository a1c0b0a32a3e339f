"""Seeded synthetic VRPTW instances for tests, oracles and desk-scale runs."""

import logging
import math
from typing import Optional, Tuple

import numpy as np

from ..core.instance import Instance, Vertex
from ..utils.seeding import make_rng


logger = logging.getLogger(__name__)

LAYOUTS = ("random", "clustered", "mixed")
WINDOWS = ("loose", "tight")

# half-width ranges of the customer windows
WINDOW_WIDTHS = {"loose": (60, 200), "tight": (10, 30)}


def _coordinates(rng: np.random.Generator, n: int, layout: str, grid: float, integral: bool) -> np.ndarray:
    uniform = rng.uniform(0.0, grid, size=(n, 2))
    if layout == "random":
        coords = uniform
    else:
        seeds = rng.uniform(0.15 * grid, 0.85 * grid, size=(max(2, n // 25), 2))
        picks = rng.integers(0, len(seeds), size=n)
        coords = np.clip(seeds[picks] + rng.normal(0.0, 0.06 * grid, size=(n, 2)), 0.0, grid)
        if layout == "mixed":
            half = rng.random(n) < 0.5
            coords[half] = uniform[half]
    if integral:
        coords = np.round(coords)
    return coords


def random_instance(
    n: int,
    seed: int = 0,
    layout: str = "random",
    window: str = "loose",
    capacity: float = 200.0,
    fleet: Optional[int] = None,
    service: float = 10.0,
    horizon: float = 1000.0,
    grid: float = 100.0,
    demand_range: Tuple[int, int] = (1, 30),
    integral: bool = True,
    name: Optional[str] = None,
) -> Instance:
    """
    Generate a random VRPTW instance with the depot at the centre of the grid.

    Every customer can be served by a dedicated vehicle: its window centre is
    drawn between the direct arrival time from the depot and the latest start
    that still returns to the depot before the horizon.

    Args:
        n: Number of customers
        seed: Master seed
        layout: 'random', 'clustered' or 'mixed'
        window: 'loose' or 'tight' time windows
        capacity: Vehicle capacity Q
        fleet: Fleet size m (defaults to n, i.e. never binding)
        service: Service time of every customer
        horizon: Depot closing time; the depot opens at 0
        grid: Side length of the square customer area
        demand_range: Inclusive integer demand range
        integral: Round coordinates to integers
        name: Instance name

    Returns:
        Validated Instance

    Raises:
        ValueError: On invalid parameters
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if layout not in LAYOUTS:
        raise ValueError(f"Invalid layout: {layout}")
    if window not in WINDOWS:
        raise ValueError(f"Invalid window type: {window}")
    low, high = demand_range
    if not 0 <= low <= high <= capacity:
        raise ValueError(f"demand range {demand_range} must lie within [0, {capacity}]")

    rng = make_rng(seed, "synthetic", n)
    depot = Vertex(0, grid / 2.0, grid / 2.0, 0.0, 0.0, horizon, 0.0)
    coords = _coordinates(rng, n, layout, grid, integral)
    demands = rng.integers(low, high + 1, size=n)
    widths = WINDOW_WIDTHS[window]

    customers = []
    for k in range(n):
        x, y = float(coords[k, 0]), float(coords[k, 1])
        travel = math.hypot(x - depot.x, y - depot.y)
        first, last = math.ceil(travel), math.floor(horizon - service - travel)
        if first > last:
            raise ValueError(f"horizon {horizon} is too short to serve customer {k + 1}")
        centre = int(rng.integers(first, last + 1))
        half = int(rng.integers(widths[0], widths[1] + 1))
        customers.append(Vertex(
            k + 1, x, y, float(demands[k]),
            float(max(0, centre - half)), float(min(horizon, centre + half)), service,
        ))

    name = name or f"synthetic_{layout}_{window}_n{n}_s{seed}"
    instance = Instance(name, depot, customers, fleet if fleet is not None else n, capacity)
    logger.debug(f"Generated {instance!r}")
    return instance
