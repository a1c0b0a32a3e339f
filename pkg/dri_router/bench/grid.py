import glob
import itertools
import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from ..core.instance import DISTANCE_MODES, load_instance
from ..core.pipeline import DriConfig, run_baseline_metric, run_dri
from ..utils.config import ConfigLoader, resolve_workers


logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

CONFIG_COLUMNS = [
    "method", "q_policy", "q_requested", "lam", "alpha", "theta", "phi", "varphi",
    "rho", "strategy", "metric", "solver",
]
RESULT_COLUMNS = [
    "q", "cost_before", "cost_after", "routes_before", "routes_after", "bks",
    "xi_before", "xi_after", "xi_tilde", "edge_reduction", "feasible", "fleet_feasible",
    "state", "error",
]
TIMING_COLUMNS = [
    "similarity_time", "clustering_time", "nu", "routing_time", "improvement_time",
    "total_time", "peak_rss_mb",
]
KEY_COLUMNS = ["schema_version", "instance", "instance_class", "config_id", "config_label", "seed"]
COLUMNS = KEY_COLUMNS + CONFIG_COLUMNS + RESULT_COLUMNS + ["best_cost_over_seeds"] + TIMING_COLUMNS
NUMERIC_COLUMNS = [
    "q_requested", "rho", "q", "cost_before", "cost_after", "routes_before", "routes_after", "bks",
    "xi_before", "xi_after", "xi_tilde", "edge_reduction",
] + TIMING_COLUMNS

_GH_NAME = re.compile(r"^(RC|C|R)([12])_(\d+)_\d+$", re.IGNORECASE)
_SOLOMON_NAME = re.compile(r"^(RC|C|R)([12])\d\d$", re.IGNORECASE)


def instance_class(name: str) -> str:
    """Benchmark class of an instance name: C1_2_4 -> C1_2, R105 -> R1; other names map to themselves."""
    match = _GH_NAME.match(name)
    if match:
        return f"{match.group(1).upper()}{match.group(2)}_{match.group(3)}"
    match = _SOLOMON_NAME.match(name)
    if match:
        return f"{match.group(1).upper()}{match.group(2)}"
    return name


@dataclass
class BksTable:
    """Best-known costs Z* by instance name."""
    values: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.values.items():
            if not value > 0:
                raise ValueError(f"best-known cost of {name} must be positive, got {value}")

    @classmethod
    def from_csv(cls, path: str) -> "BksTable":
        """
        Read a CSV with an ``instance`` column and a ``bks`` (or ``cost``) column.

        Raises:
            FileNotFoundError: If the file doesn't exist
            ValueError: On missing columns or non-positive costs
        """
        if not os.path.exists(path):
            raise FileNotFoundError(f"BKS file not found: {path}")
        frame = pd.read_csv(path)
        frame.columns = [str(c).strip().lower() for c in frame.columns]
        value_column = "bks" if "bks" in frame.columns else "cost"
        if "instance" not in frame.columns or value_column not in frame.columns:
            raise ValueError(f"BKS file {path} needs 'instance' and 'bks' columns")
        values = {str(name).strip(): float(value) for name, value in zip(frame["instance"], frame[value_column])}
        logger.info(f"Loaded {len(values)} best-known costs from: {path}")
        return cls(values)

    def get(self, name: str) -> Optional[float]:
        return self.values.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class ExperimentGrid:
    """
    Cartesian experiment: instances x config axes x seeds.

    Attributes:
        instances: Instance paths or glob patterns
        base: DriConfig fields shared by every cell
        axes: DriConfig field -> list of values to sweep
        seeds: Master seeds, one repetition each
        distance_mode: Distance convention used to load the instances
    """
    instances: List[str]
    base: Dict[str, Any] = field(default_factory=dict)
    axes: Dict[str, List[Any]] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=lambda: [0])
    distance_mode: str = "exact"

    def validate(self):
        """
        Raises:
            ValueError: On empty axes, unknown distance modes or invalid configs
        """
        if not self.instances:
            raise ValueError("grid must list at least one instance")
        if not self.seeds:
            raise ValueError("grid must list at least one seed")
        if self.distance_mode not in DISTANCE_MODES:
            raise ValueError(f"Invalid distance mode: {self.distance_mode}")
        for name, values in self.axes.items():
            if not isinstance(values, list) or not values:
                raise ValueError(f"axis {name!r} must be a non-empty list")
        for _, _, config in self.configs():
            config.validate()

    @classmethod
    def from_toml(cls, path: str) -> "ExperimentGrid":
        data = ConfigLoader.load_grid(path)
        grid = cls(
            instances=list(data["instances"]),
            base=dict(data.get("base", {})),
            axes={name: list(values) if isinstance(values, list) else values for name, values in data.get("axes", {}).items()},
            seeds=[int(s) for s in data.get("seeds", [0])],
            distance_mode=data.get("distance_mode", "exact"),
        )
        grid.validate()
        return grid

    def configs(self) -> List[Tuple[str, str, DriConfig]]:
        """(config id, label, config) for every combination of axis values."""
        names = sorted(self.axes)
        result = []
        for k, values in enumerate(itertools.product(*(self.axes[name] for name in names))):
            overrides = dict(zip(names, values))
            try:
                config = DriConfig.from_dict({**self.base, **overrides})
            except (TypeError, ValueError) as e:
                raise ValueError(f"Invalid grid configuration {overrides}: {e}")
            label = ",".join(f"{name}={value}" for name, value in overrides.items()) or "base"
            result.append((f"cfg{k}", label, config))
        return result

    def instance_paths(self) -> List[str]:
        paths = []
        for pattern in self.instances:
            matches = sorted(glob.glob(pattern))
            if not matches:
                logger.warning(f"No instance files match: {pattern}")
            paths.extend(matches)
        if not paths:
            raise ValueError("grid instances match no files")
        return paths

    def cells(self) -> List[Tuple[str, str, str, DriConfig, int]]:
        """(instance path, config id, label, config, seed) in deterministic order."""
        return [
            (path, config_id, label, replace(config, seed=seed), seed)
            for path in self.instance_paths()
            for config_id, label, config in self.configs()
            for seed in self.seeds
        ]


def _config_columns(config: DriConfig) -> Dict[str, Any]:
    return {
        "method": config.method,
        "q_policy": config.q_policy,
        "q_requested": config.q,
        "lam": config.lam,
        "alpha": config.alpha,
        "theta": config.theta,
        "phi": config.phi,
        "varphi": config.varphi,
        "rho": config.rho,
        "strategy": config.strategy,
        "metric": config.metric,
        "solver": config.solver,
    }


def run_cell(
    path: str,
    config_id: str,
    label: str,
    config: DriConfig,
    seed: int,
    bks: Optional[float] = None,
    distance_mode: str = "exact",
) -> Dict[str, Any]:
    """Run one grid cell and flatten its report into a result row."""
    row: Dict[str, Any] = {column: None for column in COLUMNS}
    row.update({
        "schema_version": SCHEMA_VERSION,
        "config_id": config_id,
        "config_label": label,
        "seed": seed,
        "bks": bks,
    })
    row.update(_config_columns(config))
    started = time.perf_counter()
    try:
        instance = load_instance(path, distance_mode)
        row["instance"] = instance.name
        row["instance_class"] = instance_class(instance.name)
        _, report = run_dri(instance, config, bks)
    except Exception as e:
        logger.error(f"Grid cell {os.path.basename(path)} / {config_id} / seed {seed} failed: {e}")
        row["instance"] = row["instance"] or os.path.splitext(os.path.basename(path))[0]
        row["instance_class"] = instance_class(row["instance"])
        row.update({"state": "failed", "error": str(e), "feasible": False})
        row["total_time"] = time.perf_counter() - started
        return row

    row.update({
        "q": report.q,
        "cost_before": round(report.cost_before, 2),
        "cost_after": round(report.cost_after, 2),
        "routes_before": report.routes_before,
        "routes_after": report.routes_after,
        "edge_reduction": report.edge_reduction,
        "feasible": report.feasible,
        "fleet_feasible": report.fleet_feasible,
        "state": report.state.value,
        "error": "",
        "similarity_time": report.similarity_time,
        "clustering_time": report.clustering_time,
        "nu": report.nu,
        "routing_time": report.routing_time,
        "improvement_time": report.improvement_time,
        "total_time": time.perf_counter() - started,
        "peak_rss_mb": report.peak_rss_mb,
    })
    if report.gaps:
        row.update({key: report.gaps[key] for key in ("xi_before", "xi_after", "xi_tilde")})
    return row


def _cell_worker(args: Tuple) -> Dict[str, Any]:
    return run_cell(*args)


def _bks_for(path: str, bks: Optional[BksTable]) -> Optional[float]:
    if bks is None:
        return None
    name = os.path.splitext(os.path.basename(path))[0]
    if name in bks:
        return bks.get(name)
    # fall back to the name inside the file
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
    if header in bks:
        return bks.get(header)
    logger.warning(f"No best-known cost for {name}: gaps are left blank")
    return None


def run_grid(
    grid: ExperimentGrid,
    bks: Optional[BksTable] = None,
    out_dir: Optional[str] = None,
    execution_mode: str = "sequential",
    max_workers: Optional[int] = None,
) -> pd.DataFrame:
    """
    Run every cell of an experiment grid.

    Args:
        grid: Experiment grid
        bks: Optional best-known costs for gap columns
        out_dir: Directory receiving results.csv/json and the aggregate tables
        execution_mode: 'sequential', 'threading' or 'multiprocessing' across cells
        max_workers: Worker count (defaults to DRI_WORKERS or the physical cores)

    Returns:
        One row per (instance, config, seed) with the columns in COLUMNS
    """
    grid.validate()
    cells = grid.cells()
    jobs = [
        (path, config_id, label, config, seed, _bks_for(path, bks), grid.distance_mode)
        for path, config_id, label, config, seed in cells
    ]
    logger.info(f"Running grid with {len(jobs)} cells")

    if execution_mode == "sequential" or len(jobs) <= 1:
        rows = [_cell_worker(job) for job in jobs]
    else:
        executor_class = ThreadPoolExecutor if execution_mode == "threading" else ProcessPoolExecutor
        with executor_class(max_workers=resolve_workers(max_workers)) as executor:
            rows = list(executor.map(_cell_worker, jobs))

    frame = pd.DataFrame(rows, columns=COLUMNS)
    for column in NUMERIC_COLUMNS:
        frame[column] = pd.to_numeric(frame[column], errors="coerce")
    frame["best_cost_over_seeds"] = frame.groupby(["instance", "config_id"])["cost_after"].transform("min")

    if out_dir:
        write_results(frame, out_dir)
    failed = int((frame["state"] == "failed").sum())
    logger.info(f"Grid finished: {len(frame)} rows, {failed} failed")
    return frame


def best_of_seeds(frame: pd.DataFrame) -> pd.DataFrame:
    """Best and mean final cost over seeds per (instance, config)."""
    grouped = frame.groupby(["instance", "instance_class", "config_id", "config_label"], as_index=False)
    return grouped.agg(
        best_cost=("cost_after", "min"),
        mean_cost=("cost_after", "mean"),
        best_cost_before=("cost_before", "min"),
        best_xi_after=("xi_after", "min"),
        runs=("seed", "count"),
    )


def class_means(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Per-instance best-of-seeds rows followed by their class means.

    The ``row_type`` column tells the two apart.
    """
    best = best_of_seeds(frame)
    per_instance = best.assign(row_type="instance")
    means = (
        best.groupby(["instance_class", "config_id", "config_label"], as_index=False)
        .agg(best_cost=("best_cost", "mean"), mean_cost=("mean_cost", "mean"),
             best_cost_before=("best_cost_before", "mean"), best_xi_after=("best_xi_after", "mean"),
             runs=("runs", "sum"))
        .assign(row_type="class_mean", instance="")
    )
    return pd.concat([per_instance, means[per_instance.columns]], ignore_index=True)


def theta_pivot(frame: pd.DataFrame) -> pd.DataFrame:
    """Best final cost per instance with one column per total budget."""
    table = frame.pivot_table(index="instance", columns="theta", values="cost_after", aggfunc="min")
    table.columns = [f"best_theta_{theta:g}" for theta in table.columns]
    return table.reset_index()


def metric_comparison(frame: pd.DataFrame) -> pd.DataFrame:
    """Best final cost per instance under the STD metric and the travel-cost metric."""
    table = frame.pivot_table(index="instance", columns="metric", values="cost_after", aggfunc="min")
    table.columns = [f"cost_{metric}" for metric in table.columns]
    table = table.reset_index()
    if {"cost_std", "cost_euclidean"} <= set(table.columns):
        table["std_minus_euclidean"] = table["cost_std"] - table["cost_euclidean"]
    return table


def compare_metrics(
    paths: Sequence[str],
    config: Optional[DriConfig] = None,
    distance_mode: str = "exact",
) -> pd.DataFrame:
    """Run each instance with the STD metric and with pure travel cost."""
    config = config or DriConfig()
    rows = []
    for path in paths:
        instance = load_instance(path, distance_mode)
        std_solution, _ = run_dri(instance, replace(config, metric="std"))
        base_solution, _ = run_baseline_metric(instance, config)
        rows.append({"instance": instance.name, "metric": "std", "cost_after": std_solution.total_cost})
        rows.append({"instance": instance.name, "metric": "euclidean", "cost_after": base_solution.total_cost})
    return metric_comparison(pd.DataFrame(rows))


def write_results(frame: pd.DataFrame, out_dir: str) -> Dict[str, str]:
    """
    Write raw rows and the aggregate tables.

    Returns:
        Table name -> path
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "results": os.path.join(out_dir, "results.csv"),
        "results_json": os.path.join(out_dir, "results.json"),
        "best_of_seeds": os.path.join(out_dir, "best_of_seeds.csv"),
        "class_means": os.path.join(out_dir, "class_means.csv"),
    }
    frame.to_csv(paths["results"], index=False)
    frame.to_json(paths["results_json"], orient="records", indent=2)

    succeeded = frame[frame["state"] != "failed"]
    best_of_seeds(succeeded).to_csv(paths["best_of_seeds"], index=False)
    class_means(succeeded).to_csv(paths["class_means"], index=False)
    if succeeded["theta"].nunique() > 1:
        paths["theta_pivot"] = os.path.join(out_dir, "theta_pivot.csv")
        theta_pivot(succeeded).to_csv(paths["theta_pivot"], index=False)
    if succeeded["metric"].nunique() > 1:
        paths["metric_comparison"] = os.path.join(out_dir, "metric_comparison.csv")
        metric_comparison(succeeded).to_csv(paths["metric_comparison"], index=False)

    logger.info(f"Benchmark tables written to: {out_dir}")
    return paths
