"""Integration tests for experiment grids and benchmark tables."""

import json
import os

import pandas as pd
import pytest

from dri_router.bench.grid import (
    COLUMNS,
    TIMING_COLUMNS,
    BksTable,
    ExperimentGrid,
    compare_metrics,
    instance_class,
    run_cell,
    run_grid,
)
from dri_router.bench.synthetic import random_instance
from dri_router.core.instance import format_instance
from dri_router.core.pipeline import DriConfig


pytestmark = pytest.mark.integration


BASE = {"q_policy": "fixed", "q": 2, "theta": 30.0, "restarts": 1}


@pytest.fixture
def instance_dir(temp_dir):
    """Two small synthetic instances written to disk."""
    directory = os.path.join(temp_dir, "instances")
    os.makedirs(directory)
    for seed in (1, 2):
        instance = random_instance(16, seed=seed, layout="mixed", name=f"R1_2_{seed}")
        with open(os.path.join(directory, f"R1_2_{seed}.txt"), "w") as f:
            f.write(format_instance(instance))
    return directory


@pytest.fixture
def bks_file(temp_dir):
    """Best-known costs for the first instance only."""
    path = os.path.join(temp_dir, "bks.csv")
    pd.DataFrame({"instance": ["R1_2_1"], "bks": [100.0]}).to_csv(path, index=False)
    return path


class TestInstanceClass:
    """Test cases for instance_class."""

    @pytest.mark.parametrize("name,expected", [
        ("C1_2_4", "C1_2"),
        ("RC2_10_1", "RC2_10"),
        ("r1_4_7", "R1_4"),
        ("R105", "R1"),
        ("RC208", "RC2"),
        ("synthetic_random_loose_n40_s1", "synthetic_random_loose_n40_s1"),
    ])
    def test_names(self, name, expected):
        """Test class names of benchmark and custom instances."""
        assert instance_class(name) == expected


class TestBksTable:
    """Test cases for BksTable."""

    def test_from_csv(self, bks_file):
        """Test reading the table."""
        table = BksTable.from_csv(bks_file)

        assert len(table) == 1
        assert "R1_2_1" in table
        assert table.get("R1_2_1") == 100.0
        assert table.get("R1_2_2") is None

    def test_cost_column(self, temp_dir):
        """Test the alternative column name."""
        path = os.path.join(temp_dir, "costs.csv")
        with open(path, "w") as f:
            f.write("Instance,Cost\nC101,828.94\n")

        assert BksTable.from_csv(path).get("C101") == 828.94

    def test_errors(self, temp_dir):
        """Test missing files, columns and non-positive costs."""
        with pytest.raises(FileNotFoundError, match="BKS file not found"):
            BksTable.from_csv(os.path.join(temp_dir, "missing.csv"))

        path = os.path.join(temp_dir, "bad.csv")
        with open(path, "w") as f:
            f.write("name,value\nC101,1\n")
        with pytest.raises(ValueError, match="needs 'instance' and 'bks' columns"):
            BksTable.from_csv(path)

        with pytest.raises(ValueError, match="must be positive"):
            BksTable({"C101": 0.0})


class TestExperimentGrid:
    """Test cases for ExperimentGrid."""

    def test_cells(self, instance_dir):
        """Test the cartesian product in deterministic order."""
        grid = ExperimentGrid(
            instances=[os.path.join(instance_dir, "*.txt")],
            base=BASE,
            axes={"alpha": [0.6, 0.8]},
            seeds=[0, 1],
        )
        grid.validate()
        cells = grid.cells()

        assert len(cells) == 8
        assert [label for _, _, label, _, _ in cells[:4]] == ["alpha=0.6", "alpha=0.6", "alpha=0.8", "alpha=0.8"]
        assert [config.seed for _, _, _, config, _ in cells[:2]] == [0, 1]
        assert cells[0][0].endswith("R1_2_1.txt")

    def test_base_label(self, instance_dir):
        """Test a grid without axes."""
        grid = ExperimentGrid(instances=[os.path.join(instance_dir, "R1_2_1.txt")], base=BASE)
        assert grid.configs()[0][:2] == ("cfg0", "base")

    def test_validation(self, instance_dir):
        """Test rejected grids."""
        with pytest.raises(ValueError, match="axis 'alpha' must be a non-empty list"):
            ExperimentGrid(instances=["x"], axes={"alpha": []}).validate()
        with pytest.raises(ValueError, match="Invalid distance mode"):
            ExperimentGrid(instances=["x"], distance_mode="manhattan").validate()
        with pytest.raises(ValueError, match="Invalid grid configuration"):
            ExperimentGrid(instances=["x"], axes={"alpha": [2.0]}).validate()
        with pytest.raises(ValueError, match="grid instances match no files"):
            ExperimentGrid(instances=[os.path.join(instance_dir, "*.csv")]).cells()

    def test_from_toml(self, temp_dir, instance_dir):
        """Test reading a grid file with relative globs."""
        path = os.path.join(temp_dir, "grid.toml")
        with open(path, "w") as f:
            f.write(
                'instances = ["instances/*.txt"]\nseeds = [3]\n'
                '[base]\nq_policy = "fixed"\nq = 2\n[axes]\ntheta = [20.0, 30.0]\n'
            )

        grid = ExperimentGrid.from_toml(path)

        assert len(grid.instance_paths()) == 2
        assert grid.seeds == [3]
        assert len(grid.configs()) == 2


class TestRunGrid:
    """Test cases for run_grid and the result tables."""

    def test_single_cell(self, temp_dir, instance_dir, bks_file):
        """Test one row with gaps and every output table."""
        grid = ExperimentGrid(instances=[os.path.join(instance_dir, "R1_2_1.txt")], base=BASE)
        out_dir = os.path.join(temp_dir, "results")

        frame = run_grid(grid, BksTable.from_csv(bks_file), out_dir=out_dir)

        assert list(frame.columns) == COLUMNS
        assert len(frame) == 1
        row = frame.iloc[0]
        assert row["instance"] == "R1_2_1"
        assert row["instance_class"] == "R1_2"
        assert row["state"] == "success"
        assert bool(row["feasible"])
        assert row["bks"] == 100.0
        assert row["xi_after"] <= row["xi_before"]
        assert row["best_cost_over_seeds"] == row["cost_after"]
        for name in ("results.csv", "results.json", "best_of_seeds.csv", "class_means.csv"):
            assert os.path.exists(os.path.join(out_dir, name))
        with open(os.path.join(out_dir, "results.json")) as f:
            assert json.load(f)[0]["instance"] == "R1_2_1"

    def test_deterministic_modulo_timings(self, instance_dir):
        """Test that reruns agree on every non-timing column."""
        grid = ExperimentGrid(instances=[os.path.join(instance_dir, "*.txt")], base=BASE, seeds=[0, 1])

        first = run_grid(grid).drop(columns=TIMING_COLUMNS)
        second = run_grid(grid).drop(columns=TIMING_COLUMNS)

        pd.testing.assert_frame_equal(first, second)

    def test_missing_bks_leaves_gaps_blank(self, instance_dir, bks_file):
        """Test that instances without a best-known cost get empty gaps."""
        grid = ExperimentGrid(instances=[os.path.join(instance_dir, "R1_2_2.txt")], base=BASE)
        frame = run_grid(grid, BksTable.from_csv(bks_file))

        assert pd.isna(frame.iloc[0]["bks"])
        assert pd.isna(frame.iloc[0]["xi_after"])

    def test_aggregate_tables(self, temp_dir, instance_dir):
        """Test best-of-seeds, class means and the theta pivot."""
        grid = ExperimentGrid(
            instances=[os.path.join(instance_dir, "*.txt")], base=BASE, axes={"theta": [20.0, 30.0]},
        )
        out_dir = os.path.join(temp_dir, "results")
        run_grid(grid, out_dir=out_dir, execution_mode="threading", max_workers=2)

        means = pd.read_csv(os.path.join(out_dir, "class_means.csv"))
        assert set(means["row_type"]) == {"instance", "class_mean"}
        assert len(means[means["row_type"] == "class_mean"]) == 2
        pivot = pd.read_csv(os.path.join(out_dir, "theta_pivot.csv"))
        assert list(pivot.columns) == ["instance", "best_theta_20", "best_theta_30"]
        assert not os.path.exists(os.path.join(out_dir, "metric_comparison.csv"))

    def test_failed_cell(self, temp_dir):
        """Test that a failing cell becomes a failed row."""
        row = run_cell(os.path.join(temp_dir, "C101.txt"), "cfg0", "base", DriConfig(), 0)

        assert row["state"] == "failed"
        assert row["instance"] == "C101"
        assert row["instance_class"] == "C1"
        assert "not found" in row["error"]
        assert row["feasible"] is False

    def test_compare_metrics(self, instance_dir):
        """Test the STD versus travel-cost comparison."""
        table = compare_metrics([os.path.join(instance_dir, "R1_2_1.txt")], DriConfig(**BASE))

        assert list(table.columns) == ["instance", "cost_euclidean", "cost_std", "std_minus_euclidean"]
        assert table.iloc[0]["std_minus_euclidean"] == pytest.approx(
            table.iloc[0]["cost_std"] - table.iloc[0]["cost_euclidean"]
        )
