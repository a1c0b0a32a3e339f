"""Benchmark harness: synthetic instances, experiment grids and oracles."""

from .synthetic import random_instance
from .grid import BksTable, ExperimentGrid, run_grid
from .oracles import OracleReport, oracle_suite

__all__ = [
    "random_instance",
    "BksTable",
    "ExperimentGrid",
    "run_grid",
    "OracleReport",
    "oracle_suite",
]
