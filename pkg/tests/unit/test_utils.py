"""Unit tests for logging, seeding and text rendering helpers."""

import logging
import os
from datetime import datetime, timedelta

import numpy as np
import pytest

from dri_router.core.clustering import Clustering
from dri_router.core.decompose import VicinityIndex, build_subproblems
from dri_router.core.instance import Solution
from dri_router.core.state import PhaseResult, PhaseState, RunReport, RunState
from dri_router.utils import (
    create_progress_bar,
    derive_seed,
    get_subproblem_logger,
    make_rng,
    print_decomposition,
    print_run_summary,
    print_solution_table,
    setup_logging,
    setup_run_logging,
)
from dri_router.utils.logging import DriFormatter


pytestmark = pytest.mark.unit


@pytest.fixture(autouse=True)
def reset_logger():
    """Leave the package logger without handlers after each test."""
    yield
    logger = logging.getLogger("dri_router")
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()
    logger.setLevel(logging.NOTSET)


def _record(**extra) -> logging.LogRecord:
    record = logging.LogRecord("dri_router.core", logging.WARNING, __file__, 1, "budget raised", None, None)
    for key, value in extra.items():
        setattr(record, key, value)
    return record


class TestLogging:
    """Test cases for the logging setup."""

    def test_formatter_plain(self):
        """Test the base layout without colors."""
        message = DriFormatter(use_color=False).format(_record())

        assert " - dri_router.core - WARNING - budget raised" in message
        assert "\x1b[" not in message

    def test_formatter_subproblem_tag(self):
        """Test the subproblem tag."""
        message = DriFormatter(use_color=False).format(_record(subproblem=3))
        assert "[Subproblem: 3] - budget raised" in message

    def test_formatter_color(self):
        """Test that colored output is wrapped in escape codes."""
        message = DriFormatter(use_color=True).format(_record())
        assert message.startswith("\x1b[")
        assert message.endswith("\x1b[0m")

    def test_setup_logging(self, temp_dir):
        """Test levels and the file handler."""
        log_file = os.path.join(temp_dir, "logs", "run.log")
        logger = setup_logging(level="DEBUG", log_file=log_file, console_output=False)

        logger.debug("similarity matrix built")
        for handler in logger.handlers:
            handler.flush()

        assert logger.level == logging.DEBUG
        assert len(logger.handlers) == 1
        with open(log_file) as f:
            assert "similarity matrix built" in f.read()

    def test_setup_logging_replaces_handlers(self):
        """Test that repeated setup doesn't stack handlers."""
        setup_logging(console_output=True)
        logger = setup_logging(console_output=True)
        assert len(logger.handlers) == 1

    def test_subproblem_adapter(self, temp_dir):
        """Test that the adapter tags records."""
        log_file = os.path.join(temp_dir, "sub.log")
        adapter = setup_logging(log_file=log_file, console_output=False, subproblem=2)

        assert isinstance(adapter, logging.LoggerAdapter)
        adapter.info("solved")
        get_subproblem_logger(5).info("fallback used")
        for handler in logging.getLogger("dri_router").handlers:
            handler.flush()

        with open(log_file) as f:
            content = f.read()
        assert "[Subproblem: 2] - solved" in content
        assert "[Subproblem: 5] - fallback used" in content

    def test_run_logging(self, temp_dir):
        """Test the timestamped run log."""
        logger = setup_run_logging("C1_2_1", log_dir=temp_dir)
        logger.info("started")

        files = os.listdir(temp_dir)
        assert len(files) == 1
        assert files[0].startswith("C1_2_1_")
        assert files[0].endswith(".log")


class TestSeeding:
    """Test cases for seed derivation."""

    def test_reproducible(self):
        """Test that the same triple gives the same seed."""
        assert derive_seed(42, "solver", 3) == derive_seed(42, "solver", 3)
        assert 0 <= derive_seed(42, "solver", 3) < 2 ** 32

    def test_streams_and_indices_differ(self):
        """Test that streams and counters are independent."""
        seeds = {derive_seed(42, stream, index) for stream in ("clustering", "solver") for index in range(4)}
        assert len(seeds) == 8
        assert derive_seed(42, "solver") != derive_seed(43, "solver")

    def test_raw_stream_id(self):
        """Test that named streams map to their ids."""
        assert derive_seed(1, "solver", 0) == derive_seed(1, 2, 0)

    def test_unknown_stream(self):
        """Test that an unknown stream name is refused."""
        with pytest.raises(ValueError, match="Unknown seed stream: routing"):
            derive_seed(1, "routing")

    def test_make_rng(self):
        """Test that generators from the same triple agree."""
        first = make_rng(7, "grid", 1).random(5)
        second = make_rng(7, "grid", 1).random(5)
        assert np.array_equal(first, second)


class TestVisualization:
    """Test cases for text rendering."""

    def test_progress_bar(self):
        """Test the progress bar layout."""
        assert create_progress_bar(5, 10, width=10) == "[█████░░░░░] 5/10 (50.0%)"
        assert create_progress_bar(0, 0, width=4) == "[████] 0/0 (100.0%)"
        assert create_progress_bar(1, 4, width=4, show_percentage=False) == "[█░░░] 1/4"

    def test_solution_table(self, tiny_instance):
        """Test routes and the cost line."""
        solution = Solution.from_sequences(tiny_instance, [[1, 2, 3], [4]])
        table = print_solution_table(solution)

        assert "1 2 3" in table
        assert "Total cost: 60.00 over 2 routes" in table

    def test_solution_table_limit_and_flags(self, tiny_instance):
        """Test truncation and infeasible-route markers."""
        solution = Solution.from_sequences(tiny_instance, [[1, 2, 3, 4], [4]])
        table = print_solution_table(solution, limit=1)

        assert "1 2 3 4  !" in table
        assert "... 1 more routes" in table

    def test_run_summary(self):
        """Test the summary header, gaps and phase symbols."""
        start = datetime(2024, 1, 1, 12, 0, 0)
        report = RunReport("TINY")
        report.state = RunState.SUCCESS
        report.start_time, report.end_time = start, start + timedelta(seconds=3)
        report.cost_before, report.routes_before = 70.0, 3
        report.cost_after, report.routes_after = 60.0, 2
        report.gaps = {"xi_before": 0.1667, "xi_after": 0.0, "xi_tilde": -0.1429}
        report.add_phase_result(PhaseResult("similarity", PhaseState.SUCCESS, start, start + timedelta(seconds=1)))
        report.add_phase_result(PhaseResult("improve", PhaseState.SKIPPED))

        summary = print_run_summary(report)

        assert summary.startswith("Run Summary: TINY\n")
        assert "Duration: 3.00s" in summary
        assert "Cost after improvement: 60.00 (2 routes)" in summary
        assert "Gap: 16.67% -> 0.00%" in summary
        assert "✅ similarity 1.000s" in summary
        assert "⏭️ improve" in summary

    def test_run_summary_failures_and_invalid_bks(self):
        """Test that failed phases are listed and unusable gaps are explained."""
        report = RunReport("TINY")
        report.gaps = {"bks": 0.0, "xi_before": None, "xi_after": None, "xi_tilde": None, "bks_invalid": True}
        report.add_phase_result(PhaseResult("similarity", PhaseState.SUCCESS))
        report.add_phase_result(PhaseResult("clustering", PhaseState.FAILED, error=ValueError("q exceeds n")))
        report.update_state()

        summary = print_run_summary(report)

        assert "State: partial_success" in summary
        assert "Gap: not reported (best-known cost 0.0 is not positive)" in summary
        assert "Failed phases:\n  - clustering: q exceeds n" in summary

    def test_decomposition(self, tiny_instance):
        """Test per-subproblem lines and neighbours."""
        clustering = Clustering(method="k_medoids", q=2, assignment=np.array([0, 0, 1, 1]), medoids=(0, 2))
        subproblems = build_subproblems(tiny_instance, clustering, [3.0, 4.0])
        vicinity = VicinityIndex([[1], [0]], [[2], [1], [4], [3]])

        text = print_decomposition(clustering, subproblems, vicinity)

        assert text.startswith("Decomposition: k_medoids, q=2")
        assert "P0: 2 customers, fleet 2, budget 3s <-> [P1]" in text
        assert "P1: 2 customers, fleet 2, budget 4s <-> [P0]" in text
