"""Unit tests for run configuration and run reports."""

from datetime import datetime, timedelta

import pytest

from dri_router.core.pipeline import DriConfig, PipelineError
from dri_router.core.routing import BaselineSolver, ExternalSolver
from dri_router.core.state import PhaseResult, PhaseState, RunReport, RunState


pytestmark = pytest.mark.unit


class TestDriConfig:
    """Test cases for DriConfig."""

    def test_defaults(self):
        """Test the default hyperparameters."""
        config = DriConfig()
        config.validate()

        assert config.lam == 1.0
        assert config.method == "k_medoids"
        assert (config.phi, config.varphi) == (5, 10)
        assert config.strategy == "steepest_descent"
        assert config.alpha == 0.8

    @pytest.mark.parametrize("field,value", [
        ("method", "dbscan"),
        ("q_policy", "random"),
        ("strategy", "simulated_annealing"),
        ("solver", "ortools"),
        ("execution_mode", "async"),
    ])
    def test_invalid_choice(self, field, value):
        """Test that enumerated fields reject unknown values."""
        config = DriConfig(**{field: value})
        with pytest.raises(ValueError, match=f"Invalid {field}"):
            config.validate()

    def test_invalid_numbers(self):
        """Test range checks."""
        with pytest.raises(ValueError, match=r"alpha must be in \(0, 1\]"):
            DriConfig(alpha=1.5).validate()
        with pytest.raises(ValueError, match="theta must be positive"):
            DriConfig(theta=0.0).validate()
        with pytest.raises(ValueError, match=r"rho must be in \[0, 1\]"):
            DriConfig(rho=2.0).validate()
        with pytest.raises(ValueError, match="phi and varphi must be non-negative"):
            DriConfig(phi=-1).validate()
        with pytest.raises(ValueError, match="work_rate must be positive"):
            DriConfig(work_rate=0.0).validate()

    def test_fixed_policy_needs_q(self):
        """Test that the fixed policy requires q."""
        with pytest.raises(ValueError, match="q must be a positive integer for the fixed q policy"):
            DriConfig(q_policy="fixed").validate()
        DriConfig(q_policy="fixed", q=3).validate()

    def test_external_needs_command(self):
        """Test that the external solver requires a command."""
        with pytest.raises(ValueError, match="solver_command is required"):
            DriConfig(solver="external").validate()

    def test_unknown_operator(self):
        """Test operator validation."""
        with pytest.raises(ValueError, match="Unknown operators"):
            DriConfig(operators=("or_opt",)).validate()

    def test_from_dict(self, sample_config_dict):
        """Test building a config from a mapping."""
        config = DriConfig.from_dict({**sample_config_dict, "operators": ["relocate", "swap"]})

        assert config.q == 3
        assert config.theta == 30.0
        assert config.operators == ("relocate", "swap")

    def test_from_dict_unknown_keys(self):
        """Test that unknown keys are reported."""
        with pytest.raises(ValueError, match="Unknown configuration keys: colour"):
            DriConfig.from_dict({"colour": "blue"})

    def test_to_dict_is_plain(self):
        """Test that tuples become lists."""
        data = DriConfig(solver="external", solver_command=("bin", "--x")).to_dict()

        assert data["solver_command"] == ["bin", "--x"]
        assert isinstance(data["operators"], list)
        assert DriConfig.from_dict(data).solver_command == ("bin", "--x")

    def test_clustering_spec(self):
        """Test that clustering parameters are forwarded."""
        spec = DriConfig(method="agglomerative", linkage="single", seed=5).clustering_spec(4)

        assert spec.method == "agglomerative"
        assert spec.q == 4
        assert spec.linkage == "single"
        assert spec.seed != 5

    def test_build_solver(self):
        """Test backend selection."""
        assert isinstance(DriConfig().build_solver(), BaselineSolver)
        assert DriConfig(restarts=2).build_solver().config.restarts == 2
        clock = DriConfig(reproducible=False, work_rate=10.0).build_solver()
        assert (clock.config.reproducible, clock.config.work_rate) == (False, 10.0)
        assert not clock.capabilities()["deterministic"]
        solver = DriConfig(solver="external", solver_command=("route-bin",)).build_solver()
        assert isinstance(solver, ExternalSolver)
        assert solver.command == ["route-bin"]


class TestPipelineError:
    """Test cases for PipelineError."""

    def test_stage_and_cause(self):
        """Test that the stage and original error are kept."""
        cause = ValueError("boom")
        error = PipelineError("routing", cause)

        assert error.stage == "routing"
        assert error.error is cause
        assert str(error) == "routing stage failed: boom"


class TestRunReport:
    """Test cases for RunReport and PhaseResult."""

    def test_phase_duration(self):
        """Test duration from start and end times."""
        start = datetime(2024, 1, 1, 12, 0, 0)
        result = PhaseResult("routing", PhaseState.SUCCESS, start, start + timedelta(seconds=2.5))

        assert result.duration == 2.5
        assert result.success
        assert PhaseResult("routing", PhaseState.PENDING).duration is None

    def test_state_without_phases(self):
        """Test that an empty report stays pending."""
        report = RunReport("TINY")
        report.update_state()
        assert report.state == RunState.PENDING

    def test_state_success(self):
        """Test that skipped phases don't spoil success."""
        report = RunReport("TINY")
        report.add_phase_result(PhaseResult("similarity", PhaseState.SUCCESS))
        report.add_phase_result(PhaseResult("improve", PhaseState.SKIPPED))
        report.update_state()
        assert report.state == RunState.SUCCESS

    def test_state_partial_and_failed(self):
        """Test failure states with and without completed phases."""
        report = RunReport("TINY")
        report.add_phase_result(PhaseResult("decompose", PhaseState.FAILED, error=ValueError("x")))
        report.update_state()
        assert report.state == RunState.FAILED

        report.add_phase_result(PhaseResult("similarity", PhaseState.SUCCESS))
        report.update_state()
        assert report.state == RunState.PARTIAL_SUCCESS
        assert list(report.get_failed_phases()) == ["decompose"]

    def test_state_running(self):
        """Test that a running phase keeps the run running."""
        report = RunReport("TINY")
        report.add_phase_result(PhaseResult("routing", PhaseState.RUNNING))
        report.update_state()
        assert report.state == RunState.RUNNING

    def test_to_dict(self):
        """Test the report document."""
        report = RunReport("TINY", {"theta": 30.0})
        report.cost_before = 88.2842
        report.add_phase_result(PhaseResult("merge", PhaseState.FAILED, error=RuntimeError("bad merge")))
        data = report.to_dict()

        assert data["instance"] == "TINY"
        assert data["config"] == {"theta": 30.0}
        assert data["cost_before"] == 88.28
        assert data["cost_after"] is None
        assert data["phases"]["merge"]["error"] == "bad merge"
        assert set(data["budgets"]) == {"delta", "omega", "upsilon", "subproblems"}
