"""Unit tests for routing backends and subproblem solving."""

import logging
import sys

import numpy as np
import pytest

from dri_router.core.clustering import Clustering
from dri_router.core.decompose import build_subproblems
from dri_router.core.instance import Solution
from dri_router.core.routing import (
    BaselineSolver,
    BaselineSolverConfig,
    ExternalSolver,
    RoutingError,
    RoutingSolver,
    SolverError,
    baseline_solve,
    construct_i1,
    construct_savings,
    merge_solutions,
    solve_subproblems,
)
from dri_router.core.state import PhaseState, RunReport


pytestmark = pytest.mark.unit


def _failing_solver(code: str = "import sys; sys.exit(3)") -> ExternalSolver:
    return ExternalSolver([sys.executable, "-c", code])


@pytest.fixture
def tiny_subproblems(tiny_instance):
    """Two subproblems of the tiny instance."""
    clustering = Clustering(method="k_medoids", q=2, assignment=np.array([0, 0, 1, 1]), medoids=(0, 2))
    return build_subproblems(tiny_instance, clustering, [2.0, 2.0])


class TestBaselineSolverConfig:
    """Test cases for BaselineSolverConfig validation."""

    def test_defaults_valid(self):
        """Test that the defaults validate."""
        config = BaselineSolverConfig()
        config.validate()
        assert config.to_dict()["intra_operators"] == ["two_opt_intra", "swap_intra"]

    def test_invalid_values(self):
        """Test rejected settings."""
        with pytest.raises(ValueError, match="Invalid construction"):
            BaselineSolverConfig(construction="sweep").validate()
        with pytest.raises(ValueError, match="Invalid stop mode"):
            BaselineSolverConfig(stop_mode="forever").validate()
        with pytest.raises(ValueError, match="restarts must be at least 1"):
            BaselineSolverConfig(restarts=0).validate()
        with pytest.raises(ValueError, match="Unknown intra-route operators"):
            BaselineSolverConfig(intra_operators=("relocate",)).validate()
        with pytest.raises(ValueError, match="work_rate must be positive"):
            BaselineSolverConfig(work_rate=0).validate()


class TestConstructions:
    """Test cases for the construction heuristics."""

    @pytest.mark.parametrize("construct", [construct_i1, construct_savings])
    def test_every_customer_routed_once(self, synthetic_instance, construct):
        """Test coverage and feasibility of the constructed routes."""
        routes = construct(synthetic_instance, np.random.default_rng(0), 0, 0.1)
        solution = Solution.from_sequences(synthetic_instance, routes)

        assert sorted(v for route in routes for v in route) == list(range(1, synthetic_instance.n + 1))
        assert solution.feasible

    def test_restarts_vary(self, synthetic_instance):
        """Test that perturbed restarts use other parameter sets."""
        rng = np.random.default_rng(0)
        first = construct_i1(synthetic_instance, rng, 0, 0.1)
        later = construct_i1(synthetic_instance, rng, 2, 0.1)
        assert first != later


class TestBaselineSolver:
    """Test cases for the built-in solver."""

    def test_is_routing_solver(self):
        """Test the solver contract."""
        solver = BaselineSolver()
        assert isinstance(solver, RoutingSolver)
        assert solver.capabilities() == {"respects_budget": True, "deterministic": True}

    def test_tiny_instance(self, tiny_instance):
        """Test a feasible solution no worse than one route per customer."""
        solution = baseline_solve(tiny_instance, seed=0)

        assert solution.feasible
        assert solution.fleet_feasible
        assert 60.0 - 1e-9 <= solution.total_cost < 88.28

    def test_deterministic(self, synthetic_instance):
        """Test that a seed reproduces the solution."""
        config = BaselineSolverConfig(restarts=2)
        first = baseline_solve(synthetic_instance, seed=4, config=config)
        second = baseline_solve(synthetic_instance, seed=4, config=config)

        assert first.sequences() == second.sequences()
        assert first.feasible

    def test_binding_budget_is_repeatable(self, synthetic_instance):
        """Test that a budget cut short by the evaluation allowance still reproduces."""
        config = BaselineSolverConfig(restarts=3, work_rate=1000.0)
        first = baseline_solve(synthetic_instance, budget=0.5, seed=9, config=config)
        second = baseline_solve(synthetic_instance, budget=0.5, seed=9, config=config)

        assert first.sequences() == second.sequences()
        assert first.total_cost == second.total_cost
        assert first.feasible

    def test_clock_mode_not_deterministic(self):
        """Test that wall-clock budgets drop the determinism capability."""
        solver = BaselineSolver(BaselineSolverConfig(reproducible=False))
        assert solver.capabilities() == {"respects_budget": True, "deterministic": False}

    def test_savings_and_iterations_mode(self, small_instance):
        """Test the savings construction with the stale-restart stop rule."""
        config = BaselineSolverConfig(construction="savings", stop_mode="iterations", max_stale=1, restarts=1)
        solution = baseline_solve(small_instance, seed=1, config=config)

        assert solution.feasible

    def test_fleet_overflow_warns(self, tiny_instance, caplog):
        """Test that exceeding the fleet is logged, not raised."""
        with caplog.at_level(logging.WARNING, logger="dri_router"):
            solution = baseline_solve(tiny_instance, fleet=1)

        assert not solution.fleet_feasible
        assert "fleet limit is 1" in caplog.text


class TestExternalSolver:
    """Test cases for the subprocess adapter."""

    def test_empty_command(self):
        """Test that a command is required."""
        with pytest.raises(ValueError, match="must not be empty"):
            ExternalSolver([])

    def test_nonzero_exit(self, tiny_instance):
        """Test that a failing binary raises SolverError."""
        with pytest.raises(SolverError, match="exited with status 3"):
            _failing_solver().solve(tiny_instance, 3, 5.0, 0)

    def test_invalid_output(self, tiny_instance):
        """Test that unparseable stdout raises SolverError."""
        with pytest.raises(SolverError, match="invalid solution"):
            _failing_solver("print('no routes here')").solve(tiny_instance, 3, 5.0, 0)

    def test_timeout(self, tiny_instance):
        """Test that an overrunning binary is stopped."""
        solver = ExternalSolver([sys.executable, "-c", "import time; time.sleep(10)"], grace=0.5)
        with pytest.raises(SolverError, match="timed out"):
            solver.solve(tiny_instance, 3, 0.5, 0)

    def test_reads_solution_from_stdout(self, tiny_instance):
        """Test a binary echoing a fixed solution document."""
        code = "import json; print(json.dumps({'routes': [{'visits': [1, 2, 3]}, {'visits': [4]}]}))"
        solution = ExternalSolver([sys.executable, "-c", code]).solve(tiny_instance, 3, 5.0, 0)

        assert solution.sequences() == [[1, 2, 3], [4]]
        assert solution.feasible


class TestSolveSubproblems:
    """Test cases for solve_subproblems and merge_solutions."""

    def test_solve_and_merge(self, tiny_instance, tiny_subproblems):
        """Test that merged routes use parent ids and origins."""
        report = RunReport("TINY")
        solutions = solve_subproblems(tiny_subproblems, BaselineSolver(), report=report)
        merged = merge_solutions(solutions, tiny_subproblems, tiny_instance)

        assert merged.feasible
        assert sorted(v for route in merged.sequences() for v in route) == [1, 2, 3, 4]
        assert {v: route.origin for route in merged.routes for v in route.visits} == {1: 0, 2: 0, 3: 1, 4: 1}
        assert [result.state for result in report.subproblems] == [PhaseState.SUCCESS] * 2
        assert report.subproblems[1].detail["customers"] == 2

    def test_solutions_keep_local_ids(self, tiny_subproblems):
        """Test that per-subproblem solutions are tagged but not re-indexed."""
        solutions = solve_subproblems(tiny_subproblems, BaselineSolver())

        assert all(route.origin == 1 for route in solutions[1].routes)
        assert sorted(v for route in solutions[1].sequences() for v in route) == [1, 2]

    def test_budget_raised_to_minimum(self, tiny_subproblems, caplog):
        """Test that tiny budgets are clamped with a warning."""
        with caplog.at_level(logging.WARNING, logger="dri_router"):
            solve_subproblems(tiny_subproblems, BaselineSolver(), budgets=[0.0, 0.0], min_budget=1.0)

        assert "budget 0.00s raised to 1.00s" in caplog.text

    def test_fallback_to_baseline(self, tiny_subproblems):
        """Test that a failing backend falls back to the baseline."""
        report = RunReport("TINY")
        solutions = solve_subproblems(tiny_subproblems, _failing_solver(), report=report)

        assert len(solutions) == 2
        assert all(result.detail["fallback"] for result in report.subproblems)
        assert report.subproblems[0].detail["solver"] == "baseline"

    def test_fallback_failure(self, tiny_subproblems):
        """Test that a failing fallback raises RoutingError."""
        report = RunReport("TINY")
        with pytest.raises(RoutingError, match="subproblem 0 could not be solved") as exc_info:
            solve_subproblems(tiny_subproblems, _failing_solver(), fallback=_failing_solver(), report=report)

        assert exc_info.value.subproblem == 0
        assert report.subproblems[-1].state == PhaseState.FAILED

    def test_threading_matches_sequential(self, synthetic_instance):
        """Test that the execution mode doesn't change the result."""
        clustering = Clustering(
            method="k_medoids", q=2,
            assignment=np.array([k % 2 for k in range(synthetic_instance.n)]), medoids=(0, 1),
        )
        subproblems = build_subproblems(synthetic_instance, clustering, [30.0, 30.0])
        solver = BaselineSolver(BaselineSolverConfig(restarts=1))

        sequential = solve_subproblems(subproblems, solver, seed=3)
        threaded = solve_subproblems(subproblems, solver, seed=3, execution_mode="threading", max_workers=2)

        assert [s.sequences() for s in sequential] == [s.sequences() for s in threaded]

    def test_invalid_arguments(self, tiny_subproblems):
        """Test execution mode and budget count validation."""
        with pytest.raises(ValueError, match="Invalid execution mode"):
            solve_subproblems(tiny_subproblems, BaselineSolver(), execution_mode="async")
        with pytest.raises(ValueError, match="expected 2 budgets, got 1"):
            solve_subproblems(tiny_subproblems, BaselineSolver(), budgets=[1.0])

    def test_merge_count_mismatch(self, tiny_instance, tiny_subproblems):
        """Test that every subproblem needs a solution."""
        with pytest.raises(ValueError, match="expected 2 solutions, got 0"):
            merge_solutions([], tiny_subproblems, tiny_instance)
