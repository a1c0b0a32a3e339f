"""Unit tests for instances, schedules and solutions."""

import math
import os

import numpy as np
import pytest

from dri_router.core.instance import (
    Infeasibility,
    Instance,
    ParseError,
    ScheduledRoute,
    Solution,
    Vertex,
    Violation,
    build_route,
    check_feasibility,
    euclidean_matrix,
    format_instance,
    load_instance,
    parse_instance,
    propagate_schedule,
    route_distance,
    solution_to_json,
)


pytestmark = pytest.mark.unit


class TestVertex:
    """Test cases for Vertex validation."""

    def test_inverted_window_rejected(self):
        """Test that e > l is refused."""
        with pytest.raises(ValueError, match="time window inverted for vertex 3"):
            Vertex(3, 0.0, 0.0, 1.0, 50.0, 40.0, 0.0)

    def test_negative_demand_rejected(self):
        """Test that negative demands are refused."""
        with pytest.raises(ValueError, match="negative demand"):
            Vertex(1, 0.0, 0.0, -1.0)

    def test_negative_service_rejected(self):
        """Test that negative service times are refused."""
        with pytest.raises(ValueError, match="negative service time"):
            Vertex(1, 0.0, 0.0, 1.0, 0.0, 10.0, -2.0)


class TestInstance:
    """Test cases for the Instance container."""

    def test_basic_properties(self, tiny_instance):
        """Test counts, horizon and demand totals."""
        assert tiny_instance.n == 4
        assert tiny_instance.horizon == 1000.0
        assert tiny_instance.total_demand == 50.0
        assert tiny_instance.fleet_size == 3
        assert tiny_instance.capacity == 40.0

    def test_cost_matrix(self, tiny_instance):
        """Test the derived Euclidean cost matrix."""
        cost = tiny_instance.cost
        assert cost.shape == (5, 5)
        assert np.all(np.diag(cost) == 0)
        assert np.allclose(cost, cost.T)
        assert cost[0, 1] == pytest.approx(10.0)
        assert cost[2, 4] == pytest.approx(math.sqrt(500.0))
        assert np.array_equal(tiny_instance.travel_time, cost)

    def test_arrays_are_read_only(self, tiny_instance):
        """Test that instance arrays can't be modified."""
        with pytest.raises(ValueError):
            tiny_instance.cost[0, 1] = 0.0
        with pytest.raises(ValueError):
            tiny_instance.demand[1] = 0.0

    def test_demand_above_capacity(self):
        """Test that a customer heavier than Q is refused."""
        depot = Vertex(0, 0.0, 0.0)
        with pytest.raises(ValueError, match="demand 50.0 exceeds capacity"):
            Instance("bad", depot, [Vertex(1, 1.0, 1.0, 50.0)], fleet_size=1, capacity=40.0)

    def test_invalid_fleet_and_capacity(self):
        """Test fleet and capacity validation."""
        depot = Vertex(0, 0.0, 0.0)
        with pytest.raises(ValueError, match="fleet size must be positive"):
            Instance("bad", depot, [], fleet_size=0, capacity=10.0)
        with pytest.raises(ValueError, match="capacity must be positive"):
            Instance("bad", depot, [], fleet_size=1, capacity=0.0)

    def test_depot_with_demand_rejected(self):
        """Test that the depot must have zero demand and service."""
        with pytest.raises(ValueError, match="depot must have zero demand"):
            Instance("bad", Vertex(0, 0.0, 0.0, 1.0), [], fleet_size=1, capacity=10.0)

    def test_matrix_shape_checked(self):
        """Test that a wrongly sized cost matrix is refused."""
        depot = Vertex(0, 0.0, 0.0)
        with pytest.raises(ValueError, match="cost matrix must be 2x2"):
            Instance("bad", depot, [Vertex(1, 1.0, 0.0)], 1, 10.0, cost=np.zeros((3, 3)))

    def test_subinstance(self, tiny_instance):
        """Test carving a subproblem with local indices."""
        sub = tiny_instance.subinstance([2, 4], fleet_size=1, name="TINY_p0")

        assert sub.name == "TINY_p0"
        assert sub.n == 2
        assert sub.fleet_size == 1
        assert sub.capacity == tiny_instance.capacity
        assert sub.customers[0].id == 2
        assert sub.customers[1].id == 4
        assert sub.cost[1, 2] == tiny_instance.cost[2, 4]
        assert sub.cost[0, 2] == tiny_instance.cost[0, 4]


class TestEuclideanMatrix:
    """Test cases for distance conventions."""

    def test_distance_modes(self):
        """Test exact, rounded and truncated distances."""
        coords = np.array([[0.0, 0.0], [1.0, 1.0]])

        assert euclidean_matrix(coords, "exact")[0, 1] == pytest.approx(math.sqrt(2.0))
        assert euclidean_matrix(coords, "round2")[0, 1] == pytest.approx(1.41)
        assert euclidean_matrix(coords, "truncate1")[0, 1] == pytest.approx(1.4)

    def test_invalid_mode(self):
        """Test that unknown conventions are refused."""
        with pytest.raises(ValueError, match="Invalid distance mode"):
            euclidean_matrix(np.zeros((2, 2)), "manhattan")


class TestSchedulePropagation:
    """Test cases for forward time-window propagation."""

    def test_feasible_route(self, tiny_instance):
        """Test start times, load, distance and return time of a feasible route."""
        route = propagate_schedule(tiny_instance, [1, 2, 3], vehicle=2, origin=1)

        assert isinstance(route, ScheduledRoute)
        assert route.feasible
        assert route.start_times == (10.0, 25.0, 40.0)
        assert route.load == 30.0
        assert route.distance == pytest.approx(40.0)
        assert route.return_time == pytest.approx(55.0)
        assert route.vehicle == 2
        assert route.origin == 1

    def test_waiting_for_ready_time(self, tiny_instance):
        """Test that early arrivals wait for the ready time."""
        route = build_route(tiny_instance, [4])

        assert route.start_times == (50.0,)
        assert route.return_time == pytest.approx(65.0)

    def test_time_window_violation(self, tiny_instance):
        """Test that the first late arrival is reported."""
        outcome = propagate_schedule(tiny_instance, [1, 2, 3, 4])

        assert isinstance(outcome, Infeasibility)
        assert outcome.reason == Violation.TIME_WINDOW
        assert outcome.position == 3
        assert outcome.customer == 4
        assert "after due date 60.00" in str(outcome)

    def test_capacity_violation(self, tiny_instance):
        """Test that the load is checked after every visit."""
        outcome = propagate_schedule(tiny_instance, [4, 1, 2, 3])

        assert isinstance(outcome, Infeasibility)
        assert outcome.reason == Violation.CAPACITY
        assert outcome.position == 3
        assert outcome.customer == 3

    def test_depot_closing_violation(self):
        """Test that a late return to the depot is reported."""
        depot = Vertex(0, 0.0, 0.0, 0.0, 0.0, 50.0, 0.0)
        customers = [
            Vertex(1, 0.0, 10.0, 1.0, 0.0, 100.0, 5.0),
            Vertex(2, 10.0, 10.0, 1.0, 20.0, 200.0, 5.0),
            Vertex(3, 10.0, 0.0, 1.0, 0.0, 300.0, 5.0),
        ]
        instance = Instance("closing", depot, customers, 1, 10.0)

        outcome = propagate_schedule(instance, [1, 2, 3])

        assert isinstance(outcome, Infeasibility)
        assert outcome.reason == Violation.DEPOT_CLOSING
        assert outcome.position == 3
        assert outcome.customer == 0

    def test_build_route_keeps_violation(self, tiny_instance):
        """Test that build_route schedules infeasible sequences too."""
        route = build_route(tiny_instance, [1, 2, 3, 4])

        assert not route.feasible
        assert route.violation.reason == Violation.TIME_WINDOW
        assert len(route.start_times) == 4

    def test_empty_route(self, tiny_instance):
        """Test that an empty sequence is a feasible zero-cost route."""
        route = build_route(tiny_instance, [])

        assert route.feasible
        assert route.distance == 0.0
        assert route_distance(tiny_instance, []) == 0.0

    def test_invalid_sequences(self, tiny_instance):
        """Test duplicate and unknown customers."""
        with pytest.raises(ValueError, match="customer 2 appears twice"):
            build_route(tiny_instance, [2, 1, 2])
        with pytest.raises(ValueError, match="unknown customer index 7"):
            build_route(tiny_instance, [1, 7])
        with pytest.raises(ValueError, match="unknown customer index 0"):
            build_route(tiny_instance, [0, 1])

    def test_route_distance_matches_schedule(self, tiny_instance):
        """Test that route_distance agrees with the scheduled distance."""
        visits = [3, 2, 1]
        assert route_distance(tiny_instance, visits) == pytest.approx(build_route(tiny_instance, visits).distance)


class TestSolution:
    """Test cases for solutions and feasibility reports."""

    def test_feasible_solution(self, tiny_instance):
        """Test a solution covering every customer."""
        solution = Solution.from_sequences(tiny_instance, [[1, 2, 3], [4]], origins=[0, 1])

        assert solution.feasible
        assert solution.fleet_feasible
        assert solution.total_cost == pytest.approx(60.0)
        assert len(solution.routes) == 2
        assert solution.origins == (0, 1)
        assert solution.sequences() == [[1, 2, 3], [4]]
        assert [route.vehicle for route in solution.routes] == [0, 1]

    def test_empty_sequences_dropped(self, tiny_instance):
        """Test that empty routes don't count as vehicles."""
        solution = Solution.from_sequences(tiny_instance, [[1, 2, 3], [], [4]])

        assert len(solution.routes) == 2
        assert solution.routes[1].vehicle == 1

    def test_missing_and_repeated_customers(self, tiny_instance):
        """Test coverage violations."""
        solution = Solution.from_sequences(tiny_instance, [[1, 2], [2, 3]])

        assert not solution.feasible
        assert "customer 4 is not visited" in solution.report.violations
        assert "customer 2 is visited 2 times" in solution.report.violations

    def test_fleet_bound_reported_separately(self, tiny_instance):
        """Test that exceeding the fleet keeps the solution feasible but flags it."""
        solution = Solution.from_sequences(tiny_instance, [[1], [2], [3], [4]])

        assert solution.feasible
        assert not solution.fleet_feasible
        assert solution.report.route_count == 4
        assert solution.report.fleet_size == 3

    def test_route_violation_listed(self, tiny_instance):
        """Test that route-level violations appear in the report."""
        solution = Solution.from_sequences(tiny_instance, [[1, 2, 3, 4]])

        assert not solution.feasible
        assert solution.report.violations[0].startswith("route 0: time_window at position 3")

    def test_check_feasibility(self, tiny_instance):
        """Test independent re-verification of a solution."""
        solution = Solution.from_sequences(tiny_instance, [[3, 2, 1], [4]])
        report = check_feasibility(tiny_instance, solution)

        assert report.feasible
        assert report.to_dict()["route_count"] == 2

    def test_check_feasibility_on_wrong_instance(self, tiny_instance):
        """Test that ids unknown to the instance are reported."""
        solution = Solution.from_sequences(tiny_instance, [[1, 2, 3], [4]])
        smaller = tiny_instance.subinstance([1, 2], 1, "smaller")

        report = check_feasibility(smaller, solution)

        assert not report.feasible
        assert "unknown customer index" in report.violations[0]

    def test_from_dict(self, tiny_instance):
        """Test rebuilding a solution from its JSON document."""
        solution = Solution.from_sequences(tiny_instance, [[1, 2, 3], [4]], origins=[1, 0])
        rebuilt = Solution.from_dict(tiny_instance, solution.to_dict())

        assert rebuilt.sequences() == solution.sequences()
        assert rebuilt.origins == (1, 0)
        assert rebuilt.total_cost == pytest.approx(solution.total_cost)

    def test_from_dict_requires_routes(self, tiny_instance):
        """Test that malformed documents are refused."""
        with pytest.raises(ValueError, match="must contain a 'routes' list"):
            Solution.from_dict(tiny_instance, {"cost": 1})
        with pytest.raises(ValueError, match="'visits' list"):
            Solution.from_dict(tiny_instance, {"routes": [{"visits": "1 2"}]})

    def test_solution_json_is_deterministic(self, tiny_instance):
        """Test that identical solutions serialize to identical text."""
        first = solution_to_json(Solution.from_sequences(tiny_instance, [[1, 2, 3], [4]]))
        second = solution_to_json(Solution.from_sequences(tiny_instance, [[1, 2, 3], [4]]))

        assert first == second
        assert '"total_cost": 60.0' in first


class TestParseInstance:
    """Test cases for the Gehring-Homberger parser."""

    def test_parse(self, tiny_instance_text, tiny_instance):
        """Test parsing the tiny instance."""
        instance = parse_instance(tiny_instance_text)

        assert instance.name == "TINY"
        assert instance.n == 4
        assert instance.fleet_size == 3
        assert instance.capacity == 40.0
        assert instance.customers[3].latest == 60.0
        assert instance.customers[3].x == -10.0
        assert np.allclose(instance.cost, tiny_instance.cost)

    def test_name_override_and_distance_mode(self, tiny_instance_text):
        """Test the name override and the distance convention."""
        instance = parse_instance(tiny_instance_text, distance_mode="truncate1", name="renamed")

        assert instance.name == "renamed"
        assert instance.distance_mode == "truncate1"
        assert instance.cost[2, 4] == pytest.approx(22.3)

    def test_windows_line_endings(self, tiny_instance_text):
        """Test that CRLF files parse identically."""
        instance = parse_instance(tiny_instance_text.replace("\n", "\r\n"))
        assert instance.n == 4

    def test_format_and_reparse(self, synthetic_instance):
        """Test that written instances parse back to the same data."""
        instance = parse_instance(format_instance(synthetic_instance))

        assert instance.name == synthetic_instance.name
        assert instance.n == synthetic_instance.n
        assert np.array_equal(instance.coords, synthetic_instance.coords)
        assert np.array_equal(instance.earliest, synthetic_instance.earliest)
        assert np.array_equal(instance.latest, synthetic_instance.latest)
        assert np.array_equal(instance.demand, synthetic_instance.demand)

    def test_non_numeric_field(self, tiny_instance_text):
        """Test that a bad token is reported with its line number."""
        text = tiny_instance_text.replace("    3     10      0", "    3     abc     0")

        with pytest.raises(ParseError, match="non-numeric field at line 13") as exc_info:
            parse_instance(text)
        assert exc_info.value.line == 13

    def test_missing_vehicle_section(self, tiny_instance_text):
        """Test that a missing VEHICLE section is reported."""
        with pytest.raises(ParseError, match="missing VEHICLE section"):
            parse_instance(tiny_instance_text.replace("VEHICLE", "FLEET"))

    def test_bad_capacity_header(self, tiny_instance_text):
        """Test that the NUMBER CAPACITY header is required."""
        with pytest.raises(ParseError, match="malformed header at line 4"):
            parse_instance(tiny_instance_text.replace("NUMBER     CAPACITY", "VEHICLES"))

    def test_duplicate_customer(self, tiny_instance_text):
        """Test that duplicate ids are refused."""
        text = tiny_instance_text.replace("    4    -10", "    3    -10")

        with pytest.raises(ParseError, match="duplicate customer id at line 14: 3 first defined at line 13"):
            parse_instance(text)

    def test_inverted_window(self, tiny_instance_text):
        """Test that ready > due is refused."""
        text = tiny_instance_text.replace("50     60      5", "70     60      5")

        with pytest.raises(ParseError, match="time window inverted at line 14"):
            parse_instance(text)

    def test_wrong_column_count(self, tiny_instance_text):
        """Test that short customer rows are refused."""
        text = tiny_instance_text.replace("    2     10     10     10     20    200      5", "    2     10     10")

        with pytest.raises(ParseError, match="expected 7 columns, found 3"):
            parse_instance(text)

    def test_empty_file(self):
        """Test that empty input is refused."""
        with pytest.raises(ParseError, match="empty instance file"):
            parse_instance("   \n\n")

    def test_load_instance(self, instance_file):
        """Test loading from disk."""
        instance = load_instance(instance_file)
        assert instance.name == "TINY"

    def test_load_missing_file(self, temp_dir):
        """Test loading a file that doesn't exist."""
        with pytest.raises(FileNotFoundError, match="Instance file not found"):
            load_instance(os.path.join(temp_dir, "missing.txt"))
