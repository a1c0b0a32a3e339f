from typing import Optional, Sequence

from ..core.clustering import Clustering
from ..core.decompose import SubProblem, VicinityIndex
from ..core.instance import Solution
from ..core.state import PhaseState, RunReport


def _get_state_symbol(state: PhaseState) -> str:
    symbols = {
        PhaseState.PENDING: "⏳",
        PhaseState.RUNNING: "🔄",
        PhaseState.SUCCESS: "✅",
        PhaseState.FAILED: "❌",
        PhaseState.SKIPPED: "⏭️",
    }
    return symbols.get(state, "❓")


def print_run_summary(report: RunReport) -> str:
    """
    Create a summary of a DRI run.

    Args:
        report: Run report to summarize

    Returns:
        Summary string
    """
    title = f"Run Summary: {report.instance_name}"
    lines = [title, "=" * len(title)]
    lines.append(f"State: {report.state.value}")
    if report.duration is not None:
        lines.append(f"Duration: {report.duration:.2f}s")
    lines.append(f"Subproblems (q): {report.q}")
    lines.append(f"Decomposition time (nu): {report.nu:.3f}s")
    lines.append(f"Routing budget (Omega): {report.omega:.2f}s")
    lines.append(f"Improvement budget (Upsilon): {report.upsilon:.2f}s")
    lines.append(f"Edge reduction: {report.edge_reduction:.4f}")
    if report.cost_before is not None:
        lines.append(f"Cost before improvement: {report.cost_before:.2f} ({report.routes_before} routes)")
    if report.cost_after is not None:
        lines.append(f"Cost after improvement: {report.cost_after:.2f} ({report.routes_after} routes)")
    if report.gaps and report.gaps.get("bks_invalid"):
        lines.append(f"Gap: not reported (best-known cost {report.gaps['bks']} is not positive)")
    elif report.gaps:
        lines.append(
            f"Gap: {report.gaps['xi_before']:.2%} -> {report.gaps['xi_after']:.2%} "
            f"(relative change {report.gaps['xi_tilde']:.2%})"
        )
    lines.append(f"Feasible: {report.feasible}, fleet feasible: {report.fleet_feasible}")
    if report.peak_rss_mb is not None:
        lines.append(f"Peak RSS: {report.peak_rss_mb:.1f} MB")

    if report.phases:
        lines.append("")
        lines.append("Phases:")
        for name, result in report.phases.items():
            duration = f" {result.duration:.3f}s" if result.duration is not None else ""
            lines.append(f"  {_get_state_symbol(result.state)} {name}{duration}")

    failed = report.get_failed_phases()
    if failed:
        lines.append("")
        lines.append("Failed phases:")
        for name, result in failed.items():
            lines.append(f"  - {name}: {result.error}")
    return "\n".join(lines)


def print_solution_table(solution: Solution, limit: Optional[int] = None) -> str:
    """Render the routes of a solution as a fixed-width table."""
    header = f"{'veh':>4} {'origin':>6} {'load':>9} {'distance':>10}  visits"
    lines = [header, "-" * len(header)]
    routes = solution.routes if limit is None else solution.routes[:limit]
    for route in routes:
        visits = " ".join(str(v) for v in route.visits)
        flag = "" if route.feasible else "  !"
        lines.append(f"{route.vehicle:>4} {route.origin:>6} {route.load:>9.2f} {route.distance:>10.2f}  {visits}{flag}")
    if limit is not None and len(solution.routes) > limit:
        lines.append(f"... {len(solution.routes) - limit} more routes")
    lines.append(f"Total cost: {solution.total_cost:.2f} over {len(solution.routes)} routes")
    return "\n".join(lines)


def print_decomposition(
    clustering: Clustering,
    subproblems: Sequence[SubProblem],
    vicinity: Optional[VicinityIndex] = None,
) -> str:
    """Per-subproblem sizes, fleets, budgets and neighbours."""
    title = f"Decomposition: {clustering.method}, q={clustering.q}"
    lines = [title, "=" * len(title)]
    for sub in subproblems:
        line = f"  P{sub.index}: {sub.size} customers, fleet {sub.fleet}, budget {sub.budget:.0f}s"
        if vicinity is not None and vicinity.subproblem_neighbors:
            neighbours = ", ".join(f"P{g}" for g in vicinity.subproblem_neighbors[sub.index])
            line += f" <-> [{neighbours}]"
        lines.append(line)
    return "\n".join(lines)


def create_progress_bar(
    completed: int,
    total: int,
    width: int = 50,
    show_percentage: bool = True,
) -> str:
    """
    Create a text-based progress bar.

    Args:
        completed: Number of completed items
        total: Total number of items
        width: Width of progress bar in characters
        show_percentage: Whether to show percentage

    Returns:
        Progress bar string
    """
    if total == 0:
        percentage = 100.0
        filled_width = width
    else:
        percentage = (completed / total) * 100
        filled_width = int(width * completed // total)

    bar = "█" * filled_width + "░" * (width - filled_width)
    if show_percentage:
        return f"[{bar}] {completed}/{total} ({percentage:.1f}%)"
    return f"[{bar}] {completed}/{total}"
