import click
import json
import os
import sys
import time
from dataclasses import replace
from typing import Optional

from ..bench.grid import BksTable, ExperimentGrid, class_means, compare_metrics, run_grid
from ..bench.oracles import oracle_suite
from ..bench.synthetic import LAYOUTS, WINDOWS, random_instance
from ..core.clustering import choose_q, cluster_customers, single_cluster
from ..core.decompose import build_subproblems, build_vicinities, budget_time, write_decomposition
from ..core.instance import DISTANCE_MODES, format_instance, load_instance, solution_to_json
from ..core.improve import write_improvement_log
from ..core.pipeline import DriConfig, run_baseline_metric, run_dri
from ..core.routing import CONSTRUCTIONS, BaselineSolverConfig, baseline_solve
from ..core.similarity import SimilarityConfig, build_similarity_matrix, save_matrix as dump_matrix
from ..core.state import RunState
from ..utils import (
    setup_logging,
    setup_run_logging,
    print_run_summary,
    print_solution_table,
    print_decomposition,
    create_progress_bar
)
from ..utils.config import ConfigLoader, ConfigValidator, resolve_workers


def _load_config(
    config: Optional[str],
    seed: Optional[int],
    theta: Optional[float],
    matrix: Optional[str] = None,
) -> DriConfig:
    run_config = ConfigLoader.load(config) if config else DriConfig()
    overrides = {}
    if matrix is not None:
        overrides["matrix_file"] = matrix
    if seed is not None:
        overrides["seed"] = seed
    if theta is not None:
        overrides["theta"] = theta
    if overrides:
        run_config = replace(run_config, **overrides)
        run_config.validate()
    if run_config.execution_mode != "sequential":
        run_config = replace(run_config, max_workers=resolve_workers(run_config.max_workers))
    return run_config


@click.group()
@click.option('--verbose', '-v', is_flag=True, help='Enable verbose logging')
@click.option('--log-file', type=click.Path(), help='Log file path')
@click.pass_context
def cli(ctx, verbose, log_file):
    """Decompose-route-improve toolkit for VRPTW"""
    ctx.ensure_object(dict)

    log_level = "DEBUG" if verbose else "INFO"
    ctx.obj['logger'] = setup_logging(
        level=log_level,
        log_file=log_file,
        console_output=True
    )


@cli.command()
@click.argument('instance', type=click.Path(exists=True))
@click.option('--config', '-c', type=click.Path(exists=True), help='Run configuration (JSON or TOML)')
@click.option('--bks', type=float, help='Best-known cost for gap reporting')
@click.option('--out', type=click.Path(), help='Directory for solution, report and improvement log')
@click.option('--distance-mode', type=click.Choice(DISTANCE_MODES), default='exact',
              help='Distance convention')
@click.option('--seed', type=int, help='Override the master seed')
@click.option('--theta', type=float, help='Override the total time budget (seconds)')
@click.option('--baseline-metric', is_flag=True, help='Cluster on travel cost instead of STD')
@click.option('--matrix', type=click.Path(exists=True), help='Similarity dump from decompose --save-matrix')
@click.option('--log-dir', type=click.Path(), help='Directory for a per-run log file')
@click.pass_context
def solve(ctx, instance, config, bks, out, distance_mode, seed, theta, baseline_metric, log_dir, matrix):
    """Solve an instance with decompose-route-improve"""
    logger = ctx.obj['logger']

    try:
        problem = load_instance(instance, distance_mode)
        run_config = _load_config(config, seed, theta, matrix)
        if log_dir:
            setup_run_logging(problem.name, log_dir)

        click.echo(f"Solving {problem.name} ({problem.n} customers, theta={run_config.theta:g}s)")
        runner = run_baseline_metric if baseline_metric else run_dri
        solution, report = runner(problem, run_config, bks)

        click.echo()
        click.echo(print_run_summary(report))
        click.echo()
        click.echo(print_solution_table(solution, limit=20))

        if out:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "solution.json"), 'w') as f:
                f.write(solution_to_json(solution))
            with open(os.path.join(out, "report.json"), 'w') as f:
                json.dump(report.to_dict(), f, indent=2, default=str)
            write_improvement_log(report.improvement_log, os.path.join(out, "improvement_log.jsonl"))
            ConfigLoader.save_to_json(run_config, os.path.join(out, "config.json"))
            click.echo(f"\nResults written to: {out}")

        if report.state != RunState.SUCCESS or not solution.feasible:
            for violation in solution.report.violations[:10]:
                click.echo(f"  - {violation}")
            sys.exit(1)

    except Exception as e:
        logger.error(f"Error solving instance: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)


@cli.command()
@click.argument('instance', type=click.Path(exists=True))
@click.option('--out', required=True, type=click.Path(), help='Directory for subproblem files')
@click.option('--config', '-c', type=click.Path(exists=True), help='Run configuration (JSON or TOML)')
@click.option('--distance-mode', type=click.Choice(DISTANCE_MODES), default='exact',
              help='Distance convention')
@click.option('--theta', type=float, help='Override the total time budget (seconds)')
@click.option('--save-matrix', is_flag=True, help='Dump the similarity matrix for reuse by solve --matrix')
@click.pass_context
def decompose(ctx, instance, out, config, distance_mode, theta, save_matrix):
    """Cluster an instance and write its subproblems"""
    logger = ctx.obj['logger']

    try:
        problem = load_instance(instance, distance_mode)
        run_config = _load_config(config, None, theta)

        started = time.perf_counter()
        similarity = build_similarity_matrix(
            problem,
            SimilarityConfig.from_instance(problem, run_config.lam, run_config.circular_angles, run_config.metric),
        )
        q = choose_q(problem, run_config.q_policy, run_config.target_size, run_config.q)
        if q > 1:
            clustering = cluster_customers(similarity, run_config.clustering_spec(q))
        else:
            clustering = single_cluster(problem.n, run_config.method)
        nu = time.perf_counter() - started

        budget = budget_time(run_config.theta, nu, run_config.alpha if q > 1 else 1.0, clustering.sizes())
        subproblems = build_subproblems(problem, clustering, budget.per_subproblem)
        vicinity = None
        if q > 1:
            vicinity = build_vicinities(
                similarity, clustering,
                phi=run_config.phi, varphi=run_config.varphi, rho=run_config.rho,
                linkage=run_config.vicinity_linkage, customer_metric=run_config.customer_vicinity,
                instance=problem,
            )
        matrix_file = None
        if save_matrix:
            matrix_file = "similarity.bin"
            dump_matrix(similarity, os.path.join(out, matrix_file))
        manifest = write_decomposition(out, problem, clustering, subproblems, budget, vicinity, matrix_file)

        click.echo(print_decomposition(clustering, subproblems, vicinity))
        click.echo(f"\nManifest written to: {manifest}")

    except Exception as e:
        logger.error(f"Error decomposing instance: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)


@cli.command()
@click.argument('instance', type=click.Path(exists=True))
@click.argument('fleet', type=int)
@click.argument('budget', type=float)
@click.argument('seed', type=int)
@click.option('--construction', type=click.Choice(CONSTRUCTIONS), default='solomon_i1_like',
              help='Construction heuristic')
@click.pass_context
def route(ctx, instance, fleet, budget, seed, construction):
    """Route one instance and print the solution JSON (external-solver protocol)"""
    logger = ctx.obj['logger']

    try:
        problem = load_instance(instance)
        solution = baseline_solve(
            problem,
            fleet=fleet,
            budget=budget if budget > 0 else None,
            seed=seed,
            config=BaselineSolverConfig(construction=construction),
        )
        click.echo(solution_to_json(solution))

    except Exception as e:
        logger.error(f"Error routing instance: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)


@cli.command()
@click.option('--grid', 'grid_file', required=True, type=click.Path(exists=True),
              help='Experiment grid (TOML)')
@click.option('--bks', type=click.Path(exists=True), help='CSV of best-known costs')
@click.option('--out', required=True, type=click.Path(), help='Directory for result tables')
@click.option('--execution-mode', type=click.Choice(['sequential', 'threading', 'multiprocessing']),
              default='sequential', help='How grid cells are run')
@click.option('--max-workers', type=int, help='Worker count for concurrent cells')
@click.option('--compare-metrics', 'compare_metrics_flag', is_flag=True, help='Also solve each instance with STD and travel cost')
@click.pass_context
def bench(ctx, grid_file, bks, out, execution_mode, max_workers, compare_metrics_flag):
    """Run an experiment grid and write result tables"""
    logger = ctx.obj['logger']

    try:
        grid = ExperimentGrid.from_toml(grid_file)
        table = BksTable.from_csv(bks) if bks else None
        cells = len(grid.cells())
        click.echo(f"Running {cells} grid cells")

        frame = run_grid(grid, table, out, execution_mode=execution_mode, max_workers=max_workers)
        failed = frame[frame["state"] == "failed"]
        click.echo(create_progress_bar(cells - len(failed), cells))

        succeeded = frame[frame["state"] != "failed"]
        if len(succeeded):
            summary = class_means(succeeded)
            click.echo(summary[summary["row_type"] == "class_mean"].to_string(index=False))
        if compare_metrics_flag:
            comparison = compare_metrics(grid.instance_paths(), DriConfig.from_dict(grid.base), grid.distance_mode)
            comparison.to_csv(os.path.join(out, "metric_comparison.csv"), index=False)
            click.echo(comparison.to_string(index=False))
        click.echo(f"\nResults written to: {out}")

        if len(failed):
            click.echo(f"\nFailed cells ({len(failed)}):")
            for _, row in failed.iterrows():
                click.echo(f"  - {row['instance']} {row['config_label']} seed {row['seed']}: {row['error']}")
            sys.exit(1)

    except Exception as e:
        logger.error(f"Error running benchmark: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)


@cli.command()
@click.option('--seed', type=int, default=0, help='Master seed for the generated fixtures')
@click.option('--quick', is_flag=True, help='Run a tenth of the cases')
@click.option('--format', 'output_format', type=click.Choice(['text', 'json']),
              default='text', help='Output format')
@click.pass_context
def oracles(ctx, seed, quick, output_format):
    """Run the oracle suite"""
    logger = ctx.obj['logger']

    try:
        report = oracle_suite(seed=seed, quick=quick)

        if output_format == 'json':
            click.echo(json.dumps(report.to_dict(), indent=2))
        else:
            for check in report.checks:
                symbol = "✅" if check.passed else "❌"
                click.echo(f"{symbol} {check.name} ({check.elapsed:.2f}s) {check.detail}")

        if not report.passed:
            sys.exit(1)

    except Exception as e:
        logger.error(f"Error running oracles: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)


@cli.command()
@click.argument('n', type=int)
@click.option('--out', required=True, type=click.Path(), help='Instance file to write')
@click.option('--seed', type=int, default=0, help='Generator seed')
@click.option('--layout', type=click.Choice(LAYOUTS), default='random', help='Customer layout')
@click.option('--window', type=click.Choice(WINDOWS), default='loose', help='Time window width')
@click.option('--capacity', type=float, default=200.0, help='Vehicle capacity')
@click.option('--fleet', type=int, help='Fleet size (defaults to n)')
@click.pass_context
def generate(ctx, n, out, seed, layout, window, capacity, fleet):
    """Generate a synthetic instance file"""
    logger = ctx.obj['logger']

    try:
        problem = random_instance(n, seed, layout=layout, window=window, capacity=capacity, fleet=fleet)
        directory = os.path.dirname(out)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(out, 'w') as f:
            f.write(format_instance(problem))
        click.echo(f"Wrote {problem.name} to: {out}")

    except Exception as e:
        logger.error(f"Error generating instance: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)


@cli.command()
@click.option('--config', '-c', required=True, type=click.Path(exists=True),
              help='Path to run configuration file')
@click.pass_context
def validate(ctx, config):
    """Validate a run configuration file"""
    logger = ctx.obj['logger']

    try:
        click.echo(f"Validating configuration: {config}")

        errors = ConfigValidator.validate_file(config)

        if not errors:
            click.echo("✅ Configuration is valid!")
            click.echo(json.dumps(ConfigLoader.load(config).to_dict(), indent=2, sort_keys=True))
            return

        click.echo(f"❌ Found {len(errors)} validation error(s):")
        for i, error in enumerate(errors, 1):
            click.echo(f"  {i}. {error}")

        sys.exit(1)

    except Exception as e:
        logger.error(f"Error validating configuration: {e}")
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)


if __name__ == '__main__':
    cli()
