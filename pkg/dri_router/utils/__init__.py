"""
Utilities module initialization.

``config`` depends on the pipeline and is imported by its full path.
"""

from .logging import setup_logging, get_subproblem_logger, setup_run_logging
from .seeding import derive_seed, make_rng
from .visualization import (
    print_run_summary,
    print_solution_table,
    print_decomposition,
    create_progress_bar
)

__all__ = [
    "setup_logging",
    "get_subproblem_logger",
    "setup_run_logging",
    "derive_seed",
    "make_rng",
    "print_run_summary",
    "print_solution_table",
    "print_decomposition",
    "create_progress_bar"
]
