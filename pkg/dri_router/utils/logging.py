import logging
import os
import sys
from datetime import datetime
from typing import Optional, Union

from colorama import Fore, Style, just_fix_windows_console


just_fix_windows_console()

BASE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
SUBPROBLEM_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [Subproblem: %(subproblem)s] - %(message)s"

LEVEL_COLORS = {
    "DEBUG": Fore.CYAN,
    "INFO": Fore.GREEN,
    "WARNING": Fore.YELLOW,
    "ERROR": Fore.RED,
    "CRITICAL": Fore.MAGENTA,
}


class DriFormatter(logging.Formatter):
    """Formatter adding a subproblem tag and, on terminals, level colors."""

    def __init__(self, use_color: Optional[bool] = None):
        super().__init__()
        self.use_color = use_color

    def format(self, record):
        template = SUBPROBLEM_FORMAT if hasattr(record, "subproblem") else BASE_FORMAT
        message = logging.Formatter(template).format(record)

        use_color = self.use_color
        if use_color is None:
            use_color = sys.stdout.isatty()
        if use_color:
            message = f"{LEVEL_COLORS.get(record.levelname, '')}{message}{Style.RESET_ALL}"
        return message


def setup_logging(
    level: str = "INFO",
    log_file: Optional[str] = None,
    console_output: bool = True,
    subproblem: Optional[int] = None,
) -> Union[logging.Logger, logging.LoggerAdapter]:
    """
    Configure the ``dri_router`` logger.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional log file path
        console_output: Whether to log to stderr
        subproblem: Optional subproblem index added as context

    Returns:
        Configured logger (an adapter when a subproblem is given)
    """
    numeric_level = getattr(logging, level.upper(), logging.INFO)

    logger = logging.getLogger("dri_router")
    logger.setLevel(numeric_level)
    logger.handlers.clear()

    if console_output:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(numeric_level)
        console_handler.setFormatter(DriFormatter())
        logger.addHandler(console_handler)

    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(numeric_level)
        file_handler.setFormatter(DriFormatter(use_color=False))
        logger.addHandler(file_handler)

    if subproblem is not None:
        return get_subproblem_logger(subproblem, logger)
    return logger


def get_subproblem_logger(subproblem: int, base_logger: Optional[logging.Logger] = None) -> logging.LoggerAdapter:
    """Logger adapter tagging every record with a subproblem index."""
    if base_logger is None:
        base_logger = logging.getLogger("dri_router")
    return logging.LoggerAdapter(base_logger, {"subproblem": subproblem})


def setup_run_logging(instance_name: str, log_dir: str = "logs", level: str = "INFO") -> logging.Logger:
    """Log one run to a timestamped file under ``log_dir`` as well as the console."""
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_file = os.path.join(log_dir, f"{instance_name}_{timestamp}.log")
    return setup_logging(level=level, log_file=log_file, console_output=True)
