import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

import psutil

from ..core.pipeline import DriConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


logger = logging.getLogger(__name__)

WORKERS_ENV = "DRI_WORKERS"


class ConfigLoader:
    """
    Loads run configurations and experiment grids.

    Run configurations are flat mappings of DriConfig fields, stored as JSON
    or TOML. A TOML file may also nest them under a ``[dri]`` table.
    """

    @staticmethod
    def load_from_json(file_path: str) -> DriConfig:
        """
        Load a run configuration from a JSON file.

        Raises:
            FileNotFoundError: If the file doesn't exist
            ValueError: If the configuration is invalid
        """
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"Configuration file not found: {file_path}")

        logger.info(f"Loading configuration from: {file_path}")
        try:
            with open(file_path, "r", encoding="utf-8") as f:
                config = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"Invalid JSON in configuration file: {e}")

        return ConfigLoader._parse_config(config)

    @staticmethod
    def load_from_toml(file_path: str) -> DriConfig:
        """
        Load a run configuration from a TOML file.

        Raises:
            FileNotFoundError: If the file doesn't exist
            ValueError: If the configuration is invalid
        """
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"Configuration file not found: {file_path}")

        logger.info(f"Loading configuration from: {file_path}")
        try:
            with open(file_path, "rb") as f:
                config = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ValueError(f"Invalid TOML in configuration file: {e}")

        return ConfigLoader._parse_config(config.get("dri", config))

    @staticmethod
    def load(file_path: str) -> DriConfig:
        """Load a configuration, picking the format from the file extension."""
        if file_path.endswith(".toml"):
            return ConfigLoader.load_from_toml(file_path)
        return ConfigLoader.load_from_json(file_path)

    @staticmethod
    def load_from_dict(config: Dict[str, Any]) -> DriConfig:
        logger.debug("Loading configuration from dictionary")
        return ConfigLoader._parse_config(config)

    @staticmethod
    def _parse_config(config: Any) -> DriConfig:
        if not isinstance(config, dict):
            raise ValueError("Invalid configuration: expected a mapping of settings")
        try:
            return DriConfig.from_dict(config)
        except (TypeError, ValueError) as e:
            raise ValueError(f"Invalid configuration: {e}")

    @staticmethod
    def validate_config(config: Dict[str, Any]) -> List[str]:
        """
        Validate a configuration mapping.

        Returns:
            List of validation errors (empty if valid)
        """
        errors = []
        try:
            ConfigLoader._parse_config(config)
        except ValueError as e:
            errors.append(str(e))
        return errors

    @staticmethod
    def save_to_json(config: DriConfig, file_path: str):
        """Save a run configuration as JSON."""
        logger.info(f"Saving configuration to: {file_path}")
        directory = os.path.dirname(file_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(config.to_dict(), f, indent=2, sort_keys=True)

    @staticmethod
    def load_grid(file_path: str) -> Dict[str, Any]:
        """
        Read an experiment grid TOML file.

        Expected keys: ``instances`` (list of globs), optional ``seeds``,
        ``distance_mode``, a ``[base]`` table of DriConfig fields and an
        ``[axes]`` table mapping DriConfig fields to lists of values.

        Raises:
            FileNotFoundError: If the file doesn't exist
            ValueError: If the file is malformed
        """
        if not os.path.exists(file_path):
            raise FileNotFoundError(f"Grid file not found: {file_path}")

        logger.info(f"Loading experiment grid from: {file_path}")
        try:
            with open(file_path, "rb") as f:
                grid = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ValueError(f"Invalid TOML in grid file: {e}")

        instances = grid.get("instances")
        if isinstance(instances, str):
            grid["instances"] = [instances]
        elif not isinstance(instances, list) or not instances:
            raise ValueError("Invalid grid: 'instances' must list at least one path or glob")

        base_dir = os.path.dirname(os.path.abspath(file_path))
        grid["instances"] = [
            pattern if os.path.isabs(pattern) else os.path.join(base_dir, pattern)
            for pattern in grid["instances"]
        ]
        return grid


class ConfigValidator:
    """Utility class for validating configuration files."""

    @staticmethod
    def validate_json_file(file_path: str) -> List[str]:
        """
        Validate a JSON configuration file.

        Returns:
            List of validation errors
        """
        errors = []
        try:
            if not os.path.exists(file_path):
                errors.append(f"Configuration file not found: {file_path}")
                return errors

            with open(file_path, "r", encoding="utf-8") as f:
                config = json.load(f)

            errors.extend(ConfigLoader.validate_config(config))

        except json.JSONDecodeError as e:
            errors.append(f"Invalid JSON: {e}")
        except Exception as e:
            errors.append(f"Validation error: {e}")

        return errors

    @staticmethod
    def validate_file(file_path: str) -> List[str]:
        """Validate a JSON or TOML configuration file."""
        if not file_path.endswith(".toml"):
            return ConfigValidator.validate_json_file(file_path)
        try:
            ConfigLoader.load_from_toml(file_path)
        except (FileNotFoundError, ValueError) as e:
            return [str(e)]
        return []


def resolve_workers(explicit: Optional[int] = None) -> int:
    """
    Worker count for concurrent solving.

    Order of precedence: explicit value, the DRI_WORKERS environment
    variable, then the number of physical cores.
    """
    if explicit is not None:
        if explicit < 1:
            raise ValueError(f"worker count must be positive, got {explicit}")
        return explicit

    value = os.environ.get(WORKERS_ENV)
    if value:
        try:
            workers = int(value)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {value!r}")
        if workers < 1:
            raise ValueError(f"{WORKERS_ENV} must be positive, got {workers}")
        return workers

    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
