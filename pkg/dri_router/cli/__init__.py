"""CLI module initialization."""

from .main import cli

__all__ = ["cli"]
