"""Command-line entry point for VolMate."""

from cli.app import main, run

__all__ = ["main", "run"]
