"""Core package for VolMate."""

__all__ = []
