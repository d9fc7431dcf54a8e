"""Input validation utilities."""

import re
from typing import Tuple

import torch

from core.errors import ConfigError, InvalidInputError, NumericError


def require_finite(tensor: torch.Tensor, what: str, error: type = InvalidInputError):
    """Raise if a tensor holds NaN or infinite values."""
    if not bool(torch.isfinite(tensor).all()):
        raise error(f"{what} contains non-finite values")


def require_finite_logits(tensor: torch.Tensor, what: str):
    """Raise NumericError on non-finite router logits."""
    require_finite(tensor, what, error=NumericError)


def require_divisible(value: int, by: int, what: str):
    """Raise ConfigError unless value is an exact multiple of by."""
    if by <= 0 or value % by != 0:
        raise ConfigError(f"{what} ({value}) is not divisible by {by}")


def require_even(value: int, what: str):
    """Raise ConfigError on odd values."""
    if value % 2 != 0:
        raise ConfigError(f"{what} must be even, got {value}")


def parse_shape(text: str) -> Tuple[int, int, int]:
    """Parse a 'DxHxW' volume shape."""
    match = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*[xX]\s*(\d+)\s*", text or "")
    if not match:
        raise InvalidInputError(f"Shape must look like DxHxW, got '{text}'")
    shape = tuple(int(g) for g in match.groups())
    if min(shape) < 1:
        raise InvalidInputError(f"Shape dimensions must be >= 1, got '{text}'")
    return shape  # type: ignore[return-value]
