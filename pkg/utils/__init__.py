"""Utilities package for VolMate."""

from utils.logger import setup_logging
from utils.validators import (
    require_finite,
    require_finite_logits,
    require_divisible,
    require_even,
    parse_shape
)
from utils.helpers import (
    seed_everything,
    derive_seed,
    stable_json_dumps,
    format_count
)

__all__ = [
    "setup_logging",
    "require_finite",
    "require_finite_logits",
    "require_divisible",
    "require_even",
    "parse_shape",
    "seed_everything",
    "derive_seed",
    "stable_json_dumps",
    "format_count"
]
