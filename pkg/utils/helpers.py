"""Helper utilities for VolMate."""

import json
import random
from typing import Any, Optional

import numpy as np
import torch
from loguru import logger


def seed_everything(seed: int, threads: Optional[int] = 1) -> torch.Generator:
    """Seed python, numpy and torch and pin the intra-op thread count.

    Returns a torch generator seeded with the same value, for callers that
    keep their own sampling stream.
    """
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)
    if threads is not None and threads > 0:
        torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True, warn_only=True)
    logger.debug(f"Seeded RNGs with {seed} (threads={threads})")

    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def derive_seed(*parts: int) -> int:
    """Derive a 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def stable_json_dumps(obj: Any, indent: Optional[int] = 2) -> str:
    """Serialize to JSON with sorted keys so equal objects give equal bytes."""
    return json.dumps(obj, indent=indent, sort_keys=True, ensure_ascii=False)


def format_count(value: float) -> str:
    """Format a count with thousands separators."""
    if float(value).is_integer():
        return f"{int(value):,}"
    return f"{value:,.2f}"
