"""Analytic attention cost: pairwise-score counts of the mixed stack vs full 3D."""

from dataclasses import dataclass
from typing import Tuple

import pandas as pd

from config.run_config import EncoderConfig
from core.vision.volume import SLAB_CHANNELS
from utils.helpers import format_count
from utils.validators import require_divisible, require_even


def pairwise_scores(slabs: int, tokens_per_slab: int, volumetric: bool) -> int:
    """D' * n^2 for slab-wise attention, (D' * n)^2 for volumetric attention."""
    if volumetric:
        return (slabs * tokens_per_slab) ** 2
    return slabs * tokens_per_slab ** 2


@dataclass
class FlopsReport:
    table: pd.DataFrame
    volume_shape: Tuple[int, int, int]

    @property
    def mixed_total(self) -> int:
        return int(self.table["mixed_scores"].sum())

    @property
    def full3d_total(self) -> int:
        return int(self.table["full3d_scores"].sum())

    @property
    def ratio(self) -> float:
        return self.full3d_total / self.mixed_total

    def to_dict(self) -> dict:
        return {
            "volume_shape": list(self.volume_shape),
            "layers": self.table.to_dict(orient="records"),
            "mixed_total": self.mixed_total,
            "full3d_total": self.full3d_total,
            "ratio": self.ratio,
        }

    def render(self) -> str:
        shown = self.table.copy()
        for column in ("mixed_scores", "full3d_scores"):
            shown[column] = shown[column].map(format_count)
        shown["ratio"] = shown["ratio"].map(lambda r: f"{r:.2f}")
        d, h, w = self.volume_shape
        return "\n".join([
            f"attention pairwise scores for a {d}x{h}x{w} volume",
            shown.to_string(index=False),
            f"total mixed: {format_count(self.mixed_total)}",
            f"total full-3D: {format_count(self.full3d_total)}",
            f"full-3D / mixed: {self.ratio:.3f}",
        ])


def flops_report(cfg: EncoderConfig, volume_shape: Tuple[int, int, int]) -> FlopsReport:
    """Per-layer score counts for cfg's layer split and for an all-volumetric stack."""
    depth, height, width = volume_shape
    require_divisible(height, cfg.patch, "volume height")
    require_divisible(width, cfg.patch, "volume width")
    slabs = -(-depth // SLAB_CHANNELS)
    rows, cols = height // cfg.patch, width // cfg.patch

    records = []
    for index in range(cfg.layers_total):
        tokens = rows * cols
        volumetric = cfg.is_3d(index)
        mixed = pairwise_scores(slabs, tokens, volumetric)
        full = pairwise_scores(slabs, tokens, True)
        records.append({
            "layer": index,
            "attention": "3d" if volumetric else "2d",
            "slabs": slabs,
            "tokens_per_slab": tokens,
            "mixed_scores": mixed,
            "full3d_scores": full,
            "ratio": full / mixed,
        })
        if index in cfg.merge_schedule:
            require_even(rows, "merge grid height")
            require_even(cols, "merge grid width")
            rows, cols = rows // 2, cols // 2
        if index == cfg.pool_after() and cfg.depth_pool_kernel > 1 and slabs >= cfg.depth_pool_kernel:
            slabs = slabs // cfg.depth_pool_kernel + slabs % cfg.depth_pool_kernel
    return FlopsReport(pd.DataFrame.from_records(records), (depth, height, width))
