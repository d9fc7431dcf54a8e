"""Volume containers and the slab regrouping that feeds the 2D patch embedding."""

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
from einops import rearrange

from core.errors import InvalidInputError
from utils.validators import require_finite

SLAB_CHANNELS = 3


@dataclass
class VolumeTensor:
    """One scan: intensities in [0, 1] laid out as [D, H, W]."""

    data: torch.Tensor
    spacing: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        if self.data.dim() != 3 or self.data.numel() == 0:
            raise InvalidInputError(
                f"Volume must be a non-empty [D, H, W] grid, got shape {tuple(self.data.shape)}"
            )
        require_finite(self.data, "volume")

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape)  # type: ignore[return-value]


@dataclass
class SlabStack:
    """Volume regrouped into 3-slice slabs: [D', 3, H, W]."""

    data: torch.Tensor
    depth: int

    @property
    def n_slabs(self) -> int:
        return self.data.shape[0]

    def to_volume(self) -> VolumeTensor:
        """Undo the grouping, dropping replicated padding slices."""
        flat = rearrange(self.data, "s c h w -> (s c) h w")
        return VolumeTensor(flat[: self.depth].clone())


@dataclass
class TokenGrid:
    """Feature tokens [D', Hp, Wp, C] with one depth position per slab."""

    data: torch.Tensor
    depth_index: torch.Tensor

    @property
    def n_slabs(self) -> int:
        return self.data.shape[0]


def pad_depth(volumes: torch.Tensor) -> torch.Tensor:
    """Edge-replicate the last slice of [..., D, H, W] until D is a multiple of 3."""
    depth = volumes.shape[-3]
    remainder = depth % SLAB_CHANNELS
    if remainder == 0:
        return volumes
    missing = SLAB_CHANNELS - remainder
    last = volumes[..., -1:, :, :]
    repeats = [1] * volumes.dim()
    repeats[-3] = missing
    return torch.cat([volumes, last.repeat(*repeats)], dim=-3)


def group_slabs(volumes: torch.Tensor) -> torch.Tensor:
    """Batched grouping: [B, D, H, W] -> [B, ceil(D/3), 3, H, W]."""
    if volumes.dim() != 4 or volumes.shape[1] == 0:
        raise InvalidInputError(f"Expected [B, D, H, W] volumes, got {tuple(volumes.shape)}")
    padded = pad_depth(volumes)
    return rearrange(padded, "b (s c) h w -> b s c h w", c=SLAB_CHANNELS)


def slice_group(volume: VolumeTensor) -> SlabStack:
    """Group consecutive slices into 3-channel slabs without interpolation."""
    depth = volume.data.shape[0]
    slabs = group_slabs(volume.data.unsqueeze(0))[0]
    return SlabStack(data=slabs.clone(), depth=depth)
