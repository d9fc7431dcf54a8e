"""Building blocks of the adapted vision encoder.

All grid tensors are laid out as [B, D', Hp, Wp, C]: batch, slab, patch
row, patch column, channel.
"""

from typing import Optional, Tuple, Union

import torch
import torch.nn as nn
from einops import rearrange

from core.errors import ConfigError
from core.vision.volume import TokenGrid
from utils.validators import require_divisible, require_even


class PatchEmbed(nn.Module):
    """Shared 2D convolution applied to every 3-slice slab independently."""

    def __init__(self, in_channels: int, embed_dim: int, patch: int):
        super().__init__()
        self.patch = patch
        self.proj = nn.Conv2d(in_channels, embed_dim, kernel_size=patch, stride=patch)

    def forward(self, slabs: torch.Tensor) -> torch.Tensor:
        """[B, D', 3, H, W] -> [B, D', H/patch, W/patch, C]."""
        require_divisible(slabs.shape[-2], self.patch, "slab height")
        require_divisible(slabs.shape[-1], self.patch, "slab width")
        batch = slabs.shape[0]
        x = self.proj(rearrange(slabs, "b s c h w -> (b s) c h w"))
        return rearrange(x, "(b s) c h w -> b s h w c", b=batch)


def add_positional(
    grid: Union[torch.Tensor, TokenGrid],
    pos_embed_2d: torch.Tensor
) -> Union[torch.Tensor, TokenGrid]:
    """Add the [C, Hp, Wp] 2D positional table to every slab."""
    if isinstance(grid, TokenGrid):
        return TokenGrid(add_positional(grid.data, pos_embed_2d), grid.depth_index)
    if tuple(pos_embed_2d.shape[1:]) != tuple(grid.shape[-3:-1]):
        raise ConfigError(
            f"Positional table {tuple(pos_embed_2d.shape[1:])} does not match token grid "
            f"{tuple(grid.shape[-3:-1])}; interpolation is not supported"
        )
    return grid + rearrange(pos_embed_2d, "c h w -> h w c")


def rope_frequencies(head_dim: int, base: float, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """theta_j = base^(-2j / head_dim) for j in [0, head_dim / 2)."""
    require_even(head_dim, "head dimension")
    exponents = torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim
    return (base ** -exponents).to(dtype)


def apply_rope_depth(
    q: torch.Tensor,
    k: torch.Tensor,
    depth_index: torch.Tensor,
    base: float = 10000.0
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Rotate adjacent channel pairs of q and k by depth_index * theta_j.

    q, k: [..., N, head_dim]; depth_index: [N] integer slab position per token.
    """
    head_dim = q.shape[-1]
    theta = rope_frequencies(head_dim, base, dtype=q.dtype)
    angles = depth_index.to(q.dtype)[:, None] * theta[None, :]
    cos, sin = angles.cos(), angles.sin()

    def rotate(x: torch.Tensor) -> torch.Tensor:
        even, odd = x[..., 0::2], x[..., 1::2]
        rotated = torch.stack((even * cos - odd * sin, even * sin + odd * cos), dim=-1)
        return rotated.flatten(-2)

    return rotate(q), rotate(k)


class Attention(nn.Module):
    """Multi-head self-attention over [G, N, C] token groups."""

    def __init__(self, dim: int, heads: int, rope_base: float = 10000.0):
        super().__init__()
        require_divisible(dim, heads, "attention width")
        self.heads = heads
        self.head_dim = dim // heads
        require_even(self.head_dim, "head dimension")
        self.scale = self.head_dim ** -0.5
        self.rope_base = rope_base
        self.qkv = nn.Linear(dim, 3 * dim)
        self.attn_out = nn.Linear(dim, dim)

    def _heads(self, x: torch.Tensor, depth_index: Optional[torch.Tensor]):
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q, k, v = (rearrange(t, "g n (h d) -> g h n d", h=self.heads) for t in (q, k, v))
        if depth_index is not None:
            q, k = apply_rope_depth(q, k, depth_index, self.rope_base)
        return q, k, v

    def forward(self, x: torch.Tensor, depth_index: Optional[torch.Tensor] = None) -> torch.Tensor:
        q, k, v = self._heads(x, depth_index)
        attn = (torch.matmul(q, k.transpose(-1, -2)) * self.scale).softmax(dim=-1)
        out = rearrange(torch.matmul(attn, v), "g h n d -> g n (h d)")
        return self.attn_out(out)


class PatchMerge2D(nn.Module):
    """Concatenate each 2x2 spatial block channel-wise and project it."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.reduction = nn.Linear(4 * in_dim, out_dim)

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        """[B, D', Hp, Wp, C] -> [B, D', Hp/2, Wp/2, C'].

        Block order inside the concatenation: (0,0), (0,1), (1,0), (1,1).
        """
        require_even(grid.shape[-3], "merge grid height")
        require_even(grid.shape[-2], "merge grid width")
        blocks = rearrange(grid, "b s (h p1) (w p2) c -> b s h w (p1 p2 c)", p1=2, p2=2)
        return self.reduction(blocks)


def depth_pool(grid: torch.Tensor, kernel: int = 2) -> torch.Tensor:
    """Non-overlapping mean over groups of `kernel` slabs.

    Trailing slabs that do not fill a group pass through unchanged, so a
    single-slab grid is returned as is.
    """
    slabs = grid.shape[1]
    full = (slabs // kernel) * kernel
    if kernel <= 1 or full == 0:
        return grid
    pooled = rearrange(grid[:, :full], "b (s k) h w c -> b s k h w c", k=kernel).mean(dim=2)
    if full == slabs:
        return pooled
    return torch.cat([pooled, grid[:, full:]], dim=1)
