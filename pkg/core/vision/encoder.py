"""The 3D-adapted vision encoder.

Lower layers run the reused 2D attention slab by slab; upper layers run the
same weights over every token of the volume with depth RoPE. The trailing
layers swap their feed-forward network for a mixture of experts.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import torch
import torch.nn as nn
from einops import rearrange
from loguru import logger

from config.run_config import EncoderConfig, MoEConfig
from core.errors import ConfigError, InvalidInputError
from core.moe import (
    FeedForward,
    IndicatorVector,
    RoutingRecord,
    TaskMoE,
    TaskType,
    TokenMoE,
    replicate_for_stage2
)
from core.vision.layers import (
    Attention,
    PatchEmbed,
    PatchMerge2D,
    add_positional,
    depth_pool
)
from core.vision.volume import SLAB_CHANNELS, SlabStack, TokenGrid, VolumeTensor, group_slabs


def attention_2d(grid: torch.Tensor, attn: Attention) -> torch.Tensor:
    """Self-attention inside each slab of [B, D', Hp, Wp, C]; no RoPE."""
    batch, slabs, rows, cols, _ = grid.shape
    x = rearrange(grid, "b s h w c -> (b s) (h w) c")
    out = attn(x)
    return rearrange(out, "(b s) (h w) c -> b s h w c", b=batch, s=slabs, h=rows, w=cols)


def depth_positions(slabs: int, tokens_per_slab: int, device=None) -> torch.Tensor:
    """Slab index of every token in depth-major order."""
    return torch.arange(slabs, device=device).repeat_interleave(tokens_per_slab)


def attention_3d(grid: torch.Tensor, attn: Attention) -> torch.Tensor:
    """One self-attention over all D'*Hp*Wp tokens, RoPE rotated by slab index."""
    batch, slabs, rows, cols, _ = grid.shape
    x = rearrange(grid, "b s h w c -> b (s h w) c")
    out = attn(x, depth_index=depth_positions(slabs, rows * cols, device=grid.device))
    return rearrange(out, "b (s h w) c -> b s h w c", s=slabs, h=rows, w=cols)


@dataclass
class LayerRouting:
    """Routing outputs of one MoE layer over a batch."""

    layer: int
    expert_weights: torch.Tensor
    task_probs: Optional[torch.Tensor] = None
    task_onehot: Optional[torch.Tensor] = None


class EncoderBlock(nn.Module):
    """Pre-norm transformer block: x + attn(ln1(x)), then x + ffn(ln2(x))."""

    def __init__(
        self,
        index: int,
        dim: int,
        heads: int,
        mlp_ratio: int,
        volumetric: bool,
        moe_cfg: Optional[MoEConfig] = None,
        rope_base: float = 10000.0
    ):
        super().__init__()
        self.index = index
        self.volumetric = volumetric
        self.ln1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads, rope_base=rope_base)
        self.ln2 = nn.LayerNorm(dim)
        hidden = dim * mlp_ratio
        if moe_cfg is None:
            self.ffn = FeedForward(dim, hidden)
        else:
            self.moe: Union[TokenMoE, TaskMoE] = TokenMoE(
                dim,
                hidden,
                n_experts=moe_cfg.n_experts,
                top_k=moe_cfg.top_k,
                router_init_std=moe_cfg.router_init_std,
            )

    @property
    def is_moe(self) -> bool:
        return hasattr(self, "moe")

    def forward(self, grid: torch.Tensor, h_T: Optional[torch.Tensor] = None):
        """grid [B, D', Hp, Wp, C] -> (grid, LayerRouting or None)."""
        attend = attention_3d if self.volumetric else attention_2d
        grid = grid + attend(self.ln1(grid), self.attn)

        normed = self.ln2(grid)
        if not self.is_moe:
            return grid + self.ffn(normed), None

        batch, slabs, rows, cols, _ = normed.shape
        tokens = rearrange(normed, "b s h w c -> b (s h w) c")
        if isinstance(self.moe, TaskMoE):
            if h_T is None:
                raise InvalidInputError(
                    f"Layer {self.index} routes by task and needs the prompt indicator vector"
                )
            result = self.moe(tokens, h_T)
            routed = result.tokens
            routing = LayerRouting(self.index, result.expert_weights, result.task_probs, result.task_onehot)
        else:
            routed, weights = self.moe(tokens)
            routing = LayerRouting(self.index, weights.detach())

        routed = rearrange(routed, "b (s h w) c -> b s h w c", s=slabs, h=rows, w=cols)
        return grid + routed, routing


@dataclass
class EncoderOutput:
    """Flat image tokens [B, N_img, C_final] plus per-MoE-layer routing."""

    tokens: torch.Tensor
    routing: List[LayerRouting] = field(default_factory=list)

    def task_probs(self) -> List[torch.Tensor]:
        """Task router outputs wt [B, 2] of every task-routed layer (with gradient)."""
        return [r.task_probs for r in self.routing if r.task_probs is not None]

    def records(
        self,
        sample_ids: Optional[Sequence[str]] = None,
        task_labels: Optional[Sequence[Optional[TaskType]]] = None
    ) -> List[RoutingRecord]:
        """Split batch routing into one record per (sample, layer)."""
        batch = self.tokens.shape[0]
        records = []
        for sample in range(batch):
            for routing in self.routing:
                records.append(RoutingRecord(
                    expert_weights=routing.expert_weights[sample].detach(),
                    task_probs=None if routing.task_probs is None else routing.task_probs[sample].detach(),
                    task_onehot=None if routing.task_onehot is None else routing.task_onehot[sample].detach(),
                    task_label=None if task_labels is None else task_labels[sample],
                    layer=routing.layer,
                    sample_id=None if sample_ids is None else sample_ids[sample],
                ))
        return records


class VisionEncoder3D(nn.Module):
    """ViT whose 2D weights are reused unchanged on slab-grouped volumes."""

    def __init__(self, cfg: EncoderConfig, moe_cfg: Optional[MoEConfig] = None):
        super().__init__()
        if cfg.n_moe > 0 and moe_cfg is None:
            raise ConfigError("An encoder with MoE layers needs a MoE config")
        self.cfg = cfg
        self.moe_cfg = moe_cfg

        grid = cfg.grid_size
        self.patch_embed = PatchEmbed(SLAB_CHANNELS, cfg.embed_dim, cfg.patch)
        self.pos_embed_2d = nn.Parameter(torch.randn(cfg.embed_dim, grid, grid) * 0.02)

        widths = cfg.layer_widths()
        self.layers = nn.ModuleList(
            EncoderBlock(
                index,
                widths[index],
                cfg.heads,
                cfg.mlp_ratio,
                volumetric=cfg.is_3d(index),
                moe_cfg=moe_cfg if cfg.is_moe(index) else None,
                rope_base=cfg.rope_base,
            )
            for index in range(cfg.layers_total)
        )
        self.merges = nn.ModuleList(
            PatchMerge2D(widths[index], widths[index] * cfg.merge_expansion)
            for index in cfg.merge_schedule
        )
        self.final_norm = nn.LayerNorm(cfg.output_dim)

    @property
    def moe_layers(self) -> List[EncoderBlock]:
        return [block for block in self.layers if block.is_moe]

    @property
    def routes_by_task(self) -> bool:
        return any(isinstance(block.moe, TaskMoE) for block in self.moe_layers)

    def task_router_parameters(self) -> List[nn.Parameter]:
        return [block.moe.task_router_weight for block in self.moe_layers if isinstance(block.moe, TaskMoE)]

    def to_stage2(self, text_dim: int, routing: str = "hard") -> None:
        """Replace every token-level MoE by two replicated task experts."""
        for block in self.moe_layers:
            if isinstance(block.moe, TaskMoE):
                raise ConfigError(f"Layer {block.index} already routes by task")
            block.moe = replicate_for_stage2(block.moe, text_dim, routing)
        logger.info(f"Replicated {len(self.moe_layers)} MoE layers into task experts ({routing} routing)")

    def embed(self, volumes: torch.Tensor) -> torch.Tensor:
        """[B, D, H, W] -> positioned token grid [B, D', Hp, Wp, C]."""
        grid = self.patch_embed(group_slabs(volumes))
        return add_positional(grid, self.pos_embed_2d)

    def forward(self, volumes: torch.Tensor, h_T: Optional[torch.Tensor] = None) -> EncoderOutput:
        """Encode a batch [B, D, H, W]; h_T [B, d_T] drives task-routed layers."""
        grid = self.embed(volumes)
        routing = []
        merge_at = {index: slot for slot, index in enumerate(self.cfg.merge_schedule)}
        pool_at = self.cfg.pool_after()

        for index, block in enumerate(self.layers):
            grid, layer_routing = block(grid, h_T)
            if layer_routing is not None:
                routing.append(layer_routing)
            if index in merge_at:
                grid = self.merges[merge_at[index]](grid)
            if index == pool_at:
                grid = depth_pool(grid, self.cfg.depth_pool_kernel)

        grid = self.final_norm(grid)
        return EncoderOutput(rearrange(grid, "b s h w c -> b (s h w) c"), routing)


def embed_patches(slabs: SlabStack, encoder: VisionEncoder3D) -> TokenGrid:
    """Shared 2D patch convolution over every slab: [D', 3, H, W] -> [D', Hp, Wp, C]."""
    grid = encoder.patch_embed(slabs.data.unsqueeze(0))[0]
    return TokenGrid(grid, torch.arange(slabs.n_slabs, device=grid.device))


def encode_volume(
    volume: VolumeTensor,
    encoder: VisionEncoder3D,
    text_ctx: Optional[IndicatorVector] = None
) -> torch.Tensor:
    """Encode one volume into image features [N_img, C_final].

    Tokens are ordered depth-major, then row-major within each slab.
    """
    h_T = None
    if text_ctx is not None:
        h_T = text_ctx.values.reshape(1, -1)
    elif encoder.routes_by_task:
        raise InvalidInputError("This encoder routes by task; pass the prompt indicator vector")
    return encoder(volume.data.unsqueeze(0), h_T).tokens[0]
