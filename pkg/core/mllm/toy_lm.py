"""Small decoder-only language model with learned positions and a tied head."""

from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from config.run_config import LMConfig
from core.errors import ConfigError, InvalidInputError
from utils.validators import require_divisible


class CausalSelfAttention(nn.Module):
    """Multi-head causal attention with separate q/k/v/o projections."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        require_divisible(dim, heads, "LM width")
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.o_proj = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, _ = x.shape
        return x.view(batch, length, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor) -> torch.Tensor:
        """x [B, L, d]; attn_mask [B, 1, L, L] True where attention is allowed."""
        q, k, v = self._split(self.q_proj(x)), self._split(self.k_proj(x)), self._split(self.v_proj(x))
        scores = torch.matmul(q, k.transpose(-1, -2)) * self.head_dim ** -0.5
        scores = scores.masked_fill(~attn_mask, float("-inf"))
        out = torch.matmul(scores.softmax(dim=-1), v)
        batch, _, length, _ = out.shape
        return self.o_proj(out.transpose(1, 2).reshape(batch, length, -1))


class MLP(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class LMBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = MLP(dim, dim * mlp_ratio)

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), attn_mask)
        return x + self.mlp(self.ln2(x))


def causal_mask(valid: torch.Tensor) -> torch.Tensor:
    """[B, L] validity -> [B, 1, L, L] causal mask that also hides padded keys.

    Every row keeps its own position so no row is fully masked.
    """
    length = valid.shape[1]
    lower = torch.tril(torch.ones(length, length, dtype=torch.bool, device=valid.device))
    keys = valid[:, None, None, :] | torch.eye(length, dtype=torch.bool, device=valid.device)
    return lower[None, None] & keys


class ToyLM(nn.Module):
    """Decoder-only transformer; the output head shares the token embedding."""

    def __init__(self, vocab_size: int, cfg: Optional[LMConfig] = None):
        super().__init__()
        cfg = cfg or LMConfig()
        if vocab_size < 5:
            raise ConfigError(f"Vocabulary of {vocab_size} tokens is too small")
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.tok_embed = nn.Embedding(vocab_size, cfg.d_model)
        self.pos_embed = nn.Embedding(cfg.max_len, cfg.d_model)
        self.blocks = nn.ModuleList(
            LMBlock(cfg.d_model, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.n_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.d_model)
        nn.init.normal_(self.tok_embed.weight, std=0.02)
        nn.init.normal_(self.pos_embed.weight, std=0.02)

    @property
    def d_model(self) -> int:
        return self.cfg.d_model

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.tok_embed(ids)

    def hidden_states(
        self,
        x: torch.Tensor,
        valid: Optional[torch.Tensor] = None,
        n_layers: Optional[int] = None
    ) -> torch.Tensor:
        """Run embedded inputs [B, L, d] through the first n_layers blocks."""
        batch, length, _ = x.shape
        if length > self.cfg.max_len:
            raise InvalidInputError(f"Sequence of {length} tokens exceeds max_len {self.cfg.max_len}")
        if valid is None:
            valid = torch.ones(batch, length, dtype=torch.bool, device=x.device)
        positions = torch.arange(length, device=x.device)
        h = x + self.pos_embed(positions)[None]
        mask = causal_mask(valid)
        for block in self.blocks[: n_layers if n_layers is not None else len(self.blocks)]:
            h = block(h, mask)
        return h

    def forward(self, x: torch.Tensor, valid: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Embedded inputs [B, L, d] -> next-token logits [B, L, V]."""
        h = self.final_norm(self.hidden_states(x, valid))
        return h @ self.tok_embed.weight.t()

    def encode_prompt(
        self,
        ids: torch.Tensor,
        valid: torch.Tensor,
        text_layers: int = 4
    ) -> torch.Tensor:
        """Mean of the first text_layers hidden states over valid positions, detached."""
        if text_layers > len(self.blocks):
            raise ConfigError(f"text_layers {text_layers} exceeds the {len(self.blocks)} LM layers")
        counts = valid.sum(dim=1, keepdim=True)
        if bool((counts == 0).any()):
            raise InvalidInputError("Prompt must contain at least one token")
        with torch.no_grad():
            h = self.hidden_states(self.embed_tokens(ids), valid, n_layers=text_layers)
            pooled = (h * valid[..., None].to(h.dtype)).sum(dim=1) / counts.to(h.dtype)
        return pooled.detach()
