"""Token-level and task-level mixtures of feed-forward experts."""

import copy
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from core.errors import ConfigError
from core.moe.records import RoutingRecord
from core.moe.router import IndicatorVector, TaskType, task_router, token_gate


class FeedForward(nn.Module):
    """Two-layer GELU MLP; the unit replicated into MoE experts."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class TokenMoE(nn.Module):
    """M feed-forward experts behind a soft top-K token router."""

    def __init__(
        self,
        dim: int,
        hidden: int,
        n_experts: int = 4,
        top_k: int = 2,
        router_init_std: float = 0.02
    ):
        super().__init__()
        if n_experts < 2:
            raise ConfigError(f"TokenMoE needs at least 2 experts, got {n_experts}")
        if not 1 <= top_k <= n_experts:
            raise ConfigError(f"top_k must lie in [1, {n_experts}], got {top_k}")
        self.top_k = top_k
        self.experts = nn.ModuleList(FeedForward(dim, hidden) for _ in range(n_experts))
        self.router_weight = nn.Parameter(torch.randn(n_experts, dim) * router_init_std)

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def forward(self, h: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Route tokens [..., C]; returns (output [..., C], weights [..., M]).

        Each token runs through exactly its top_k selected experts.
        """
        shape = h.shape
        flat = h.reshape(-1, shape[-1])
        wk, selected = token_gate(flat, self.router_weight, self.top_k)

        out = flat.new_zeros(flat.shape)
        for index, expert in enumerate(self.experts):
            rows = selected[:, index].nonzero(as_tuple=True)[0]
            if rows.numel() == 0:
                continue
            out = out.index_add(0, rows, wk[rows, index, None] * expert(flat[rows]))

        return out.reshape(shape), wk.reshape(*shape[:-1], self.n_experts)


@dataclass
class TaskMoEOutput:
    """Result of a task-level MoE forward over a batch."""

    tokens: torch.Tensor
    task_probs: torch.Tensor
    task_onehot: torch.Tensor
    expert_weights: torch.Tensor


class TaskMoE(nn.Module):
    """Two task experts (0 = MRG, 1 = MVQA) under a text-guided task router."""

    def __init__(
        self,
        task_experts: Sequence[TokenMoE],
        text_dim: int,
        routing: str = "hard"
    ):
        super().__init__()
        if len(task_experts) != 2:
            raise ConfigError(f"TaskMoE needs exactly 2 task experts, got {len(task_experts)}")
        if routing not in ("hard", "soft"):
            raise ConfigError(f"Unknown task routing mode: {routing}")
        self.routing = routing
        self.task_experts = nn.ModuleList(task_experts)
        self.task_router_weight = nn.Parameter(torch.zeros(len(task_experts), text_dim))

    def forward(self, tokens: torch.Tensor, h_T: torch.Tensor) -> TaskMoEOutput:
        """tokens [B, N, C], h_T [B, d_T] (gradient-blocked)."""
        wt, wt_hard = task_router(h_T.detach(), self.task_router_weight)
        choice = wt_hard.argmax(dim=-1)

        if self.routing == "soft":
            outputs = [expert(tokens) for expert in self.task_experts]
            mixed = sum(wt[:, j, None, None] * outputs[j][0] for j in range(len(outputs)))
            weights = torch.stack([o[1] for o in outputs], dim=1)
            picked = weights[torch.arange(tokens.shape[0]), choice]
            return TaskMoEOutput(mixed, wt, wt_hard, picked.detach())

        out = tokens.new_zeros(tokens.shape)
        n_experts = self.task_experts[0].n_experts
        wk = tokens.new_zeros(*tokens.shape[:-1], n_experts)
        for index, expert in enumerate(self.task_experts):
            rows = (choice == index).nonzero(as_tuple=True)[0]
            if rows.numel() == 0:
                continue
            routed, weights = expert(tokens[rows])
            out = out.index_copy(0, rows, routed)
            wk = wk.index_copy(0, rows, weights.detach())
        return TaskMoEOutput(out, wt, wt_hard, wk)


def token_moe_forward(h: torch.Tensor, moe: TokenMoE) -> torch.Tensor:
    """Combine the selected experts' outputs for token features h [..., C]."""
    return moe(h)[0]


def tgh_moe_forward(
    tokens: torch.Tensor,
    h_T: IndicatorVector,
    moe: TaskMoE,
    yt: Optional[TaskType] = None,
    sample_id: Optional[str] = None,
    layer: Optional[int] = None
) -> Tuple[torch.Tensor, RoutingRecord]:
    """Single-sample task-level forward: tokens [N, C] -> ([N, C], record).

    yt is only recorded; it never influences routing.
    """
    result = moe(tokens.unsqueeze(0), h_T.values.reshape(1, -1))
    record = RoutingRecord(
        expert_weights=result.expert_weights[0],
        task_probs=result.task_probs[0].detach(),
        task_onehot=result.task_onehot[0].detach(),
        task_label=yt,
        layer=layer,
        sample_id=sample_id,
    )
    return result.tokens[0], record


def replicate_for_stage2(shared: TokenMoE, text_dim: int, routing: str = "hard") -> TaskMoE:
    """Deep-copy a trained token-level MoE into both task experts.

    The task router starts at zero, i.e. uniform task weights.
    """
    experts = [copy.deepcopy(shared), copy.deepcopy(shared)]
    return TaskMoE(experts, text_dim=text_dim, routing=routing)
