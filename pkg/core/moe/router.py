"""Routers of the text-guided hierarchical MoE.

The task router is a hard (binarised) two-way classifier driven by a
gradient-blocked summary of the text prompt; the token router is a soft
top-K gate evaluated per image token.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import TYPE_CHECKING, Sequence, Tuple, Union

import torch

from core.errors import InvalidInputError
from utils.validators import require_finite_logits

if TYPE_CHECKING:
    from core.mllm.toy_lm import ToyLM


class TaskType(IntEnum):
    """Task index convention shared by routers, records and data."""
    MRG = 0
    MVQA = 1

    @classmethod
    def parse(cls, value: Union[str, int, "TaskType"]) -> "TaskType":
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


@dataclass
class IndicatorVector:
    """Pooled prompt representation h_T; never carries gradient to the LM."""

    values: torch.Tensor
    grad_blocked: bool = True

    def __post_init__(self):
        self.values = self.values.detach()
        self.grad_blocked = True


def text_indicator(
    prompt_tokens: Union[Sequence[int], torch.Tensor],
    lm: "ToyLM",
    text_layers: int = 4
) -> IndicatorVector:
    """Run the first `text_layers` LM blocks on the prompt and mean-pool over positions."""
    ids = torch.as_tensor(prompt_tokens, dtype=torch.long)
    if ids.numel() == 0:
        raise InvalidInputError("Prompt must contain at least one token")
    pooled = lm.encode_prompt(ids.view(1, -1), torch.ones(1, ids.numel(), dtype=torch.bool), text_layers)
    return IndicatorVector(pooled[0])


def task_router(
    h_T: Union[IndicatorVector, torch.Tensor],
    weight: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Soft task weights wt = softmax(W h_T) and their one-hot binarisation wt'.

    Ties in wt resolve toward index 0 (MRG).
    """
    values = h_T.values if isinstance(h_T, IndicatorVector) else h_T.detach()
    logits = values @ weight.t()
    require_finite_logits(logits, "task router logits")
    wt = logits.softmax(dim=-1)
    # argmax returns the first maximal index
    choice = wt.argmax(dim=-1)
    wt_hard = torch.nn.functional.one_hot(choice, num_classes=weight.shape[0]).to(wt.dtype)
    return wt, wt_hard


def router_loss(
    wt: torch.Tensor,
    yt: Union[TaskType, int, torch.Tensor],
    eps: float = 1e-12
) -> torch.Tensor:
    """Cross-entropy -log wt[yt], clamped at eps; batch inputs are averaged."""
    target = torch.as_tensor(yt, dtype=torch.long)
    probs = wt if wt.dim() > 1 else wt.unsqueeze(0)
    target = target.view(-1).expand(probs.shape[0]) if target.numel() == 1 else target.view(-1)
    picked = probs.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    return -picked.clamp_min(eps).log().mean()


def top_k_mask(logits: torch.Tensor, k: int) -> torch.Tensor:
    """Boolean mask of the k largest logits per row; ties go to the lower index."""
    order = torch.sort(logits, dim=-1, descending=True, stable=True).indices
    return torch.zeros_like(logits, dtype=torch.bool).scatter(-1, order[..., :k], True)


def token_gate(h_I: torch.Tensor, router_weight: torch.Tensor, k: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Top-K gate weights and the selection mask they were computed over.

    A selected expert can carry weight 0.0 once softmax underflows, so callers
    dispatching tokens go by the mask, never by the weight.
    """
    n_experts = router_weight.shape[0]
    if not 1 <= k <= n_experts:
        raise InvalidInputError(f"top-k must lie in [1, {n_experts}], got {k}")
    logits = h_I @ router_weight.t()
    if k == n_experts:
        return logits.softmax(dim=-1), torch.ones_like(logits, dtype=torch.bool)
    keep = top_k_mask(logits, k)
    return logits.masked_fill(~keep, float("-inf")).softmax(dim=-1), keep


def token_router(h_I: torch.Tensor, router_weight: torch.Tensor, k: int) -> torch.Tensor:
    """Top-K gate: wk = softmax over the k largest logits, exact zeros elsewhere.

    Ties at the k-th logit go to the lower expert index.
    """
    return token_gate(h_I, router_weight, k)[0]
