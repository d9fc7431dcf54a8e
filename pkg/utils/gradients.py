"""Central finite-difference gradients for spot-checking autograd."""

from typing import Callable, Sequence, Tuple

import torch


@torch.no_grad()
def central_difference(
    loss_fn: Callable[[], torch.Tensor],
    param: torch.Tensor,
    index: Tuple[int, ...],
    eps: float = 1e-6
) -> float:
    """Numerical d(loss)/d(param[index]) using a symmetric difference."""
    original = param[index].item()

    param[index] = original + eps
    plus = float(loss_fn())
    param[index] = original - eps
    minus = float(loss_fn())
    param[index] = original

    return (plus - minus) / (2 * eps)


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """Relative error with a floor so near-zero gradients compare absolutely."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def sample_indices(
    param: torch.Tensor,
    count: int,
    generator: torch.Generator
) -> Sequence[Tuple[int, ...]]:
    """Pick random element indices of a tensor."""
    flat = torch.randint(0, param.numel(), (count,), generator=generator)
    return [tuple(int(i) for i in torch.unravel_index(f, param.shape)) for f in flat]
