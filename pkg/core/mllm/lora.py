"""Low-rank adapters on selected linear maps of the language model."""

import fnmatch
import math
from typing import List, Sequence

import torch
import torch.nn as nn
from loguru import logger

from core.errors import ConfigError


class LoRALinear(nn.Module):
    """Frozen base linear plus a trainable delta scale * B @ A."""

    def __init__(self, base: nn.Linear, r: int = 4, scale: float = 1.0):
        super().__init__()
        if r < 1:
            raise ConfigError(f"LoRA rank must be >= 1, got {r}")
        self.base = base
        self.r = r
        self.scale = scale
        for param in self.base.parameters():
            param.requires_grad_(False)
        self.lora_A = nn.Parameter(torch.empty(r, base.in_features))
        self.lora_B = nn.Parameter(torch.zeros(base.out_features, r))
        nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scale * ((x @ self.lora_A.t()) @ self.lora_B.t())

    def merged(self) -> nn.Linear:
        """A plain linear whose weight is W + scale * B @ A."""
        out = nn.Linear(self.base.in_features, self.base.out_features, bias=self.base.bias is not None)
        with torch.no_grad():
            out.weight.copy_(self.base.weight + self.scale * (self.lora_B @ self.lora_A))
            if self.base.bias is not None:
                out.bias.copy_(self.base.bias)
        return out


def _set_submodule(root: nn.Module, name: str, module: nn.Module) -> None:
    parent_name, _, child = name.rpartition(".")
    parent = root.get_submodule(parent_name) if parent_name else root
    setattr(parent, child, module)


def lora_targets(model: nn.Module, patterns: Sequence[str]) -> List[str]:
    """Names of linear modules matched by the glob patterns.

    Every pattern must match at least one linear module.
    """
    linears = [name for name, module in model.named_modules() if isinstance(module, nn.Linear)]
    chosen = []
    for pattern in patterns:
        matched = fnmatch.filter(linears, pattern)
        if not matched:
            raise ConfigError(f"LoRA target '{pattern}' matches no linear layer")
        chosen.extend(name for name in matched if name not in chosen)
    return sorted(chosen)


def lora_wrap(model: nn.Module, targets: Sequence[str], r: int = 4, scale: float = 1.0) -> nn.Module:
    """Freeze the model and attach adapters to the target linears, in place."""
    names = lora_targets(model, targets)
    for param in model.parameters():
        param.requires_grad_(False)
    for name in names:
        _set_submodule(model, name, LoRALinear(model.get_submodule(name), r=r, scale=scale))
    logger.info(f"Attached rank-{r} LoRA adapters to {len(names)} linear layers")
    return model


def lora_merge(model: nn.Module) -> nn.Module:
    """Fold every adapter into its base weight and remove it, in place."""
    names = [name for name, module in model.named_modules() if isinstance(module, LoRALinear)]
    for name in names:
        _set_submodule(model, name, model.get_submodule(name).merged())
    logger.info(f"Merged {len(names)} LoRA adapters")
    return model


def lora_parameters(model: nn.Module) -> List[nn.Parameter]:
    return [
        param
        for module in model.modules()
        if isinstance(module, LoRALinear)
        for param in (module.lora_A, module.lora_B)
    ]
