"""Projection from vision-encoder width to language-model width."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from core.errors import ConfigError


class Connector(nn.Module):
    """Two linear maps with a GELU in between."""

    def __init__(self, in_dim: int, out_dim: int):
        super().__init__()
        self.in_dim = in_dim
        self.fc1 = nn.Linear(in_dim, out_dim)
        self.fc2 = nn.Linear(out_dim, out_dim)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(features)))


def connect(image_features: torch.Tensor, connector: Connector) -> torch.Tensor:
    """Project image features [..., C_final] to LM embeddings [..., d_LM]."""
    if image_features.shape[-1] != connector.in_dim:
        raise ConfigError(
            f"Image feature width {image_features.shape[-1]} does not match connector input {connector.in_dim}"
        )
    return connector(image_features)
