"""JSON run configuration: encoder, LM, MoE, training stages, data and eval."""

import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.errors import ConfigError


class _Section(BaseModel):
    """Base for config sections: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


class EncoderConfig(_Section):
    """Adapted vision encoder layout.

    The lower ``n_2d`` layers attend within each slab, the upper ``n_3d``
    layers attend over the whole volume, and the last ``n_moe`` layers carry
    a mixture-of-experts feed-forward instead of the plain FFN.
    """

    layers_total: int = 6
    n_2d: int = 2
    n_3d: int = 4
    n_moe: int = 2
    patch: int = 16
    embed_dim: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    image_size: int = 64
    # Layer indices (0-based) after which a 2x2 spatial merge runs
    merge_schedule: List[int] = Field(default_factory=lambda: [3])
    merge_expansion: int = 1
    depth_pool_kernel: int = 2
    rope_base: float = 10000.0

    @model_validator(mode="after")
    def _check_layout(self) -> "EncoderConfig":
        if self.layers_total < 1:
            raise ValueError("layers_total must be >= 1")
        if min(self.n_2d, self.n_3d, self.n_moe) < 0:
            raise ValueError("layer counts must be non-negative")
        if self.n_2d + self.n_3d != self.layers_total:
            raise ValueError(
                f"n_2d + n_3d must equal layers_total ({self.n_2d} + {self.n_3d} != {self.layers_total})"
            )
        if self.n_moe > self.n_3d:
            raise ValueError(f"n_moe ({self.n_moe}) must not exceed n_3d ({self.n_3d})")
        schedule = self.merge_schedule
        if any(b <= a for a, b in zip(schedule, schedule[1:])):
            raise ValueError(f"merge_schedule must be strictly increasing: {schedule}")
        if schedule and (schedule[0] < 0 or schedule[-1] >= self.layers_total):
            raise ValueError(f"merge_schedule indices must lie in [0, {self.layers_total})")
        if self.patch < 1 or self.image_size % self.patch != 0:
            raise ValueError(f"image_size {self.image_size} is not divisible by patch {self.patch}")
        if self.rope_base <= 0:
            raise ValueError("rope_base must be positive")
        if self.depth_pool_kernel < 1:
            raise ValueError("depth_pool_kernel must be >= 1")
        for width in self.layer_widths():
            if width % self.heads != 0 or (width // self.heads) % 2 != 0:
                raise ValueError(
                    f"width {width} must split into {self.heads} heads of even dimension"
                )
        return self

    @property
    def n_ffn(self) -> int:
        """Layers that keep the plain feed-forward network."""
        return self.layers_total - self.n_moe

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch

    def layer_widths(self) -> List[int]:
        """Token width seen by each attention layer."""
        widths = []
        width = self.embed_dim
        for index in range(self.layers_total):
            widths.append(width)
            if index in self.merge_schedule:
                width = width * self.merge_expansion
        return widths

    @property
    def output_dim(self) -> int:
        """Token width of the encoder output."""
        width = self.embed_dim
        for _ in self.merge_schedule:
            width *= self.merge_expansion
        return width

    def is_3d(self, index: int) -> bool:
        return index >= self.n_2d

    def is_moe(self, index: int) -> bool:
        return index >= self.layers_total - self.n_moe

    def pool_after(self) -> int:
        """Layer index after which depth pooling runs."""
        if self.merge_schedule:
            return self.merge_schedule[-1]
        return self.layers_total - 1


class MoEConfig(_Section):
    """Token-level and task-level mixture-of-experts settings."""

    n_experts: int = 4
    top_k: int = 2
    task_routing: Literal["hard", "soft"] = "hard"
    text_layers: int = 4
    router_init_std: float = 0.02
    loss_eps: float = 1e-12

    @model_validator(mode="after")
    def _check_experts(self) -> "MoEConfig":
        if self.n_experts < 2:
            raise ValueError("n_experts must be >= 2")
        if not 1 <= self.top_k <= self.n_experts:
            raise ValueError(f"top_k must lie in [1, {self.n_experts}]")
        if self.text_layers < 1:
            raise ValueError("text_layers must be >= 1")
        return self


class LMConfig(_Section):
    """Toy decoder-only language model."""

    n_layers: int = 4
    d_model: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    max_len: int = 256
    lora_targets: List[str] = Field(
        default_factory=lambda: ["blocks.*.attn.q_proj", "blocks.*.attn.v_proj"]
    )
    lora_rank: int = 4
    lora_scale: float = 1.0
    max_new_tokens: int = 64

    @model_validator(mode="after")
    def _check_dims(self) -> "LMConfig":
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")
        return self


class StageConfig(_Section):
    """Optimisation settings for one training stage."""

    lr: float = 1e-3
    total_steps: int = 500
    batch_size: int = 8
    seed: int = 0
    alpha: float = 0.1
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    save_interval: int = 100
    log_interval: int = 25
    encoder_trainable: bool = True
    train_lora: bool = True

    @model_validator(mode="after")
    def _check_stage(self) -> "StageConfig":
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        return self


def _stage2_defaults() -> StageConfig:
    return StageConfig(train_lora=False)


class DataConfig(_Section):
    """Synthetic corpus settings."""

    n_train: int = 2000
    n_test: int = 200
    seed: int = 0
    depth: int = 12
    size: int = 64
    noise_sigma: float = 0.02
    closed_fraction: float = 0.5
    abnormal_rate: float = 0.3


class EvalConfig(_Section):
    """Evaluation settings."""

    split: str = "test"
    max_new_tokens: int = 64
    collapse_threshold: float = 0.05
    limit: Optional[int] = None


class RunConfig(_Section):
    """Complete run configuration; every section is optional."""

    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    lm: LMConfig = Field(default_factory=LMConfig)
    moe: MoEConfig = Field(default_factory=MoEConfig)
    stage1: StageConfig = Field(default_factory=StageConfig)
    stage2: StageConfig = Field(default_factory=_stage2_defaults)
    data: DataConfig = Field(default_factory=DataConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @model_validator(mode="after")
    def _check_cross_sections(self) -> "RunConfig":
        if self.moe.text_layers > self.lm.n_layers:
            raise ValueError(
                f"moe.text_layers ({self.moe.text_layers}) exceeds lm.n_layers ({self.lm.n_layers})"
            )
        if self.data.size != self.encoder.image_size:
            raise ValueError(
                f"data.size ({self.data.size}) must equal encoder.image_size ({self.encoder.image_size})"
            )
        return self

    def stage(self, stage: int) -> StageConfig:
        """Get the optimisation section for a stage."""
        if stage == 1:
            return self.stage1
        if stage == 2:
            return self.stage2
        raise ConfigError(f"Unknown stage: {stage}")

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)


def parse_run_config(data: Union[dict, None]) -> RunConfig:
    """Validate a config mapping, converting validation failures to ConfigError."""
    try:
        return RunConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigError(f"Invalid run config: {e}") from e


def load_run_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load a JSON run config; a missing path yields the desk defaults."""
    if path is None:
        return desk_config()
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    return parse_run_config(data)


def desk_config() -> RunConfig:
    """Desk-scale defaults: 6 layers (2 slab-wise + 4 volumetric), 2 MoE layers."""
    return RunConfig()


def full_scale_encoder_config() -> EncoderConfig:
    """Full-scale encoder layout (23 counted layers, 336x336 input, patch 14)."""
    return EncoderConfig(
        layers_total=23,
        n_2d=6,
        n_3d=17,
        n_moe=4,
        patch=14,
        embed_dim=1024,
        heads=16,
        image_size=336,
        merge_schedule=[],
    )
