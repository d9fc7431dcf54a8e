"""Configuration package for VolMate."""

from config.settings import settings
from config.run_config import (
    RunConfig,
    EncoderConfig,
    MoEConfig,
    LMConfig,
    StageConfig,
    DataConfig,
    EvalConfig,
    desk_config,
    full_scale_encoder_config,
    load_run_config,
    parse_run_config
)

__all__ = [
    "settings",
    "RunConfig",
    "EncoderConfig",
    "MoEConfig",
    "LMConfig",
    "StageConfig",
    "DataConfig",
    "EvalConfig",
    "desk_config",
    "full_scale_encoder_config",
    "load_run_config",
    "parse_run_config"
]
