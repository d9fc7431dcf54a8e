"""Text-guided hierarchical mixture-of-experts package."""

from core.moe.router import (
    TaskType,
    IndicatorVector,
    text_indicator,
    task_router,
    router_loss,
    token_gate,
    token_router
)
from core.moe.records import RoutingRecord, write_records, read_records
from core.moe.experts import (
    FeedForward,
    TokenMoE,
    TaskMoE,
    TaskMoEOutput,
    token_moe_forward,
    tgh_moe_forward,
    replicate_for_stage2
)

__all__ = [
    "TaskType",
    "IndicatorVector",
    "text_indicator",
    "task_router",
    "router_loss",
    "token_gate",
    "token_router",
    "RoutingRecord",
    "write_records",
    "read_records",
    "FeedForward",
    "TokenMoE",
    "TaskMoE",
    "TaskMoEOutput",
    "token_moe_forward",
    "tgh_moe_forward",
    "replicate_for_stage2"
]
