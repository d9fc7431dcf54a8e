"""Multimodal model: tokenizer, toy LM, LoRA, connector and assembly."""

from core.mllm.tokenizer import Tokenizer, split_words, PAD, BOS, EOS, IMG, SPECIAL_TOKENS
from core.mllm.toy_lm import ToyLM
from core.mllm.lora import LoRALinear, lora_wrap, lora_merge, lora_parameters, lora_targets
from core.mllm.connector import Connector, connect
from core.mllm.model import (
    Batch,
    ModelOutput,
    MultimodalContext,
    MultimodalModel,
    assemble_context,
    autoregressive_loss,
    build_model,
    collate,
    generate,
    greedy_decode,
    sequence_losses,
    total_loss
)

__all__ = [
    "Tokenizer",
    "split_words",
    "PAD",
    "BOS",
    "EOS",
    "IMG",
    "SPECIAL_TOKENS",
    "ToyLM",
    "LoRALinear",
    "lora_wrap",
    "lora_merge",
    "lora_parameters",
    "lora_targets",
    "Connector",
    "connect",
    "Batch",
    "ModelOutput",
    "MultimodalContext",
    "MultimodalModel",
    "assemble_context",
    "autoregressive_loss",
    "build_model",
    "collate",
    "generate",
    "greedy_decode",
    "sequence_losses",
    "total_loss"
]
