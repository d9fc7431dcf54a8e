"""Weight surgery: map a 2D ViT checkpoint onto the adapted 3D encoder."""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import torch
from loguru import logger

from config.run_config import EncoderConfig, MoEConfig
from core.errors import ManifestError
from core.vision.encoder import VisionEncoder3D


@dataclass
class SurgeryReport:
    """What adapt_checkpoint did to each tensor of the source archive."""

    reused: List[str] = field(default_factory=list)
    upcycled: Dict[str, List[str]] = field(default_factory=dict)
    added: List[str] = field(default_factory=list)
    removed: List[str] = field(default_factory=list)
    reshaped: List[str] = field(default_factory=list)

    def counts(self) -> Dict[str, int]:
        return {
            "reused": len(self.reused),
            "upcycled": len(self.upcycled),
            "added": len(self.added),
            "removed": len(self.removed),
            "reshaped": len(self.reshaped),
        }

    def to_dict(self) -> dict:
        return {
            "reused": list(self.reused),
            "upcycled": {name: list(copies) for name, copies in self.upcycled.items()},
            "added": list(self.added),
            "removed": list(self.removed),
            "reshaped": list(self.reshaped),
            "counts": self.counts(),
        }

    def render(self) -> str:
        """Structured plain-text report."""
        counts = self.counts()
        lines = [
            "surgery report",
            "  " + "  ".join(f"{key}={value}" for key, value in counts.items()),
        ]
        for section in ("added", "removed", "reshaped"):
            lines.append(f"  {section}:")
            lines.extend(f"    {name}" for name in getattr(self, section))
        lines.append("  upcycled:")
        for name, copies in self.upcycled.items():
            lines.append(f"    {name} -> {len(copies)} experts")
        lines.append(f"  reused: {counts['reused']} tensors")
        return "\n".join(lines)


def weight_manifest(cfg: EncoderConfig, moe_cfg: Optional[MoEConfig] = None) -> Dict[str, Tuple[int, ...]]:
    """Parameter names and shapes of an encoder, built without allocating storage."""
    with torch.device("meta"):
        encoder = VisionEncoder3D(cfg, moe_cfg)
    return {name: tuple(tensor.shape) for name, tensor in encoder.state_dict().items()}


def source_config(cfg: EncoderConfig) -> EncoderConfig:
    """The plain 2D layout a checkpoint for cfg is expected to come from."""
    return cfg.model_copy(update={"n_moe": 0})


def init_source_weights(cfg: EncoderConfig, seed: int = 0) -> Dict[str, torch.Tensor]:
    """Randomly initialised 2D encoder weights, standing in for a pretrained archive."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        encoder = VisionEncoder3D(source_config(cfg))
    return {name: tensor.detach().clone() for name, tensor in encoder.state_dict().items()}


def _ffn_prefix(index: int) -> str:
    return f"layers.{index}.ffn."


def adapt_checkpoint(
    w2d: Mapping[str, torch.Tensor],
    cfg: EncoderConfig,
    moe_cfg: Optional[MoEConfig] = None,
    generator: Optional[torch.Generator] = None
) -> Tuple[Dict[str, torch.Tensor], SurgeryReport]:
    """Validate a 2D checkpoint against cfg and return adapted encoder weights.

    With n_moe = 0 every tensor is reused as is. Otherwise the FFN of each
    MoE layer is replicated into the experts and a token router is created.
    """
    expected = weight_manifest(source_config(cfg))
    given = set(w2d)
    missing = set(expected) - given
    extra = given - set(expected)
    if missing or extra:
        logger.error(f"Checkpoint does not match the encoder layout: missing={sorted(missing)} extra={sorted(extra)}")
        raise ManifestError("Checkpoint tensors do not match the encoder layout", missing, extra)

    wrong = sorted(
        name for name, shape in expected.items() if tuple(w2d[name].shape) != shape
    )
    if wrong:
        details = ", ".join(f"{name} {tuple(w2d[name].shape)} != {expected[name]}" for name in wrong)
        raise ManifestError(f"Checkpoint tensor shapes do not match: {details}")

    report = SurgeryReport()
    weights: Dict[str, torch.Tensor] = {}
    moe_layers = [index for index in range(cfg.layers_total) if cfg.is_moe(index)]
    if moe_layers and moe_cfg is None:
        moe_cfg = MoEConfig()

    for name in sorted(w2d):
        tensor = w2d[name].detach().clone()
        layer = next((i for i in moe_layers if name.startswith(_ffn_prefix(i))), None)
        if layer is None:
            weights[name] = tensor
            report.reused.append(name)
            continue
        suffix = name[len(_ffn_prefix(layer)):]
        copies = [f"layers.{layer}.moe.experts.{m}.{suffix}" for m in range(moe_cfg.n_experts)]
        for copy_name in copies:
            weights[copy_name] = tensor.clone()
        report.upcycled[name] = copies

    widths = cfg.layer_widths()
    for index in moe_layers:
        name = f"layers.{index}.moe.router_weight"
        weights[name] = torch.randn(
            moe_cfg.n_experts, widths[index], generator=generator
        ) * moe_cfg.router_init_std
        report.added.append(name)

    counts = report.counts()
    logger.info(
        f"Adapted checkpoint: reused={counts['reused']} upcycled={counts['upcycled']} "
        f"added={counts['added']} removed={counts['removed']} reshaped={counts['reshaped']}"
    )
    return weights, report


def build_encoder(
    cfg: EncoderConfig,
    moe_cfg: Optional[MoEConfig] = None,
    weights: Optional[Mapping[str, torch.Tensor]] = None
) -> VisionEncoder3D:
    """Instantiate the encoder and load adapted weights strictly."""
    encoder = VisionEncoder3D(cfg, moe_cfg)
    if weights is not None:
        expected = set(encoder.state_dict())
        missing = expected - set(weights)
        extra = set(weights) - expected
        if missing or extra:
            raise ManifestError("Weights do not match the encoder", missing, extra)
        encoder.load_state_dict(dict(weights), strict=True)
    return encoder
