"""3D-adapted vision encoder package."""

from core.vision.volume import (
    VolumeTensor,
    SlabStack,
    TokenGrid,
    group_slabs,
    slice_group
)
from core.vision.layers import (
    PatchEmbed,
    Attention,
    PatchMerge2D,
    add_positional,
    apply_rope_depth,
    depth_pool
)
from core.vision.encoder import (
    EncoderBlock,
    EncoderOutput,
    LayerRouting,
    VisionEncoder3D,
    attention_2d,
    attention_3d,
    embed_patches,
    encode_volume
)
from core.vision.surgery import (
    SurgeryReport,
    adapt_checkpoint,
    build_encoder,
    init_source_weights,
    weight_manifest
)

__all__ = [
    "VolumeTensor",
    "SlabStack",
    "TokenGrid",
    "group_slabs",
    "slice_group",
    "PatchEmbed",
    "Attention",
    "PatchMerge2D",
    "add_positional",
    "apply_rope_depth",
    "depth_pool",
    "EncoderBlock",
    "EncoderOutput",
    "LayerRouting",
    "VisionEncoder3D",
    "attention_2d",
    "attention_3d",
    "embed_patches",
    "encode_volume",
    "SurgeryReport",
    "adapt_checkpoint",
    "build_encoder",
    "init_source_weights",
    "weight_manifest"
]
