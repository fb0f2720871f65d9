"""Encoder families: bidirectional transformer and masked-convolution stack."""

from .npc import (
    NPCConfig,
    NPCEncoderModel,
    dynamic_kernel_position,
    encode_npc,
    receptive_field,
)
from .transformer import (
    Representation,
    TransformerConfig,
    TransformerEncoderModel,
    encode_transformer,
    sinusoidal_positions,
)
from .vq import VectorQuantizer, vq_quantize

__all__ = [
    "NPCConfig",
    "NPCEncoderModel",
    "Representation",
    "TransformerConfig",
    "TransformerEncoderModel",
    "VectorQuantizer",
    "dynamic_kernel_position",
    "encode_npc",
    "encode_transformer",
    "receptive_field",
    "sinusoidal_positions",
    "vq_quantize",
]
