"""Masked-convolution encoder with a VQ bottleneck and linear projection.

The representation at frame t depends only on the receptive field
[t - r, t + r]: plain convolution blocks surround one masked depthwise
convolution whose kernel is multiplied element-wise by a binary mask
that blanks the kernel center (so h_t never sees x_t directly). The
intensity-guided variant additionally zeroes the kernel row where the
average intensity score peaks, applied multiplicatively per forward pass
so learned weights are never destroyed. Frame predictions y_t come from
a vector-quantization bottleneck followed by a linear projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, NonFiniteError
from ..masking import build_kernel_mask, combine_kernel_masks, ems_kernel_position
from .transformer import Representation
from .vq import VectorQuantizer


@dataclass(frozen=True)
class NPCConfig:
    input_dim: int = 40
    target_dim: int = 40
    channels: int = 64
    conv_blocks: int = 2
    conv_kernel: int = 3
    masked_kernel: int = 15
    center_gap: int = 3
    kernel_stride: int | None = None
    vq_enabled: bool = True
    codebook_size: int = 64
    commitment: float = 0.25
    seed: int = 0

    def validate(self) -> None:
        if self.conv_kernel % 2 == 0 or self.conv_kernel < 1:
            raise ConfigError("conv_kernel must be odd and >= 1")
        if self.masked_kernel % 2 == 0 or self.masked_kernel < 3:
            raise ConfigError("masked_kernel must be odd and >= 3")
        if self.center_gap < 1:
            raise ConfigError("center_gap must be >= 1")
        for name in ("input_dim", "target_dim", "channels", "codebook_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.conv_blocks < 0:
            raise ConfigError("conv_blocks must be >= 0")
        # Raises MaskingError when (k, m) leaves no surviving row.
        build_kernel_mask(self.masked_kernel, self.center_gap, 1)


def receptive_field(config: NPCConfig) -> tuple[int, int]:
    """Radius r and size R = 2r + 1 implied by the convolution stack."""
    config.validate()
    r = config.conv_blocks * ((config.conv_kernel - 1) // 2)
    r += (config.masked_kernel - 1) // 2
    return r, 2 * r + 1


class ConvBlock(nn.Module):
    def __init__(self, channels: int, kernel: int):
        super().__init__()
        self.conv = nn.Conv1d(channels, channels, kernel, padding=kernel // 2)
        self.norm = nn.LayerNorm(channels)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        # z is (B, T, C); LayerNorm over channels keeps the block local in time.
        out = self.conv(z.transpose(1, 2)).transpose(1, 2)
        return self.norm(torch.relu(out)) + z


class MaskedConvBlock(nn.Module):
    """Depthwise convolution under W (*) D, plus a pointwise channel mix."""

    def __init__(self, channels: int, kernel: int, center_gap: int):
        super().__init__()
        self.kernel = kernel
        self.center_gap = center_gap
        self.weight = nn.Parameter(torch.randn(channels, 1, kernel) * (kernel**-0.5))
        self.bias = nn.Parameter(torch.zeros(channels))
        D = build_kernel_mask(kernel, center_gap, channels)
        # D's rows depend only on the kernel position; keep one row vector.
        self.register_buffer(
            "static_mask", torch.from_numpy(D[:, 0].astype(np.float64))
        )
        self.pointwise = nn.Linear(channels, channels)

    def effective_mask(self, ems_zero_position: int | None) -> torch.Tensor:
        mask = self.static_mask
        if ems_zero_position is not None:
            combined = combine_kernel_masks(
                mask.numpy().reshape(-1, 1).astype(np.int8), ems_zero_position
            )
            mask = torch.from_numpy(combined[:, 0].astype(np.float64))
        return mask

    def forward(
        self, z: torch.Tensor, ems_zero_position: int | None = None
    ) -> torch.Tensor:
        mask = self.effective_mask(ems_zero_position).to(z.dtype)
        masked_weight = self.weight * mask.view(1, 1, -1)
        out = nn.functional.conv1d(
            z.transpose(1, 2),
            masked_weight,
            self.bias,
            padding=self.kernel // 2,
            groups=z.shape[-1],
        ).transpose(1, 2)
        return self.pointwise(torch.relu(out))


class NPCEncoderModel(nn.Module):
    def __init__(self, config: NPCConfig):
        super().__init__()
        config.validate()
        self.config = config
        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            self.input_proj = nn.Linear(config.input_dim, config.channels)
            self.blocks = nn.ModuleList(
                ConvBlock(config.channels, config.conv_kernel)
                for _ in range(config.conv_blocks)
            )
            self.masked_block = MaskedConvBlock(
                config.channels, config.masked_kernel, config.center_gap
            )
            self.vq = VectorQuantizer(
                config.codebook_size, config.channels, config.commitment
            )
            self.joint_proj = nn.Linear(config.channels, config.target_dim)
            self.score_head = nn.Linear(config.channels, 1)

    def forward(
        self, x: torch.Tensor, ems_zero_position: int | None = None
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """x (B, T, input_dim) -> (H, score preds, joint preds, vq loss)."""
        if x.ndim != 3 or x.shape[-1] != self.config.input_dim:
            raise ConfigError(
                f"expected input (..., {self.config.input_dim}), got {tuple(x.shape)}"
            )
        z = self.input_proj(x)
        for block in self.blocks:
            z = block(z)
        h = self.masked_block(z, ems_zero_position)
        score_pred = self.score_head(h).squeeze(-1)
        if self.config.vq_enabled:
            bottleneck, _, vq_loss = self.vq(h)
        else:
            bottleneck = h
            vq_loss = torch.zeros((), dtype=h.dtype)
        joint_pred = self.joint_proj(bottleneck)
        return h, score_pred, joint_pred, vq_loss


def dynamic_kernel_position(
    model: NPCEncoderModel, scores: np.ndarray
) -> int:
    """Kernel position to zero for one utterance's intensity scores."""
    cfg = model.config
    stride = cfg.kernel_stride if cfg.kernel_stride is not None else cfg.masked_kernel
    return ems_kernel_position(scores, cfg.masked_kernel, stride)


def encode_npc(
    model: NPCEncoderModel,
    inputs: np.ndarray,
    scores: np.ndarray | None = None,
    ems_enabled: bool = False,
) -> Representation:
    """Deterministic inference; ems_enabled=False is exactly the base forward."""
    model.eval()
    x = np.asarray(inputs)
    if x.ndim != 2:
        raise ConfigError(f"expected a T x d matrix, got shape {x.shape}")
    r, R = receptive_field(model.config)
    if x.shape[0] < R:
        raise ConfigError(f"need T >= receptive field R={R}, got T={x.shape[0]}")
    position = None
    if ems_enabled:
        if scores is None:
            raise ConfigError("ems_enabled requires intensity scores")
        position = dynamic_kernel_position(model, scores)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        h, score_pred, joint_pred, _ = model(
            torch.from_numpy(x).to(dtype).unsqueeze(0), position
        )
    out = Representation(
        h=h.squeeze(0).numpy(),
        score_pred=score_pred.squeeze(0).numpy(),
        joint_pred=joint_pred.squeeze(0).numpy(),
    )
    if not np.all(np.isfinite(out.h)):
        raise NonFiniteError("masked-conv encoder produced non-finite activations")
    return out
