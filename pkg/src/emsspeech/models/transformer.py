"""Bidirectional transformer encoder with a two-layer feed-forward head.

Post-norm residual blocks (multi-head self-attention then feed-forward),
sinusoidal positions, no temporal downsampling: the representation keeps
one vector per input frame so mask indices, scores, and losses align
one-to-one. The joint head is a two-layer feed-forward network predicting
the combined frame target; the score head is a single linear map to a
scalar per frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..errors import ConfigError, NonFiniteError


@dataclass(frozen=True)
class TransformerConfig:
    input_dim: int = 40
    target_dim: int = 40
    layers: int = 3
    d_model: int = 128
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 4096
    use_positions: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.d_model % self.heads != 0:
            raise ConfigError("d_model must be divisible by heads")
        for name in ("input_dim", "target_dim", "layers", "d_model", "heads", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


def sinusoidal_positions(max_len: int, d_model: int) -> torch.Tensor:
    position = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, d_model, 2, dtype=torch.float64)
        * (-math.log(10000.0) / d_model)
    )
    pe = torch.zeros(max_len, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: d_model // 2])
    return pe


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn_dim: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(d_model, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, d_model)
        )
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        attn_out, _ = self.attn(x, x, x, need_weights=False)
        x = self.norm1(x + attn_out)
        return self.norm2(x + self.ffn(x))


class TransformerEncoderModel(nn.Module):
    def __init__(self, config: TransformerConfig):
        super().__init__()
        config.validate()
        self.config = config
        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            self.input_proj = nn.Linear(config.input_dim, config.d_model)
            self.layers = nn.ModuleList(
                EncoderLayer(config.d_model, config.heads, config.ffn_dim)
                for _ in range(config.layers)
            )
            self.joint_head = nn.Sequential(
                nn.Linear(config.d_model, config.d_model),
                nn.GELU(),
                nn.Linear(config.d_model, config.target_dim),
            )
            self.score_head = nn.Linear(config.d_model, 1)
        self.register_buffer(
            "positions", sinusoidal_positions(config.max_len, config.d_model)
        )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """x (B, T, input_dim) -> H (B, T, d_model)."""
        if x.ndim != 3 or x.shape[-1] != self.config.input_dim:
            raise ConfigError(
                f"expected input (..., {self.config.input_dim}), got {tuple(x.shape)}"
            )
        if x.shape[1] > self.config.max_len:
            raise ConfigError(f"sequence length {x.shape[1]} exceeds max_len")
        h = self.input_proj(x)
        if self.config.use_positions:
            h = h + self.positions[: x.shape[1]].to(h.dtype)
        for layer in self.layers:
            h = layer(h)
        return h

    def predict(self, h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """H -> (score predictions (B, T), joint predictions (B, T, target_dim))."""
        return self.score_head(h).squeeze(-1), self.joint_head(h)

    def forward(
        self, x: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        h = self.encode(x)
        score_pred, joint_pred = self.predict(h)
        return h, score_pred, joint_pred


@dataclass
class Representation:
    """Per-frame encoder output plus head predictions (n == T)."""

    h: np.ndarray
    score_pred: np.ndarray
    joint_pred: np.ndarray

    def __post_init__(self) -> None:
        n = self.h.shape[0]
        if self.score_pred.shape != (n,) or self.joint_pred.shape[0] != n:
            raise ValueError("head outputs must align with H")


def encode_transformer(
    model: TransformerEncoderModel, masked_input: np.ndarray
) -> Representation:
    """Deterministic inference on one utterance (T x input_dim)."""
    model.eval()
    x = np.asarray(masked_input)
    if x.ndim != 2:
        raise ConfigError(f"expected a T x d matrix, got shape {x.shape}")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        h, score_pred, joint_pred = model(torch.from_numpy(x).to(dtype).unsqueeze(0))
    out = Representation(
        h=h.squeeze(0).numpy(),
        score_pred=score_pred.squeeze(0).numpy(),
        joint_pred=joint_pred.squeeze(0).numpy(),
    )
    if not np.all(np.isfinite(out.h)):
        raise NonFiniteError("transformer produced non-finite activations")
    return out
