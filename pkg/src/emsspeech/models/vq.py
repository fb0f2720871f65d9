"""Vector-quantization bottleneck with straight-through gradients."""

from __future__ import annotations

import torch
from torch import nn


def vq_quantize(
    z: torch.Tensor, codebook: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Snap each row of z to its nearest codebook row (Euclidean).

    Returns (quantized, indices, codebook_loss, commitment_loss). The
    quantized rows are exact codebook members; the straight-through
    estimator makes d(quantized)/d(z) the identity. Ties go to the lowest
    codebook index.
    """
    if codebook.ndim != 2 or codebook.shape[0] < 1:
        raise ValueError("codebook must be a non-empty C x d matrix")
    if z.shape[-1] != codebook.shape[1]:
        raise ValueError(
            f"z dim {z.shape[-1]} does not match codebook dim {codebook.shape[1]}"
        )
    flat = z.reshape(-1, z.shape[-1])
    deltas = flat.detach().unsqueeze(1) - codebook.detach().unsqueeze(0)
    dists = (deltas * deltas).sum(dim=-1)
    indices = dists.argmin(dim=1)
    selected = codebook[indices]
    # (z - z.detach()) is exactly zero in value, so quantized == selected
    # bit for bit while gradients flow to z as identity.
    quantized = selected.detach() + (flat - flat.detach())
    codebook_loss = torch.mean((selected - flat.detach()) ** 2)
    commitment_loss = torch.mean((flat - selected.detach()) ** 2)
    return (
        quantized.reshape(z.shape),
        indices.reshape(z.shape[:-1]),
        codebook_loss,
        commitment_loss,
    )


class VectorQuantizer(nn.Module):
    """Owns the codebook parameter; see vq_quantize for semantics."""

    def __init__(self, codebook_size: int, dim: int, commitment: float = 0.25):
        super().__init__()
        self.codebook = nn.Parameter(torch.randn(codebook_size, dim) * 0.1)
        self.commitment = commitment

    def forward(
        self, z: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        quantized, indices, codebook_loss, commitment_loss = vq_quantize(
            z, self.codebook
        )
        return quantized, indices, codebook_loss + self.commitment * commitment_loss
