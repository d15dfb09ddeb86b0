"""Projection head, in-batch contrastive loss, and representation diagnostics.

The loss is the normalized-temperature cross entropy over dropout view
pairs: each row's positive is its partner view, every other row in the
doubled batch is a negative, similarities are cosine, scaled by a
temperature. Alignment (mean squared distance between normalized positive
pairs) and uniformity (log mean Gaussian potential over all pairs) track
the geometry of the learned space during training.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Tuple

import torch
from torch import nn


class ProjectionHead(nn.Module):
    """Two bias-free linear maps with a ReLU in between: w2 @ relu(w1 @ h)."""

    def __init__(self, input_dim: int, hidden_dim: Optional[int] = None,
                 output_dim: int = 128, seed: int = 0):
        super().__init__()
        hidden_dim = input_dim if hidden_dim is None else hidden_dim
        gen = torch.Generator()
        gen.manual_seed(seed)
        bound = 1.0 / math.sqrt(input_dim)
        self.w1 = nn.Parameter(
            (torch.rand(hidden_dim, input_dim, generator=gen, dtype=torch.float64) * 2 - 1) * bound)
        self.w2 = nn.Parameter(
            (torch.rand(output_dim, hidden_dim, generator=gen, dtype=torch.float64) * 2 - 1) * bound)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return project(h, self)


def project(h: torch.Tensor, head: ProjectionHead) -> torch.Tensor:
    """Apply the projection head to one vector or a batch of row vectors."""
    h = torch.as_tensor(h, dtype=head.w1.dtype)
    if h.shape[-1] != head.w1.shape[1]:
        raise ValueError(f"projection input has dim {h.shape[-1]}, "
                         f"head expects {head.w1.shape[1]}")
    return torch.relu(h @ head.w1.T) @ head.w2.T


def nt_xent_loss(projections: torch.Tensor, temperature: float) -> torch.Tensor:
    """Mean contrastive loss over a doubled batch of interleaved view pairs.

    Rows 2k and 2k+1 must be the two views of instance k. Each row's loss
    is -log of its partner's share of the temperature-scaled cosine
    similarities to every other row. With a single pair the denominator
    only contains the partner, so the loss is exactly zero.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    projections = torch.as_tensor(projections, dtype=torch.float64)
    if projections.dim() != 2:
        raise ValueError("projections must be a 2-D row matrix")
    rows = projections.shape[0]
    if rows < 2 or rows % 2 != 0:
        raise ValueError(f"need an even number (>= 2) of projection rows, got {rows}")
    norms = projections.norm(dim=1)
    if bool((norms == 0).any()):
        raise ValueError("zero-norm projection: cosine similarity undefined")

    unit = projections / norms[:, None]
    sims = (unit @ unit.T) / temperature
    eye = torch.eye(rows, dtype=torch.bool)
    partner = torch.arange(rows) ^ 1
    positive = sims[torch.arange(rows), partner]
    if rows == 2:
        # Single pair: numerator and denominator coincide term for term.
        return (positive - positive).mean()
    denominator = torch.logsumexp(sims.masked_fill(eye, float("-inf")), dim=1)
    return (denominator - positive).mean()


def _as_unit_rows(vectors, name: str) -> torch.Tensor:
    matrix = torch.as_tensor(
        vectors if isinstance(vectors, torch.Tensor) else torch.stack(
            [torch.as_tensor(v, dtype=torch.float64) for v in vectors]),
        dtype=torch.float64)
    if matrix.dim() != 2:
        raise ValueError(f"{name} must be a collection of vectors")
    norms = matrix.norm(dim=1, keepdim=True)
    if bool((norms == 0).any()):
        raise ValueError(f"{name} contains a zero vector; cannot normalize")
    return matrix / norms


def alignment_metric(pairs: Sequence[Tuple]) -> float:
    """Mean squared distance between L2-normalized positive pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("alignment needs at least one pair")
    first = _as_unit_rows([u for u, _ in pairs], "first views")
    second = _as_unit_rows([v for _, v in pairs], "second views")
    return float(((first - second) ** 2).sum(dim=1).mean())


def uniformity_metric(embeddings) -> float:
    """Log mean of exp(-2 * squared distance) over all unordered pairs."""
    matrix = _as_unit_rows(embeddings, "embeddings")
    if matrix.shape[0] < 2:
        raise ValueError("uniformity needs at least two embeddings")
    squared = torch.pdist(matrix, p=2) ** 2
    return float(torch.logsumexp(-2.0 * squared, dim=0) - math.log(squared.numel()))
