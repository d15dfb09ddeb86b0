"""Feature fusion and stance classification.

The masked-sentence embedding queries the raw sentence's token states
through a single-query retrieval attention; the fused stance feature is
the concatenation of the masked-sentence embedding, the pooled joint
embedding, and the attention-weighted value sum. ``concat_fuse`` is the
ablation that replaces the attention weights with uniform pooling; its
value path is shared with ``attend_fuse`` so the two coincide exactly
whenever the weights do.
"""

from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn


def _uniform_init(shape, fan_in: int, gen: torch.Generator) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return (torch.rand(shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound


class AttentionFusion(nn.Module):
    """Learned query/key/value maps shared by both fusion variants."""

    def __init__(self, model_dim: int, fusion_dim: int = 128, seed: int = 0):
        super().__init__()
        gen = torch.Generator()
        gen.manual_seed(seed)
        self.w_q = nn.Parameter(_uniform_init((fusion_dim, model_dim), model_dim, gen))
        self.w_k = nn.Parameter(_uniform_init((fusion_dim, model_dim), model_dim, gen))
        self.w_v = nn.Parameter(_uniform_init((fusion_dim, model_dim), model_dim, gen))

    @property
    def model_dim(self) -> int:
        return self.w_q.shape[1]

    @property
    def fusion_dim(self) -> int:
        return self.w_q.shape[0]


def _check_dims(h: torch.Tensor, z: torch.Tensor, tokens: torch.Tensor,
                params: AttentionFusion) -> None:
    dim = params.model_dim
    if h.shape[-1] != dim or z.shape[-1] != dim or tokens.shape[-1] != dim:
        raise ValueError(f"dimension mismatch: fusion expects {dim}-dim inputs, got "
                         f"h {tuple(h.shape)}, z {tuple(z.shape)}, tokens {tuple(tokens.shape)}")
    if tokens.shape[-2] == 0:
        raise ValueError("fusion needs at least one token state")


def _fuse_batch(h: torch.Tensor, z: torch.Tensor, tokens: torch.Tensor,
                params: AttentionFusion, token_mask: Optional[torch.Tensor],
                uniform: bool) -> torch.Tensor:
    _check_dims(h, z, tokens, params)
    values = tokens @ params.w_v.T  # (B, n, d_s)
    if uniform:
        if token_mask is None:
            counts = torch.full(h.shape[:1], tokens.shape[1], dtype=h.dtype)
        else:
            counts = token_mask.sum(dim=1).to(h.dtype)
        weights = torch.ones(tokens.shape[:2], dtype=h.dtype) / counts[:, None]
        if token_mask is not None:
            weights = weights * token_mask.to(h.dtype)
    else:
        query = h @ params.w_q.T                      # (B, d_s)
        keys = tokens @ params.w_k.T                  # (B, n, d_s)
        scores = (keys @ query[:, :, None])[:, :, 0]  # (B, n)
        if token_mask is not None:
            scores = scores.masked_fill(~token_mask, float("-inf"))
        weights = torch.softmax(scores, dim=1)
    tail = (weights[:, None, :] @ values)[:, 0, :]    # (B, d_s)
    return torch.cat([h, z, tail], dim=1)


def attend_fuse(h: torch.Tensor, z: torch.Tensor, tokens: torch.Tensor,
                params: AttentionFusion) -> torch.Tensor:
    """Fuse one instance: softmax((w_q h)ᵀ(w_k Z_j)) weighted value sum."""
    return _fuse_batch(h[None, :], z[None, :], tokens[None, :, :], params,
                       None, uniform=False)[0]


def concat_fuse(h: torch.Tensor, z: torch.Tensor, tokens: torch.Tensor,
                params: AttentionFusion) -> torch.Tensor:
    """Ablation variant: uniform pooling of the value-mapped token states."""
    return _fuse_batch(h[None, :], z[None, :], tokens[None, :, :], params,
                       None, uniform=True)[0]


def attention_weights(h: torch.Tensor, tokens: torch.Tensor,
                      params: AttentionFusion) -> torch.Tensor:
    """The softmax attention over token states, exposed for inspection."""
    _check_dims(h, h, tokens, params)
    scores = (tokens @ params.w_k.T) @ (h @ params.w_q.T)
    return torch.softmax(scores, dim=0)


def fuse_batch(h: torch.Tensor, z: torch.Tensor, tokens: torch.Tensor,
               token_mask: torch.Tensor, params: AttentionFusion,
               uniform: bool = False) -> torch.Tensor:
    """Batched fusion over padded token states (mask marks real tokens)."""
    if bool((token_mask.sum(dim=1) == 0).any()):
        raise ValueError("fusion needs at least one token state per instance")
    return _fuse_batch(h, z, tokens, params, token_mask, uniform=uniform)


class StanceHead(nn.Module):
    """Fully connected layer over the fused feature, softmax-normalized."""

    def __init__(self, feature_dim: int, n_classes: int = 3, seed: int = 0):
        super().__init__()
        gen = torch.Generator()
        gen.manual_seed(seed)
        self.w_o = nn.Parameter(_uniform_init((n_classes, feature_dim), feature_dim, gen))
        self.b_o = nn.Parameter(torch.zeros(n_classes, dtype=torch.float64))


def classify(fused: torch.Tensor, head: StanceHead) -> torch.Tensor:
    """Class probability vector(s): softmax(w_o f + b_o)."""
    if fused.shape[-1] != head.w_o.shape[1]:
        raise ValueError(f"classifier expects {head.w_o.shape[1]}-dim features, "
                         f"got {fused.shape[-1]}")
    logits = fused @ head.w_o.T + head.b_o
    shifted = logits - logits.max(dim=-1, keepdim=True).values
    exp = torch.exp(shifted)
    return exp / exp.sum(dim=-1, keepdim=True)
