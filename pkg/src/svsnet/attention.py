"""Scaled dot-product attention and the two-direction alignment it supports.

The representations are passed directly as query/key/value (no learned
projections, single head).  Co-attention aligns each utterance to the
other, which is what makes the end-to-end score symmetric under input
swap; single-sided mode keeps only the reference-aligned-to-test pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

CO_ATTENTION = "co_attention"
SINGLE_SIDED = "single_sided"
ATTENTION_MODES = (CO_ATTENTION, SINGLE_SIDED)


@dataclass(frozen=True)
class AttentionConfig:
    mode: str = CO_ATTENTION
    width: int = 512

    def __post_init__(self):
        if self.mode not in ATTENTION_MODES:
            raise ValueError(f"mode must be one of {ATTENTION_MODES}, got {self.mode!r}")
        if self.width < 1:
            raise ValueError("width must be positive")

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.width)


def attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """(T_q, d) x (T_k, d) -> (T_q, T_k) row-stochastic weights."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"width mismatch: query {q.shape[-1]} vs key {k.shape[-1]}")
    logits = q @ k.transpose(0, 1) / math.sqrt(q.shape[-1])
    # max-subtraction keeps exp() in range for long sequences
    logits = logits - logits.max(dim=-1, keepdim=True).values
    w = torch.exp(logits)
    return w / w.sum(dim=-1, keepdim=True)


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """softmax(q k^T / sqrt(d)) v, rows of weights summing to 1."""
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value length mismatch: {k.shape[0]} vs {v.shape[0]}")
    return attention_weights(q, k) @ v


def co_attend(
    r_test: torch.Tensor,
    r_ref: torch.Tensor,
    mode: str = CO_ATTENTION,
) -> tuple[tuple[torch.Tensor, torch.Tensor], ...]:
    """Aligned representation pairs for the distance stage.

    Co-attention returns ((R_T, ref-aligned-to-test), (R_R, test-aligned-to-ref));
    single-sided mode returns only the first pair.
    """
    if r_test.shape[-1] != r_ref.shape[-1]:
        raise ValueError(f"width mismatch: {r_test.shape[-1]} vs {r_ref.shape[-1]}")
    if mode not in ATTENTION_MODES:
        raise ValueError(f"mode must be one of {ATTENTION_MODES}, got {mode!r}")
    aligned_ref = scaled_dot_attention(r_test, r_ref, r_ref)
    if mode == SINGLE_SIDED:
        return ((r_test, aligned_ref),)
    aligned_test = scaled_dot_attention(r_ref, r_test, r_test)
    return ((r_test, aligned_ref), (r_ref, aligned_test))
