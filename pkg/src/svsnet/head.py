"""Distance computation, score prediction, and the external-embedding baselines.

Each aligned pair is mean-pooled over time and reduced to a per-dimension
absolute difference vector, which a two-layer head maps to either a real
score (regression) or four class probabilities (classification).  The two
directional scores are averaged into the final score.  External speaker
embeddings support a cosine baseline, score fusion, and feature fusion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

REGRESSION = "regression"
CLASSIFICATION = "classification"
HEAD_MODES = (REGRESSION, CLASSIFICATION)


def mean_pool(representation: torch.Tensor) -> torch.Tensor:
    """(T, C) frame representation -> (C,) time average."""
    if representation.ndim != 2 or representation.shape[0] < 1:
        raise ValueError(f"expected non-empty (T, C) matrix, got {tuple(representation.shape)}")
    return representation.mean(dim=0)


def distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-dimension 1-norm distance: elementwise |a - b|."""
    if a.shape != b.shape:
        raise ValueError(f"width mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs()


class PredictionHead(nn.Module):
    """Two linear layers with a ReLU between; output width 1 or 4."""

    def __init__(self, in_width: int, mode: str = REGRESSION, hidden: int = 128):
        super().__init__()
        if mode not in HEAD_MODES:
            raise ValueError(f"mode must be one of {HEAD_MODES}, got {mode!r}")
        self.mode = mode
        self.in_width = in_width
        self.lin1 = nn.Linear(in_width, hidden)
        self.lin2 = nn.Linear(hidden, 1 if mode == REGRESSION else 4)

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        """Distance vector -> scalar score (regression) or 4 logits (classification)."""
        if d.shape[-1] != self.in_width:
            raise ValueError(f"distance width {d.shape[-1]} != head input width {self.in_width}")
        z = self.lin2(torch.relu(self.lin1(d)))
        return z.squeeze(-1) if self.mode == REGRESSION else z


@dataclass
class Score:
    """A predicted similarity score: a real value or a 4-way probability vector."""

    kind: str
    value: float | np.ndarray

    def __post_init__(self):
        if self.kind not in HEAD_MODES:
            raise ValueError(f"kind must be one of {HEAD_MODES}, got {self.kind!r}")
        if self.kind == CLASSIFICATION:
            v = np.asarray(self.value, dtype=np.float64)
            if v.shape != (4,):
                raise ValueError(f"classification score must have 4 probabilities, got {v.shape}")
            if abs(float(v.sum()) - 1.0) > 1e-6 or np.any(v < 0):
                raise ValueError("classification probabilities must form a simplex")
            self.value = v

    @property
    def label(self) -> int:
        """1..4 class label; ties break toward the lower (more similar) label."""
        if self.kind != CLASSIFICATION:
            raise ValueError("label is only defined for classification scores")
        return int(np.argmax(self.value)) + 1

    @property
    def expected(self) -> float:
        """Probability-weighted mean rating."""
        if self.kind != CLASSIFICATION:
            return float(self.value)
        return float(np.dot(self.value, np.arange(1, 5)))


def predict(d: torch.Tensor, head: PredictionHead) -> Score:
    """Run the head on one distance vector and wrap the result as a Score."""
    with torch.no_grad():
        out = head(d)
        if head.mode == REGRESSION:
            return Score(REGRESSION, float(out))
        return Score(CLASSIFICATION, torch.softmax(out, dim=-1).double().numpy())


def final_score(s_test: Score, s_ref: Score) -> Score:
    """Average of the two directional scores."""
    if s_test.kind != s_ref.kind:
        raise ValueError(f"score kind mismatch: {s_test.kind} vs {s_ref.kind}")
    if s_test.kind == REGRESSION:
        return Score(REGRESSION, 0.5 * (float(s_test.value) + float(s_ref.value)))
    return Score(CLASSIFICATION, 0.5 * (s_test.value + s_ref.value))


@dataclass(frozen=True)
class ExternalEmbedding:
    """Fixed-dimension speaker embedding keyed by utterance id."""

    utterance_id: str
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("embedding vector must be a non-empty 1-D array")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"embedding for {self.utterance_id!r} has non-finite entries")
        object.__setattr__(self, "vector", v)


def load_embeddings(path) -> dict[str, ExternalEmbedding]:
    """Read JSON-lines {"utterance_id": ..., "vector": [...]}; checks a single dimension."""
    table: dict[str, ExternalEmbedding] = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                emb = ExternalEmbedding(str(obj["utterance_id"]), np.asarray(obj["vector"], dtype=np.float64))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"embeddings line {line_no}: {exc}") from exc
            if dim is None:
                dim = emb.vector.size
            elif emb.vector.size != dim:
                raise ValueError(
                    f"embeddings line {line_no}: dimension {emb.vector.size} != {dim} seen earlier"
                )
            table[emb.utterance_id] = emb
    return table


def xvector_cosine_score(e1: ExternalEmbedding, e2: ExternalEmbedding) -> float:
    """Cosine similarity mapped affinely from [-1, 1] onto the [1, 4] scale."""
    v1, v2 = e1.vector, e2.vector
    if v1.size != v2.size:
        raise ValueError(f"embedding dimension mismatch: {v1.size} vs {v2.size}")
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("cosine score undefined for a zero embedding")
    cos = float(np.dot(v1, v2) / (n1 * n2))
    return 1.0 + 3.0 * (cos + 1.0) / 2.0


def score_fusion(s_model: float, s_xvector: float, model_weight: float = 0.3) -> float:
    """Weighted average of the model score and the embedding-cosine score."""
    return model_weight * s_model + (1.0 - model_weight) * s_xvector


def feature_fusion_extend(
    d: torch.Tensor,
    e_test: ExternalEmbedding,
    e_ref: ExternalEmbedding,
) -> torch.Tensor:
    """Append the per-dimension |e_test - e_ref| block to a distance vector."""
    if e_test.vector.size != e_ref.vector.size:
        raise ValueError(
            f"embedding dimension mismatch: {e_test.vector.size} vs {e_ref.vector.size}"
        )
    block = torch.from_numpy(np.abs(e_test.vector - e_ref.vector)).to(d.dtype)
    return torch.cat([d, block])
