"""Evaluation protocol: ACC / LCC / SRCC / MSE at utterance and system level.

Correlations are computed in float64 from scratch (no scipy.stats) so the
test suite can cross-check them against naive closed-form oracles.
Undefined correlations (constant input, fewer than two points) are
reported as absent, never silently coerced to 0.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, asdict
from typing import Mapping, Sequence

import numpy as np

from svsnet.signal_io import GroupedPair


class UndefinedCorrelationError(ValueError):
    """Raised when a correlation has no defined value (zero variance or n < 2)."""


def round_clip(score: float) -> int:
    """Round half up, then clamp to the 1..4 rating scale."""
    if not math.isfinite(score):
        raise ValueError(f"cannot round non-finite score {score!r}")
    return int(min(4, max(1, math.floor(score + 0.5))))


def pearson_lcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation of two equal-length sequences."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise UndefinedCorrelationError("correlation needs at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(np.dot(xc, xc))
    vy = float(np.dot(yc, yc))
    if vx == 0.0 or vy == 0.0:
        raise UndefinedCorrelationError("correlation undefined for constant input")
    return float(np.dot(xc, yc) / math.sqrt(vx * vy))


def rank_average(x: Sequence[float]) -> np.ndarray:
    """Fractional ranks (1-based); tied values share the average of their ranks."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        # positions i..j (0-based) share rank mean of (i+1 .. j+1)
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_srcc(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson correlation of average-tie ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    return pearson_lcc(rank_average(x), rank_average(y))


@dataclass
class MetricReport:
    """ACC/LCC/SRCC/MSE at a declared aggregation level.

    Metrics that are undefined for the given data (constant predictions,
    a single sample, ACC at system level) are None.
    """

    level: str
    acc: float | None
    lcc: float | None
    srcc: float | None
    mse: float | None
    n: int

    def to_dict(self) -> dict:
        return asdict(self)

    def format_lines(self) -> list[str]:
        def fmt(v):
            return "undefined" if v is None else f"{v:.4f}"

        return [
            f"level: {self.level} (n={self.n})",
            f"  ACC  = {fmt(self.acc)}",
            f"  LCC  = {fmt(self.lcc)}",
            f"  SRCC = {fmt(self.srcc)}",
            f"  MSE  = {fmt(self.mse)}",
        ]


def _safe_corr(fn, x, y) -> float | None:
    try:
        return fn(x, y)
    except UndefinedCorrelationError:
        return None


def evaluate_utterance(
    preds: Mapping[str, float],
    groups: Sequence[GroupedPair],
    mode: str = "regression",
) -> MetricReport:
    """Per-pair metrics against rating-averaged ground truth.

    ``preds`` maps pair_id to the predicted score (a real score for
    regression, a predicted 1..4 label for classification).  ACC compares
    round_clip(pred) with round_clip(mean truth) in regression mode and
    the predicted label with the majority rating in classification mode.
    """
    missing = [g.pair_id for g in groups if g.pair_id not in preds]
    if missing:
        raise ValueError(f"predictions missing for pair_ids: {missing[:5]}")
    if mode not in ("regression", "classification"):
        raise ValueError(f"unknown mode {mode!r}")

    p = np.array([float(preds[g.pair_id]) for g in groups], dtype=np.float64)
    t = np.array([g.mean_score for g in groups], dtype=np.float64)
    if mode == "regression":
        hits = [round_clip(a) == round_clip(b) for a, b in zip(p, t)]
    else:
        hits = [round_clip(a) == g.majority_score for a, g in zip(p, groups)]
    acc = float(np.mean(hits)) if len(hits) else None
    mse = float(np.mean((p - t) ** 2)) if p.size else None
    return MetricReport(
        level="utterance",
        acc=acc,
        lcc=_safe_corr(pearson_lcc, p, t),
        srcc=_safe_corr(spearman_srcc, p, t),
        mse=mse,
        n=len(groups),
    )


def evaluate_system(
    preds: Mapping[str, float],
    groups: Sequence[GroupedPair],
) -> MetricReport:
    """Per-system metrics: mean predicted vs mean ground-truth score per system.

    Each pair contributes its rating-averaged truth; systems weight their
    pairs equally.  ACC is not defined at this level.
    """
    missing = [g.pair_id for g in groups if g.pair_id not in preds]
    if missing:
        raise ValueError(f"predictions missing for pair_ids: {missing[:5]}")
    by_system: dict[str, list[GroupedPair]] = defaultdict(list)
    for g in groups:
        by_system[g.system_id].append(g)
    if len(by_system) < 2:
        raise ValueError(f"system-level evaluation needs >= 2 systems, got {len(by_system)}")

    p = np.array(
        [np.mean([float(preds[g.pair_id]) for g in gs]) for gs in by_system.values()],
        dtype=np.float64,
    )
    t = np.array(
        [np.mean([g.mean_score for g in gs]) for gs in by_system.values()],
        dtype=np.float64,
    )
    return MetricReport(
        level="system",
        acc=None,
        lcc=_safe_corr(pearson_lcc, p, t),
        srcc=_safe_corr(spearman_srcc, p, t),
        mse=float(np.mean((p - t) ** 2)),
        n=len(by_system),
    )
