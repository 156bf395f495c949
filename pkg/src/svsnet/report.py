"""Prediction files and evaluation reports: JSON, CSV, and scatter figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from svsnet.metrics import MetricReport
from svsnet.signal_io import GroupedPair


def write_predictions(rows: Sequence[dict], path: str | Path) -> None:
    """JSON-lines rows of {"pair_id", "system_id", "score"}."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps({k: row[k] for k in ("pair_id", "system_id", "score")}) + "\n")


def read_predictions(path: str | Path) -> dict[str, float]:
    """pair_id -> score from a predictions JSON-lines file."""
    preds: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                preds[str(obj["pair_id"])] = float(obj["score"])
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"predictions line {line_no}: {exc}") from exc
    return preds


def write_report_json(reports: Sequence[MetricReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)
        fh.write("\n")


def write_report_csv(reports: Sequence[MetricReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "acc", "lcc", "srcc", "mse", "n"])
        for r in reports:
            writer.writerow([r.level, r.acc, r.lcc, r.srcc, r.mse, r.n])


def _system_means(
    preds: Mapping[str, float], groups: Sequence[GroupedPair]
) -> tuple[list[float], list[float], list[str]]:
    by_system: dict[str, list[GroupedPair]] = {}
    for g in groups:
        by_system.setdefault(g.system_id, []).append(g)
    names = sorted(by_system)
    truth = [sum(g.mean_score for g in by_system[s]) / len(by_system[s]) for s in names]
    pred = [sum(float(preds[g.pair_id]) for g in by_system[s]) / len(by_system[s]) for s in names]
    return truth, pred, names


def render_scatter(
    preds: Mapping[str, float],
    groups: Sequence[GroupedPair],
    level: str,
    path: str | Path,
) -> Path:
    """Predicted-vs-truth scatter at the requested level, saved as a figure."""
    if level == "utterance":
        truth = [g.mean_score for g in groups]
        pred = [float(preds[g.pair_id]) for g in groups]
    elif level == "system":
        truth, pred, _ = _system_means(preds, groups)
    else:
        raise ValueError(f"unknown level {level!r}")

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(truth, pred, s=14, alpha=0.6, edgecolors="none")
    lo = min(min(truth), min(pred), 1.0)
    hi = max(max(truth), max(pred), 4.0)
    ax.plot([lo, hi], [lo, hi], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("ground-truth score")
    ax.set_ylabel("predicted score")
    ax.set_title(f"{level}-level predictions (n={len(truth)})")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
