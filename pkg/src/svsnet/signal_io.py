"""Audio decoding, rate conversion, and pair-score manifest ingestion.

WAV input is RIFF linear PCM (8/16/32-bit int or float), 1 or 2 channels,
8-48 kHz.  Everything is brought to mono 16 kHz peak-normalized float32.
Manifests are JSON-lines, one object per human rating.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, kaiser_beta, resample_poly

MODEL_RATE = 16000

VALID_SPLITS = ("train", "val", "test")
MANIFEST_FIELDS = ("pair_id", "system_id", "test_path", "ref_path", "score", "split")


class ManifestError(ValueError):
    """Malformed manifest content; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"manifest line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class Waveform:
    """Mono sample sequence, float32 in [-1, 1], at the model rate after ingestion."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D sample sequence")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class PairRecord:
    """One (test utterance, reference utterance, rating) sample.

    Several records may share a pair_id: one record per human rating.
    """

    pair_id: str
    system_id: str
    test_path: str
    ref_path: str
    score: int
    split: str

    def __post_init__(self):
        if not self.pair_id:
            raise ValueError("pair_id must be nonempty")
        if not self.test_path or not self.ref_path:
            raise ValueError("test_path and ref_path must be nonempty")
        if not isinstance(self.score, int) or isinstance(self.score, bool) or not 1 <= self.score <= 4:
            raise ValueError(f"score must be an integer in 1..4, got {self.score!r}")
        if self.split not in VALID_SPLITS:
            raise ValueError(f"split must be one of {VALID_SPLITS}, got {self.split!r}")


@dataclass(frozen=True)
class GroupedPair:
    """A pair with its ratings collapsed: mean score plus the majority label."""

    pair_id: str
    system_id: str
    test_path: str
    ref_path: str
    mean_score: float
    rating_count: int
    majority_score: int

    def __post_init__(self):
        if not 1.0 <= self.mean_score <= 4.0:
            raise ValueError(f"mean_score out of [1,4]: {self.mean_score}")
        if self.rating_count < 1:
            raise ValueError("rating_count must be positive")


def _design_lowpass(up: int, down: int) -> np.ndarray:
    """Windowed-sinc anti-alias filter for a polyphase up/down converter.

    Kaiser design at ~70 dB stopband; cutoff at the tighter of the two
    Nyquist limits, in units of the internal (upsampled) rate.
    """
    m = max(up, down)
    half_len = 32 * m
    cutoff = 1.0 / m  # fraction of the high-rate Nyquist
    return firwin(2 * half_len + 1, cutoff, window=("kaiser", kaiser_beta(70.0)))


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited rate conversion; identity when the rate already matches.

    Output length is round(n * target / source), rounding half up.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate, w.source_id)
    g = math.gcd(w.sample_rate, int(target_rate))
    up, down = target_rate // g, w.sample_rate // g
    h = _design_lowpass(up, down)
    y = resample_poly(w.samples.astype(np.float64), up, down, window=h)
    n_out = (2 * w.samples.size * up + down) // (2 * down)  # round half up
    y = y[:n_out]
    return Waveform(y.astype(np.float32), int(target_rate), w.source_id)


def peak_normalize(samples: np.ndarray) -> np.ndarray:
    """Scale so max |sample| == 1; silence passes through unchanged."""
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak == 0.0:
        return samples
    return samples / peak


def load_waveform(path: str | Path) -> Waveform:
    """Decode a PCM WAV file into a mono, 16 kHz, peak-normalized Waveform."""
    path = Path(path)
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot decode {path}: {exc}") from exc
    if data.size == 0:
        raise ValueError(f"{path}: zero-length audio")
    if not 8000 <= rate <= 48000:
        raise ValueError(f"{path}: sample rate {rate} outside supported 8-48 kHz")
    if data.ndim > 2 or (data.ndim == 2 and data.shape[1] > 2):
        raise ValueError(f"{path}: only 1- or 2-channel audio is supported")

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample encoding {data.dtype}")
    if data.ndim == 2:
        x = x.mean(axis=1)

    w = Waveform(x.astype(np.float32), int(rate), source_id=path.stem)
    if rate != MODEL_RATE:
        w = resample(w, MODEL_RATE)
    return Waveform(peak_normalize(w.samples), MODEL_RATE, source_id=path.stem)


def save_waveform(w: Waveform, path: str | Path, peak: float = 0.9) -> None:
    """Write 16-bit PCM WAV, scaled to the given peak (silence stays silent)."""
    x = peak_normalize(np.asarray(w.samples, dtype=np.float64)) * peak
    wavfile.write(str(path), w.sample_rate, np.round(x * 32767.0).astype(np.int16))


def parse_manifest(path: str | Path) -> list[PairRecord]:
    """Read a JSON-lines manifest, validating each record; order-preserving."""
    records: list[PairRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ManifestError(line_no, "record must be a JSON object")
            unknown = set(obj) - set(MANIFEST_FIELDS)
            if unknown:
                raise ManifestError(line_no, f"unknown fields {sorted(unknown)}")
            missing = set(MANIFEST_FIELDS) - set(obj)
            if missing:
                raise ManifestError(line_no, f"missing fields {sorted(missing)}")
            try:
                records.append(PairRecord(**obj))
            except (TypeError, ValueError) as exc:
                raise ManifestError(line_no, str(exc)) from exc
    return records


def write_manifest(records: Iterable[PairRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "pair_id": r.pair_id,
                        "system_id": r.system_id,
                        "test_path": r.test_path,
                        "ref_path": r.ref_path,
                        "score": r.score,
                        "split": r.split,
                    },
                    sort_keys=False,
                )
                + "\n"
            )


def group_by_pair(records: Sequence[PairRecord]) -> list[GroupedPair]:
    """Collapse ratings into one GroupedPair per pair_id, in first-appearance order.

    The majority label breaks ties toward the lower (more similar) rating.
    """
    order: list[str] = []
    scores: dict[str, list[int]] = {}
    first: dict[str, PairRecord] = {}
    for r in records:
        if r.pair_id not in scores:
            order.append(r.pair_id)
            scores[r.pair_id] = []
            first[r.pair_id] = r
        scores[r.pair_id].append(r.score)

    groups = []
    for pid in order:
        votes = Counter(scores[pid])
        top = max(votes.values())
        majority = min(label for label, c in votes.items() if c == top)
        r = first[pid]
        groups.append(
            GroupedPair(
                pair_id=pid,
                system_id=r.system_id,
                test_path=r.test_path,
                ref_path=r.ref_path,
                mean_score=float(np.mean(scores[pid])),
                rating_count=len(scores[pid]),
                majority_score=majority,
            )
        )
    return groups
