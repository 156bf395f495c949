"""Deterministic synthetic speaker/utterance corpus with labeled similarity pairs.

Speakers are parameterized by pitch, three formant frequencies, and spectral
tilt.  Utterances are harmonic tones with vibrato, formant-shaped, with a
low noise floor; content (vibrato phase, harmonic phases, duration) varies
per utterance even for same-speaker pairs.  Pair labels follow the 1..4
similarity scale: 1 for same-speaker pairs, 2..4 by tertiles of normalized
speaker-parameter distance (larger distance = higher label).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from svsnet.signal_io import (
    MODEL_RATE,
    PairRecord,
    Waveform,
    save_waveform,
    write_manifest,
)

F0_RANGE = (80.0, 300.0)
FORMANT_RANGES = ((300.0, 900.0), (900.0, 2200.0), (2200.0, 3400.0))
TILT_RANGE = (-12.0, -3.0)  # dB per octave
NOISE_DB = -30.0
VIBRATO_DEPTH = 0.01
VIBRATO_RATE_HZ = 5.0


@dataclass(frozen=True)
class SpeakerParams:
    f0: float
    formants: tuple[float, float, float]
    tilt: float
    seed: int


def gen_speaker(seed: int) -> SpeakerParams:
    """Draw speaker parameters from the fixed ranges, deterministically."""
    rng = np.random.default_rng(seed)
    f0 = float(rng.uniform(*F0_RANGE))
    formants = tuple(float(rng.uniform(lo, hi)) for lo, hi in FORMANT_RANGES)
    tilt = float(rng.uniform(*TILT_RANGE))
    return SpeakerParams(f0=f0, formants=formants, tilt=tilt, seed=seed)


def speaker_distance(a: SpeakerParams, b: SpeakerParams) -> float:
    """Range-normalized euclidean distance between two speakers' parameters."""

    def norm(v, lo, hi):
        return (v - lo) / (hi - lo)

    ua = [norm(a.f0, *F0_RANGE), norm(a.tilt, *TILT_RANGE)]
    ub = [norm(b.f0, *F0_RANGE), norm(b.tilt, *TILT_RANGE)]
    for (lo, hi), fa, fb in zip(FORMANT_RANGES, a.formants, b.formants):
        ua.append(norm(fa, lo, hi))
        ub.append(norm(fb, lo, hi))
    diff = np.asarray(ua) - np.asarray(ub)
    return float(np.linalg.norm(diff) / math.sqrt(len(diff)))


def _formant_envelope(freqs: np.ndarray, sp: SpeakerParams) -> np.ndarray:
    """Lorentzian resonance bumps over a small flat baseline."""
    env = np.full_like(freqs, 0.05)
    for fc, bw in zip(sp.formants, (90.0, 120.0, 160.0)):
        env = env + 1.0 / (1.0 + ((freqs - fc) / bw) ** 2)
    return env


def gen_utterance(sp: SpeakerParams, duration_s: float, seed: int) -> Waveform:
    """One harmonic utterance for a speaker; spectral peak stays at f0."""
    if not 0.5 <= duration_s <= 5.0:
        raise ValueError(f"duration must be within [0.5, 5] s, got {duration_s}")
    rng = np.random.default_rng(seed)
    fs = MODEL_RATE
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs

    vib_phase = rng.uniform(0, 2 * math.pi)
    inst_f0 = sp.f0 * (1.0 + VIBRATO_DEPTH * np.sin(2 * math.pi * VIBRATO_RATE_HZ * t + vib_phase))
    base_phase = 2 * math.pi * np.cumsum(inst_f0) / fs

    n_harm = max(2, min(40, int(7000.0 / sp.f0)))
    k = np.arange(1, n_harm + 1)
    amps = 10.0 ** (sp.tilt * np.log2(k) / 20.0) * _formant_envelope(k * sp.f0, sp)
    amps[0] = 1.15 * amps.max()  # fundamental stays the spectral peak
    phases = rng.uniform(0, 2 * math.pi, size=n_harm)

    x = np.zeros(n)
    for ki, a, ph in zip(k, amps, phases):
        x += a * np.sin(ki * base_phase + ph)

    # mild comb shaping from a slow amplitude contour, so energy is not flat
    x *= 0.8 + 0.2 * np.sin(2 * math.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, 2 * math.pi))

    rms = float(np.sqrt(np.mean(x**2)))
    noise = rng.standard_normal(n) * rms * 10.0 ** (NOISE_DB / 20.0)
    x = x + noise
    x = x / np.max(np.abs(x)) * 0.95
    return Waveform(x.astype(np.float32), fs, source_id=f"spk{sp.seed}_u{seed}")


def _labels_by_tertile(distances: np.ndarray) -> np.ndarray:
    """2/3/4 labels by rank tertiles; larger distance, higher label."""
    order = np.argsort(distances, kind="stable")
    m = distances.size
    labels = np.empty(m, dtype=int)
    third = m // 3
    cut1, cut2 = third, 2 * third + (1 if m % 3 == 2 else 0)
    labels[order[:cut1]] = 2
    labels[order[cut1:cut2]] = 3
    labels[order[cut2:]] = 4
    return labels


def _allocate_splits(n: int, fractions: tuple[float, float, float], carry: list[float]) -> list[str]:
    """Largest-remainder allocation of n items to train/val/test.

    ``carry`` holds fractional debt from earlier buckets so that totals across
    several stratified buckets still match the requested fractions.
    """
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise ValueError(f"split fractions must be nonnegative and sum to 1, got {fractions}")
    raw = [f * n + c for f, c in zip(fractions, carry)]
    counts = [max(0, int(math.floor(r))) for r in raw]
    rem = n - sum(counts)
    for i in sorted(range(3), key=lambda i: raw[i] - counts[i], reverse=True)[:rem]:
        counts[i] += 1
    for i in range(3):
        carry[i] = raw[i] - counts[i]
    names = ("train", "val", "test")
    out: list[str] = []
    for name, c in zip(names, counts):
        out.extend([name] * c)
    return out


def gen_pair_dataset(
    n_pairs: int,
    n_speakers: int,
    seed: int,
    out_dir: str | Path,
    duration_range: tuple[float, float] = (0.8, 1.6),
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> Path:
    """Emit WAV files plus a JSON-lines manifest; returns the manifest path.

    About a quarter of pairs are same-speaker (label 1); the rest get labels
    2..4 by distance tertiles, so classes are balanced within +-10%.  Fully
    reproducible from (seed, n_pairs, n_speakers): rerunning into the same
    directory writes byte-identical artifacts.
    """
    if n_speakers < 2:
        raise ValueError(f"n_speakers must be >= 2, got {n_speakers}")
    if n_pairs < 8:
        raise ValueError(f"n_pairs must be >= 8 for meaningful tertiles, got {n_pairs}")
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    speakers = [gen_speaker(int(rng.integers(2**31))) for _ in range(n_speakers)]

    n_same = n_pairs // 4
    picks: list[tuple[int, int]] = []
    for i in range(n_same):
        s = i % n_speakers
        picks.append((s, s))
    for _ in range(n_pairs - n_same):
        a, b = rng.choice(n_speakers, size=2, replace=False)
        picks.append((int(a), int(b)))

    diff_idx = [i for i, (a, b) in enumerate(picks) if a != b]
    dists = np.array([speaker_distance(speakers[picks[i][0]], speakers[picks[i][1]]) for i in diff_idx])
    diff_labels = _labels_by_tertile(dists)
    labels = np.ones(n_pairs, dtype=int)
    labels[diff_idx] = diff_labels

    # stratified split assignment, deterministic per label bucket
    splits = [""] * n_pairs
    carry = [0.0, 0.0, 0.0]
    for label in (1, 2, 3, 4):
        bucket = [i for i in range(n_pairs) if labels[i] == label]
        perm = rng.permutation(len(bucket))
        names = _allocate_splits(len(bucket), split_fractions, carry)
        for j, name in zip(perm, names):
            splits[bucket[j]] = name

    records: list[PairRecord] = []
    for idx, (a, b) in enumerate(picks):
        pair_id = f"p{idx:05d}"
        dur_t = float(rng.uniform(*duration_range))
        dur_r = float(rng.uniform(*duration_range))
        seed_t = int(rng.integers(2**31))
        seed_r = int(rng.integers(2**31))
        w_t = gen_utterance(speakers[a], dur_t, seed_t)
        w_r = gen_utterance(speakers[b], dur_r, seed_r)
        rel_t = f"wav/{pair_id}_t.wav"
        rel_r = f"wav/{pair_id}_r.wav"
        save_waveform(w_t, out_dir / rel_t)
        save_waveform(w_r, out_dir / rel_r)
        lo, hi = sorted((a, b))
        records.append(
            PairRecord(
                pair_id=pair_id,
                system_id=f"sys_{lo:02d}_{hi:02d}",
                test_path=rel_t,
                ref_path=rel_r,
                score=int(labels[idx]),
                split=splits[idx],
            )
        )

    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(records, manifest_path)
    return manifest_path
