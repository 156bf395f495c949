"""Waveform frontends: a learnable sinc band-pass filterbank and a fixed spectrogram.

The sinc filterbank convolves the raw waveform with K band-pass kernels whose
cutoff frequencies are the only learnable parameters.  Kernels are symmetric
(linear phase) and have their windowed-DC component projected out so that
every band rejects DC regardless of how close its lower edge sits to 0 Hz.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

from svsnet.signal_io import MODEL_RATE, Waveform


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_init(
    n_filters: int,
    sample_rate: int = MODEL_RATE,
    min_low_hz: float = 30.0,
    min_band_hz: float = 50.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Mel-spaced initial (low cutoff, bandwidth) arrays for K overlapping bands.

    K+2 mel-uniform edge points span [min_low_hz, nyquist - (min_low + min_band)];
    band k covers points k..k+2, so adjacent bands overlap by half.
    """
    if n_filters < 1:
        raise ValueError("n_filters must be >= 1")
    high = sample_rate / 2.0 - (min_low_hz + min_band_hz)
    edges = mel_to_hz(np.linspace(hz_to_mel(min_low_hz), hz_to_mel(high), n_filters + 2))
    low = edges[:n_filters].copy()
    band = edges[2 : n_filters + 2] - low
    low[0] = min_low_hz  # kill the round-trip error at the fixed endpoint
    return low, band


class SincFilterbank(nn.Module):
    """K learnable band-pass filters applied to the raw waveform, stride 1.

    Effective cutoffs are f1 = min_low_hz + |theta1| and
    f2 = clamp(f1 + min_band_hz + |theta2|, nyquist), which keeps every band
    valid under unconstrained gradient updates.
    """

    def __init__(
        self,
        n_filters: int = 64,
        filter_length: int = 251,
        sample_rate: int = MODEL_RATE,
        min_low_hz: float = 30.0,
        min_band_hz: float = 50.0,
        stride: int = 1,
    ):
        super().__init__()
        if filter_length % 2 != 1:
            raise ValueError(f"filter_length must be odd, got {filter_length}")
        self.n_filters = n_filters
        self.filter_length = filter_length
        self.sample_rate = sample_rate
        self.min_low_hz = float(min_low_hz)
        self.min_band_hz = float(min_band_hz)
        self.stride = stride

        low, band = mel_init(n_filters, sample_rate, min_low_hz, min_band_hz)
        self.low_hz_param = nn.Parameter(torch.tensor(low - min_low_hz, dtype=torch.float32))
        self.band_hz_param = nn.Parameter(torch.tensor(band - min_band_hz, dtype=torch.float32))

        n = torch.arange(filter_length, dtype=torch.float64) - (filter_length - 1) / 2
        self.register_buffer("time_index", n)
        self.register_buffer("window", torch.hamming_window(filter_length, periodic=False, dtype=torch.float64))

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    def cutoffs(self) -> tuple[torch.Tensor, torch.Tensor]:
        """Effective (f1, f2) in Hz, guaranteed min_low_hz <= f1 < f2 <= nyquist."""
        f1 = self.min_low_hz + self.low_hz_param.abs()
        f1 = f1.clamp(max=self.nyquist - self.min_band_hz)
        f2 = (f1 + self.min_band_hz + self.band_hz_param.abs()).clamp(max=self.nyquist)
        return f1, f2

    def impulse_responses(self) -> torch.Tensor:
        """(K, filter_length) symmetric band-pass kernels, zero gain at DC."""
        f1, f2 = self.cutoffs()
        n = self.time_index.to(f1.dtype)
        w = self.window.to(f1.dtype)
        fs = float(self.sample_rate)

        def lowpass(fc: torch.Tensor) -> torch.Tensor:
            # 2*fc*sinc(2*pi*fc*n) with the center-tap limit handled exactly
            x = 2.0 * math.pi * fc.unsqueeze(1) / fs * n.unsqueeze(0)
            center = n == 0
            safe_n = torch.where(center, torch.ones_like(n), n)
            taps = torch.sin(x) / (math.pi * safe_n.unsqueeze(0))
            return torch.where(center.unsqueeze(0), (2.0 * fc / fs).unsqueeze(1).expand_as(taps), taps)

        h = (lowpass(f2) - lowpass(f1)) * w.unsqueeze(0)
        # project out the windowed-DC component: sum of taps becomes exactly 0
        h = h - (h.sum(dim=1, keepdim=True) / w.sum()) * w.unsqueeze(0)
        return h

    def forward(self, samples: torch.Tensor) -> torch.Tensor:
        """(T,) waveform -> (T, K) subband features (same-length padding)."""
        if samples.ndim != 1:
            raise ValueError(f"expected 1-D waveform, got shape {tuple(samples.shape)}")
        if samples.shape[0] < self.filter_length:
            raise ValueError(
                f"waveform of {samples.shape[0]} samples is shorter than "
                f"filter_length {self.filter_length}"
            )
        kernels = self.impulse_responses().to(samples.dtype).unsqueeze(1)
        x = samples.view(1, 1, -1)
        y = torch.nn.functional.conv1d(x, kernels, stride=self.stride, padding=self.filter_length // 2)
        return y.squeeze(0).transpose(0, 1)


def apply_sinc_frontend(w: Waveform, fb: SincFilterbank) -> torch.Tensor:
    """Run the filterbank over a Waveform; returns (T, K) features."""
    if w.sample_rate != fb.sample_rate:
        raise ValueError(f"waveform rate {w.sample_rate} != filterbank rate {fb.sample_rate}")
    return fb(torch.from_numpy(np.asarray(w.samples, dtype=np.float32)))


class SpectrogramFrontend(nn.Module):
    """Fixed magnitude spectrogram: 512-point transform, 257 output channels."""

    def __init__(self, n_fft: int = 512, hop: int = 256, sample_rate: int = MODEL_RATE):
        super().__init__()
        self.n_fft = n_fft
        self.hop = hop
        self.sample_rate = sample_rate
        self.register_buffer("stft_window", torch.hann_window(n_fft, periodic=True))

    @property
    def n_channels(self) -> int:
        return self.n_fft // 2 + 1

    def forward(self, samples: torch.Tensor) -> torch.Tensor:
        """(T,) waveform -> (frames, n_fft/2+1) magnitudes; no center padding."""
        if samples.ndim != 1:
            raise ValueError(f"expected 1-D waveform, got shape {tuple(samples.shape)}")
        if samples.shape[0] < self.n_fft:
            raise ValueError(
                f"waveform of {samples.shape[0]} samples is shorter than one "
                f"window of {self.n_fft}"
            )
        spec = torch.stft(
            samples,
            n_fft=self.n_fft,
            hop_length=self.hop,
            window=self.stft_window.to(samples.dtype),
            center=False,
            return_complex=True,
        )
        return spec.abs().transpose(0, 1)


def spectrogram_frontend(w: Waveform, n_fft: int = 512, hop: int = 256) -> torch.Tensor:
    """Magnitude spectrogram of a Waveform; returns (T, 257) for the defaults."""
    fe = SpectrogramFrontend(n_fft=n_fft, hop=hop, sample_rate=w.sample_rate)
    return fe(torch.from_numpy(np.asarray(w.samples, dtype=np.float32)))
