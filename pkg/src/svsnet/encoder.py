"""Frame encoder: four residual-skipped dilated-convolution blocks, then a BLSTM.

Each block runs a ladder of dilated convolutions (dilations 1..64) with
gated-tanh units, accumulating residual and skip paths, applies a plain
conv+ReLU over the skip sum, and downsamples by a stride-3 max-pool.
Four blocks give an overall temporal decimation of 3**4 = 81; the
bidirectional recurrent layer doubles the channel width.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from svsnet.signal_io import Waveform

DILATIONS = (1, 2, 4, 8, 16, 32, 64)
POOL_STRIDE = 3
N_BLOCKS = 4


class RswcBlock(nn.Module):
    """One residual-skipped dilated-conv block with GTU gating and 3x pooling."""

    def __init__(self, channels: int = 64, kernel_size: int = 3):
        super().__init__()
        self.channels = channels
        self.signal_convs = nn.ModuleList()
        self.gate_convs = nn.ModuleList()
        for d in DILATIONS:
            pad = d * (kernel_size - 1) // 2
            self.signal_convs.append(nn.Conv1d(channels, channels, kernel_size, padding=pad, dilation=d))
            self.gate_convs.append(nn.Conv1d(channels, channels, kernel_size, padding=pad, dilation=d))
        self.skip_conv = nn.Conv1d(channels, channels, kernel_size, padding=(kernel_size - 1) // 2)
        self.pool = nn.MaxPool1d(kernel_size=POOL_STRIDE, stride=POOL_STRIDE)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(1, C, T) -> (1, C, floor(T/3))."""
        if x.shape[-1] < POOL_STRIDE:
            raise ValueError(f"block input of {x.shape[-1]} frames is shorter than {POOL_STRIDE}")
        skip = torch.zeros_like(x)
        for sig, gate in zip(self.signal_convs, self.gate_convs):
            h = torch.tanh(sig(x)) * torch.sigmoid(gate(x))
            x = x + h
            skip = skip + h
        y = torch.relu(self.skip_conv(skip))
        return self.pool(y)


def rswc_forward(features: torch.Tensor, block: RswcBlock) -> torch.Tensor:
    """Apply one block to (T, C) features; returns (floor(T/3), C)."""
    return block(features.transpose(0, 1).unsqueeze(0)).squeeze(0).transpose(0, 1)


class Encoder(nn.Module):
    """Frontend features -> frame representations of width 2 * recurrent_hidden."""

    def __init__(
        self,
        frontend: nn.Module,
        frontend_channels: int,
        conv_channels: int = 64,
        recurrent_hidden: int = 256,
    ):
        super().__init__()
        self.frontend = frontend
        self.frontend_channels = frontend_channels
        self.conv_channels = conv_channels
        self.recurrent_hidden = recurrent_hidden
        # 1x1 projection only when the frontend width differs from the conv width
        self.input_proj = (
            nn.Conv1d(frontend_channels, conv_channels, kernel_size=1)
            if frontend_channels != conv_channels
            else None
        )
        self.blocks = nn.ModuleList(RswcBlock(conv_channels) for _ in range(N_BLOCKS))
        self.recurrent = nn.LSTM(
            input_size=conv_channels,
            hidden_size=recurrent_hidden,
            batch_first=True,
            bidirectional=True,
        )

    @property
    def output_width(self) -> int:
        return 2 * self.recurrent_hidden

    def min_frontend_frames(self) -> int:
        return POOL_STRIDE**N_BLOCKS

    def min_samples(self) -> int:
        """Shortest waveform (in samples) the full stack accepts."""
        need_frames = self.min_frontend_frames()
        if hasattr(self.frontend, "filter_length"):
            return max(int(self.frontend.filter_length), need_frames)
        # framed frontend: frames = 1 + (n - n_fft) // hop
        return int(self.frontend.n_fft + (need_frames - 1) * self.frontend.hop)

    def forward(self, samples: torch.Tensor) -> torch.Tensor:
        """(T,) waveform -> (floor(T'/81), 2 * recurrent_hidden) representation."""
        if samples.shape[0] < self.min_samples():
            raise ValueError(
                f"waveform of {samples.shape[0]} samples is too short; the "
                f"configured encoder needs at least {self.min_samples()}"
            )
        feats = self.frontend(samples)  # (T, C_front)
        x = feats.transpose(0, 1).unsqueeze(0)
        if self.input_proj is not None:
            x = self.input_proj(x)
        for block in self.blocks:
            x = block(x)
        out, _ = self.recurrent(x.transpose(1, 2))
        return out.squeeze(0)


def encode(w: Waveform, model) -> torch.Tensor:
    """Encode a Waveform with a model exposing .encoder; returns (T, width)."""
    encoder = model.encoder if hasattr(model, "encoder") else model
    return encoder(torch.from_numpy(np.asarray(w.samples, dtype=np.float32)))
