"""The full similarity scorer: encoder -> alignment -> distances -> heads.

A single encoder is shared by both inputs.  The aligned pairs are pooled,
reduced to per-dimension distances, pushed through the prediction head per
direction, and averaged into the final score.  With feature fusion enabled
the per-dimension distance between two external speaker embeddings is
appended to every distance vector before the head.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from svsnet.attention import CO_ATTENTION, ATTENTION_MODES, co_attend
from svsnet.encoder import Encoder
from svsnet.frontend import SincFilterbank, SpectrogramFrontend
from svsnet.head import (
    CLASSIFICATION,
    HEAD_MODES,
    REGRESSION,
    ExternalEmbedding,
    PredictionHead,
    Score,
    distance,
    mean_pool,
)
from svsnet.signal_io import MODEL_RATE, Waveform

SINC = "sinc"
SPECTROGRAM = "spectrogram"
FRONTENDS = (SINC, SPECTROGRAM)


@dataclass
class ModelConfig:
    frontend: str = SINC
    attention_mode: str = CO_ATTENTION
    head_mode: str = REGRESSION
    sinc_filters: int = 64
    filter_length: int = 251
    conv_channels: int = 64
    recurrent_hidden: int = 256
    head_hidden: int = 128
    embedding_dim: int | None = None
    sample_rate: int = MODEL_RATE
    min_low_hz: float = 30.0
    min_band_hz: float = 50.0
    n_fft: int = 512
    hop: int = 256

    def __post_init__(self):
        if self.frontend not in FRONTENDS:
            raise ValueError(f"frontend must be one of {FRONTENDS}, got {self.frontend!r}")
        if self.attention_mode not in ATTENTION_MODES:
            raise ValueError(f"attention_mode must be one of {ATTENTION_MODES}")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"head_mode must be one of {HEAD_MODES}")

    @property
    def representation_width(self) -> int:
        return 2 * self.recurrent_hidden

    @property
    def head_in_width(self) -> int:
        return self.representation_width + (self.embedding_dim or 0)

    def to_dict(self) -> dict:
        return asdict(self)


class SvsNet(nn.Module):
    """Waveform-pair similarity scorer."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        if config.frontend == SINC:
            frontend = SincFilterbank(
                n_filters=config.sinc_filters,
                filter_length=config.filter_length,
                sample_rate=config.sample_rate,
                min_low_hz=config.min_low_hz,
                min_band_hz=config.min_band_hz,
            )
            front_channels = config.sinc_filters
        else:
            frontend = SpectrogramFrontend(config.n_fft, config.hop, config.sample_rate)
            front_channels = frontend.n_channels
        self.encoder = Encoder(
            frontend,
            frontend_channels=front_channels,
            conv_channels=config.conv_channels,
            recurrent_hidden=config.recurrent_hidden,
        )
        self.head = PredictionHead(
            in_width=config.head_in_width,
            mode=config.head_mode,
            hidden=config.head_hidden,
        )

    def _as_tensor(self, w) -> torch.Tensor:
        if isinstance(w, Waveform):
            w = torch.from_numpy(np.asarray(w.samples, dtype=np.float32))
        dtype = next(self.parameters()).dtype
        return w.to(dtype)

    def _embedding_block(
        self,
        e_test: ExternalEmbedding | None,
        e_ref: ExternalEmbedding | None,
    ) -> torch.Tensor | None:
        if self.config.embedding_dim is None:
            if e_test is not None or e_ref is not None:
                raise ValueError("model was not configured for feature fusion")
            return None
        if e_test is None or e_ref is None:
            raise ValueError("feature-fusion model needs embeddings for both utterances")
        if e_test.vector.size != self.config.embedding_dim or e_ref.vector.size != self.config.embedding_dim:
            raise ValueError(
                f"embedding dimension mismatch: expected {self.config.embedding_dim}, "
                f"got {e_test.vector.size} and {e_ref.vector.size}"
            )
        dtype = next(self.parameters()).dtype
        return torch.from_numpy(np.abs(e_test.vector - e_ref.vector)).to(dtype)

    def forward_pair(
        self,
        wave_test,
        wave_ref,
        e_test: ExternalEmbedding | None = None,
        e_ref: ExternalEmbedding | None = None,
    ) -> dict:
        """Differentiable forward pass over one utterance pair.

        Returns {"outputs": per-direction head outputs, "score": averaged
        regression score} with probabilities added for classification.
        """
        x_t = self._as_tensor(wave_test)
        x_r = self._as_tensor(wave_ref)
        r_t = self.encoder(x_t)
        r_r = self.encoder(x_r)
        pairs = co_attend(r_t, r_r, self.config.attention_mode)
        emb_block = self._embedding_block(e_test, e_ref)

        outputs = []
        for a, b in pairs:
            d = distance(mean_pool(a), mean_pool(b))
            if emb_block is not None:
                d = torch.cat([d, emb_block])
            outputs.append(self.head(d))

        result = {"outputs": outputs}
        if self.config.head_mode == REGRESSION:
            result["score"] = torch.stack(outputs).mean()
        else:
            probs = torch.stack([torch.softmax(z, dim=-1) for z in outputs]).mean(dim=0)
            result["probs"] = probs
        return result

    @torch.no_grad()
    def score_pair(
        self,
        wave_test,
        wave_ref,
        e_test: ExternalEmbedding | None = None,
        e_ref: ExternalEmbedding | None = None,
    ) -> Score:
        """Inference-only scoring of one pair."""
        was_training = self.training
        self.eval()
        try:
            out = self.forward_pair(wave_test, wave_ref, e_test, e_ref)
        finally:
            self.train(was_training)
        if self.config.head_mode == REGRESSION:
            return Score(REGRESSION, float(out["score"]))
        return Score(CLASSIFICATION, out["probs"].double().numpy())


def build_model(config: ModelConfig) -> SvsNet:
    return SvsNet(config)


def scalar_score(score: Score, aggregate: str = "label") -> float:
    """Collapse a Score to one real number for metrics and fusion.

    Regression scores pass through; classification uses the argmax label by
    default or the probability-weighted expectation when requested.
    """
    if score.kind == REGRESSION:
        return float(score.value)
    if aggregate == "label":
        return float(score.label)
    if aggregate == "expected":
        return score.expected
    raise ValueError(f"aggregate must be 'label' or 'expected', got {aggregate!r}")
