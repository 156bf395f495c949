"""Speaker voice similarity assessment from raw waveforms.

A library and CLI around a waveform-in similarity scorer: a learnable
sinc band-pass frontend, a stack of residual-skipped dilated-convolution
blocks with a bidirectional recurrent layer, symmetric co-attention
alignment, and a distance-based prediction head.  Ships with the full
utterance/system-level evaluation protocol and a deterministic synthetic
pair corpus for desk-scale verification.
"""

__version__ = "0.1.0"

from svsnet.signal_io import Waveform, PairRecord, GroupedPair
from svsnet.metrics import MetricReport

__all__ = [
    "Waveform",
    "PairRecord",
    "GroupedPair",
    "MetricReport",
    "__version__",
]
