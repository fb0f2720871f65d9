"""Emotion-intensity-guided masking for self-supervised speech pre-training.

The pipeline: generate a synthetic emotional corpus with ground-truth
frame intensity, score frames with an intensity extractor (or an energy
heuristic), mask the most intense frames during pre-training of either a
transformer or a masked-convolution encoder, and evaluate the frozen
representations against a uniform-masking baseline with downstream
probes.
"""

__version__ = "0.1.0"

from .errors import (
    ArchitectureMismatchError,
    ConfigError,
    CorpusError,
    DivergenceError,
    EmsSpeechError,
    EmptyScopeError,
    MaskingError,
    NonFiniteError,
    SplitError,
)

__all__ = [
    "ArchitectureMismatchError",
    "ConfigError",
    "CorpusError",
    "DivergenceError",
    "EmsSpeechError",
    "EmptyScopeError",
    "MaskingError",
    "NonFiniteError",
    "SplitError",
    "__version__",
]
