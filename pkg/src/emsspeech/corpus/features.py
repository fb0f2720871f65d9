"""Log-mel front end and the FeatureSequence record type."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .synth import EMOTIONS, Utterance


@dataclass(frozen=True)
class FeatureConfig:
    """Window/hop/mel parameters of the log-mel front end."""

    window: int = 400
    hop: int = 160
    n_mels: int = 40
    n_fft: int = 512
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10

    def validate(self) -> None:
        if self.hop <= 0 or self.window < self.hop:
            raise ConfigError("require window >= hop > 0")
        if self.n_mels < 1:
            raise ConfigError("n_mels must be >= 1")
        if self.n_fft < self.window:
            raise ConfigError("n_fft must be >= window")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")


@dataclass
class FeatureSequence:
    """A T x d matrix of log-mel frames plus aligned metadata.

    truth_frame_intensity has one entry per frame (the mean of the
    per-sample intensity over the frame's window); unit_labels carries
    the generator's frame-level unit ids when available.
    """

    frames: np.ndarray
    frame_rate: float
    truth_frame_intensity: np.ndarray
    emotion_label: str
    utterance_id: str
    unit_labels: np.ndarray | None = field(default=None)

    def __post_init__(self) -> None:
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("frames must be a T x d matrix with T >= 1")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames contain non-finite values")
        if self.truth_frame_intensity.shape != (self.frames.shape[0],):
            raise ValueError("truth_frame_intensity length must equal T")
        if self.truth_frame_intensity.size and (
            self.truth_frame_intensity.min() < 0.0
            or self.truth_frame_intensity.max() > 1.0
        ):
            raise ValueError("truth_frame_intensity values must lie in [0, 1]")
        if self.emotion_label not in EMOTIONS:
            raise ValueError(f"unknown emotion label: {self.emotion_label!r}")
        if self.unit_labels is not None and self.unit_labels.shape != (
            self.frames.shape[0],
        ):
            raise ValueError("unit_labels length must equal T")

    @property
    def T(self) -> int:
        return int(self.frames.shape[0])

    @property
    def d(self) -> int:
        return int(self.frames.shape[1])


def hz_to_mel(f: np.ndarray | float) -> np.ndarray | float:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: np.ndarray | float) -> np.ndarray | float:
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int, n_fft: int, sample_rate: int, fmin: float, fmax: float
) -> np.ndarray:
    """Triangular mel filters, shape (n_mels, n_fft // 2 + 1)."""
    n_bins = n_fft // 2 + 1
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = np.asarray(mel_to_hz(mel_pts))
    bin_freqs = np.arange(n_bins, dtype=np.float64) * sample_rate / n_fft
    fb = np.zeros((n_mels, n_bins), dtype=np.float64)
    for i in range(n_mels):
        left, center, right = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bin_freqs - left) / max(center - left, 1e-12)
        down = (right - bin_freqs) / max(right - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def frame_count(num_samples: int, window: int, hop: int) -> int:
    return (num_samples - window) // hop + 1


def extract_features(
    utterance: Utterance, config: FeatureConfig | None = None
) -> FeatureSequence:
    """Compute log-mel frames; T = floor((num_samples - window)/hop) + 1.

    Frame i covers samples [i*hop, i*hop + window); its intensity is the
    mean of truth_intensity over that window, and its unit label is the
    label of the window's center sample.
    """
    config = config or FeatureConfig()
    config.validate()
    samples = np.asarray(utterance.samples, dtype=np.float64)
    n = samples.size
    if n < config.window:
        raise ConfigError(
            f"utterance has {n} samples, shorter than one window ({config.window})"
        )
    T = frame_count(n, config.window, config.hop)
    starts = np.arange(T) * config.hop
    idx = starts[:, None] + np.arange(config.window)[None, :]
    windows = samples[idx] * np.hanning(config.window)[None, :]

    spec = np.abs(np.fft.rfft(windows, n=config.n_fft, axis=1)) ** 2
    fmax = config.fmax if config.fmax is not None else utterance.sample_rate / 2.0
    fb = mel_filterbank(
        config.n_mels, config.n_fft, utterance.sample_rate, config.fmin, fmax
    )
    logmel = np.log(spec @ fb.T + config.log_floor)

    intensity = np.array(
        [utterance.truth_intensity[s : s + config.window].mean() for s in starts]
    )
    intensity = np.clip(intensity, 0.0, 1.0)
    centers = starts + config.window // 2
    units = utterance.unit_labels[centers].astype(np.int32)

    return FeatureSequence(
        frames=logmel.astype(np.float32),
        frame_rate=utterance.sample_rate / config.hop,
        truth_frame_intensity=intensity.astype(np.float32),
        emotion_label=utterance.emotion_label,
        utterance_id=utterance.utterance_id,
        unit_labels=units,
    )
