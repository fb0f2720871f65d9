"""Per-frame emotion intensity: trainable extractor, energy heuristic, aligner.

The extractor follows the usual two-head layout: a stack of 1-D
convolutions feeds a BiLSTM intensity head (two FC layers, sigmoid, so
frame scores live in [0, 1], with an average-pooled utterance score) and
a BiLSTM emotion head with a 4-way softmax. The deterministic fallback
is min-max-normalized per-frame RMS energy, which needs no training and
correlates with the synthetic burst envelope.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus.features import FeatureSequence
from .corpus.synth import EMOTIONS
from .errors import ConfigError, DivergenceError, NonFiniteError


class IntensitySource(str, Enum):
    MODEL = "model"
    HEURISTIC = "heuristic"
    GROUND_TRUTH = "ground_truth"


@dataclass
class IntensityTrack:
    """Per-frame scores in [0, 1] aligned to one FeatureSequence."""

    scores: np.ndarray
    source: IntensitySource
    utterance_id: str = ""

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1 or self.scores.size < 1:
            raise ValueError("scores must be a non-empty 1-D vector")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores contain non-finite values")
        if self.scores.min() < 0.0 or self.scores.max() > 1.0:
            raise ValueError("scores must lie in [0, 1]")

    def __len__(self) -> int:
        return int(self.scores.size)


@dataclass(frozen=True)
class IntensityModelConfig:
    input_dim: int = 40
    conv_depth: int = 4
    channels: int = 48
    conv_kernel: int = 5
    lstm_hidden: int = 32
    fc_hidden: int = 32
    num_emotions: int = 4
    seed: int = 0


class IntensityExtractorModel(nn.Module):
    """Conv encoder with BiLSTM intensity and emotion heads."""

    def __init__(self, config: IntensityModelConfig):
        super().__init__()
        self.config = config
        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            convs: list[nn.Module] = []
            in_ch = config.input_dim
            for _ in range(config.conv_depth):
                convs.append(
                    nn.Conv1d(
                        in_ch,
                        config.channels,
                        config.conv_kernel,
                        padding=config.conv_kernel // 2,
                    )
                )
                convs.append(nn.ReLU())
                in_ch = config.channels
            self.encoder = nn.Sequential(*convs)
            lstm_out = 2 * config.lstm_hidden
            self.intensity_lstm = nn.LSTM(
                config.channels,
                config.lstm_hidden,
                batch_first=True,
                bidirectional=True,
            )
            self.intensity_fc1 = nn.Linear(lstm_out, config.fc_hidden)
            self.intensity_fc2 = nn.Linear(config.fc_hidden, 1)
            self.emotion_lstm = nn.LSTM(
                config.channels,
                config.lstm_hidden,
                batch_first=True,
                bidirectional=True,
            )
            self.emotion_fc = nn.Linear(lstm_out, config.num_emotions)

    def forward(
        self, feats: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """feats (B, T, d) -> frame scores (B, T), utterance score (B,), logits (B, 4)."""
        if feats.ndim != 3 or feats.shape[-1] != self.config.input_dim:
            raise ConfigError(
                f"expected input (..., {self.config.input_dim}), got {tuple(feats.shape)}"
            )
        # Standardize with one scalar mean/std per utterance: tames the
        # log-mel scale while keeping relative frame loudness, the main
        # intensity cue.
        mu = feats.mean(dim=(1, 2), keepdim=True)
        sd = feats.std(dim=(1, 2), keepdim=True) + 1e-5
        feats = (feats - mu) / sd
        h = self.encoder(feats.transpose(1, 2)).transpose(1, 2)
        seq, _ = self.intensity_lstm(h)
        raw = self.intensity_fc2(torch.relu(self.intensity_fc1(seq))).squeeze(-1)
        # Hard bounded squash: a logistic saturates and stalls the L1 fit
        # on zero-heavy envelopes; clamp keeps 0 and 1 exactly reachable.
        frame_scores = torch.clamp(raw + 0.5, 0.0, 1.0)
        utterance_score = frame_scores.mean(dim=1)
        emo_seq, _ = self.emotion_lstm(h)
        logits = self.emotion_fc(emo_seq.mean(dim=1))
        return frame_scores, utterance_score, logits


def predict_intensity(
    model: IntensityExtractorModel, features: FeatureSequence
) -> tuple[IntensityTrack, np.ndarray]:
    """Frozen-model inference: (frame track, 4-way emotion distribution)."""
    model.eval()
    x = torch.from_numpy(np.asarray(features.frames, dtype=np.float32)).unsqueeze(0)
    x = x.to(next(model.parameters()).dtype)
    with torch.no_grad():
        frame_scores, _, logits = model(x)
        probs = torch.softmax(logits, dim=-1)
    scores = frame_scores.squeeze(0).numpy().astype(np.float64)
    dist = probs.squeeze(0).numpy().astype(np.float64)
    if not (np.all(np.isfinite(scores)) and np.all(np.isfinite(dist))):
        raise NonFiniteError(
            f"non-finite extractor outputs for utterance {features.utterance_id!r}"
        )
    scores = np.clip(scores, 0.0, 1.0)
    track = IntensityTrack(scores, IntensitySource.MODEL, features.utterance_id)
    return track, dist


def heuristic_intensity(features: FeatureSequence) -> IntensityTrack:
    """Min-max-normalized per-frame RMS energy; constant input maps to zeros."""
    logmel = np.asarray(features.frames, dtype=np.float64)
    rms = np.sqrt(np.mean(np.exp(2.0 * logmel), axis=1))
    lo, hi = rms.min(), rms.max()
    if hi - lo <= 1e-12:
        scores = np.zeros_like(rms)
    else:
        scores = (rms - lo) / (hi - lo)
    return IntensityTrack(scores, IntensitySource.HEURISTIC, features.utterance_id)


def ground_truth_track(features: FeatureSequence) -> IntensityTrack:
    return IntensityTrack(
        np.asarray(features.truth_frame_intensity, dtype=np.float64),
        IntensitySource.GROUND_TRUTH,
        features.utterance_id,
    )


class ScoreAligner(nn.Module):
    """Linear map from a scalar score to a d-dimensional embedding."""

    def __init__(self, dim: int, bias: bool = True, seed: int = 0):
        super().__init__()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.linear = nn.Linear(1, dim, bias=bias)

    @property
    def dim(self) -> int:
        return self.linear.out_features

    def forward(self, scores: torch.Tensor) -> torch.Tensor:
        return self.linear(scores.unsqueeze(-1))


def resample_scores(scores: np.ndarray, target_T: int) -> np.ndarray:
    """Linear resampling onto target_T points; identity when lengths match."""
    if target_T < 1:
        raise ConfigError("target_T must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == target_T:
        return scores.copy()
    if scores.size == 1:
        return np.full(target_T, scores[0])
    src = np.linspace(0.0, 1.0, scores.size)
    dst = np.linspace(0.0, 1.0, target_T)
    return np.interp(dst, src, scores)


def align_scores(
    track: IntensityTrack, aligner: ScoreAligner, target_T: int
) -> tuple[np.ndarray, torch.Tensor]:
    """Length-match a track and embed each scalar score as a d-vector."""
    scores = resample_scores(track.scores, target_T)
    dtype = next(aligner.parameters()).dtype
    embeddings = aligner(torch.from_numpy(scores).to(dtype))
    return scores, embeddings


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IntensityTrainConfig:
    epochs: int = 12
    batch_size: int = 8
    lr: float = 1e-3
    emotion_weight: float = 0.5
    seed: int = 0


EMOTION_TO_INDEX = {e: i for i, e in enumerate(EMOTIONS)}


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _forward_batch(
    model: IntensityExtractorModel, batch: Sequence[FeatureSequence]
) -> tuple[torch.Tensor | list, torch.Tensor, torch.Tensor]:
    """Stack equal-length batches; fall back to per-utterance passes."""
    dtype = next(model.parameters()).dtype
    lengths = {fs.T for fs in batch}
    if len(lengths) == 1:
        x = torch.from_numpy(np.stack([fs.frames for fs in batch])).to(dtype)
        return model(x)
    frame_scores, utt_scores, logits = [], [], []
    for fs in batch:
        x = torch.from_numpy(np.asarray(fs.frames)).to(dtype).unsqueeze(0)
        f, u, e = model(x)
        frame_scores.append(f.squeeze(0))
        utt_scores.append(u.squeeze(0))
        logits.append(e.squeeze(0))
    return frame_scores, torch.stack(utt_scores), torch.stack(logits)


def _balanced_l1(
    pred: torch.Tensor, target: torch.Tensor, pos_weight: float = 3.0
) -> torch.Tensor:
    """Per-frame L1 with positive-target frames upweighted.

    The burst envelope is zero on most frames, so the unweighted L1's
    best constant is zero and the head collapses before it learns to
    discriminate. Giving positive frames pos_weight times the total
    weight of zero frames moves the best-constant solution strictly
    inside (0, 1), where gradients stay alive. Weights depend only on
    the targets; the evaluation MAE stays unweighted.
    """
    err = (pred - target).abs()
    pos = target > 1e-6
    n_pos, n_zero = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_zero == 0:
        return err.mean()
    share_pos = pos_weight / (1.0 + pos_weight)
    weights = torch.where(
        pos,
        torch.full_like(target, share_pos / n_pos),
        torch.full_like(target, (1.0 - share_pos) / n_zero),
    )
    return (weights * err).sum()


def _batch_loss(
    model: IntensityExtractorModel,
    batch: Sequence[FeatureSequence],
    emotion_weight: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    dtype = next(model.parameters()).dtype
    frame_scores, _, logits = _forward_batch(model, batch)
    if isinstance(frame_scores, torch.Tensor):
        target = torch.from_numpy(
            np.stack([fs.truth_frame_intensity for fs in batch])
        ).to(dtype)
        mae = _balanced_l1(frame_scores, target)
    else:
        per = [
            _balanced_l1(
                f, torch.from_numpy(np.asarray(fs.truth_frame_intensity)).to(dtype)
            )
            for f, fs in zip(frame_scores, batch)
        ]
        mae = torch.stack(per).mean()
    labels = torch.tensor([EMOTION_TO_INDEX[fs.emotion_label] for fs in batch])
    ce = nn.functional.cross_entropy(logits, labels)
    return mae + emotion_weight * ce, mae, ce


def evaluate_intensity(
    model: IntensityExtractorModel, dataset: Sequence[FeatureSequence]
) -> tuple[float, float]:
    """(per-frame MAE vs ground truth, emotion accuracy) over a dataset."""
    model.eval()
    abs_err, n_frames, correct = 0.0, 0, 0
    for fs in dataset:
        track, dist = predict_intensity(model, fs)
        abs_err += float(np.abs(track.scores - fs.truth_frame_intensity).sum())
        n_frames += fs.T
        if int(np.argmax(dist)) == EMOTION_TO_INDEX[fs.emotion_label]:
            correct += 1
    return abs_err / max(1, n_frames), correct / max(1, len(dataset))


def train_intensity(
    model: IntensityExtractorModel,
    train_set: Sequence[FeatureSequence],
    dev_set: Sequence[FeatureSequence],
    config: IntensityTrainConfig | None = None,
    metrics_path: str | Path | None = None,
) -> tuple[IntensityExtractorModel, list[dict]]:
    """L1 frame-intensity regression plus emotion cross-entropy.

    Deterministic per seed; zero epochs is a no-op; a non-finite loss
    aborts with a diagnostic record.
    """
    config = config or IntensityTrainConfig()
    if config.epochs < 0:
        raise ConfigError("epochs must be >= 0")
    rng = np.random.default_rng(config.seed)
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
        metrics: list[dict] = []
        for epoch in range(config.epochs):
            model.train()
            epoch_loss, n_batches = 0.0, 0
            for batch_idx in _batches(len(train_set), config.batch_size, rng):
                batch = [train_set[i] for i in batch_idx]
                optimizer.zero_grad()
                loss, mae, ce = _batch_loss(model, batch, config.emotion_weight)
                if not torch.isfinite(loss):
                    raise DivergenceError(
                        "non-finite intensity training loss",
                        record={
                            "epoch": epoch,
                            "mae": float(mae),
                            "cross_entropy": float(ce),
                        },
                    )
                loss.backward()
                optimizer.step()
                epoch_loss += loss.detach().item()
                n_batches += 1
            dev_mae, dev_acc = evaluate_intensity(model, dev_set)
            record = {
                "epoch": epoch,
                "train_loss": epoch_loss / max(1, n_batches),
                "dev_mae": dev_mae,
                "dev_emotion_accuracy": dev_acc,
                "wall_s": time.time(),
            }
            metrics.append(record)
            if metrics_path is not None:
                with open(metrics_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, sort_keys=True) + "\n")
    return model, metrics


def intensity_loss_for_gradcheck(
    model: IntensityExtractorModel, batch: Sequence[FeatureSequence]
) -> torch.Tensor:
    """Scalar training loss exposed for finite-difference checks."""
    loss, _, _ = _batch_loss(model, batch, emotion_weight=0.5)
    return loss


def spearman_rank_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman rho between two vectors (delegates to scipy)."""
    from scipy.stats import spearmanr

    rho = spearmanr(a, b).statistic
    return float(rho) if math.isfinite(rho) else 0.0
