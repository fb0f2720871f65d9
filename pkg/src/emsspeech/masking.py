"""Frame masking strategies and masked-convolution kernel masks.

Two families live here. Frame plans select which acoustic frames get
masked: either the frames with the top-k% intensity scores (the
emotion-guided strategy) or uniformly random positions (the baseline),
both run through the same consecutive-span budgeting and the same
zero / replace / keep sub-random process. Kernel masks govern the
masked-convolution encoder: a static binary matrix that blanks the
center of the kernel, optionally combined with one dynamically chosen
kernel row zeroed where average intensity peaks.

Every operation is pure and deterministic given its seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, MaskingError


class MaskAction(str, Enum):
    ZERO = "zero"
    REPLACE = "replace"
    KEEP = "keep"


@dataclass(frozen=True)
class MaskConfig:
    """Parameters of a frame mask plan.

    action_ratios are the (zero, replace, keep) probabilities of the
    sub-random process; they must sum to 1.
    """

    k_percent: float = 15.0
    span: int = 7
    action_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    tie_rule: str = "lower_index_first"
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.k_percent < 100.0:
            raise ConfigError(f"k_percent must be in (0, 100), got {self.k_percent}")
        if self.span < 1:
            raise ConfigError("span must be >= 1")
        if any(r < 0 for r in self.action_ratios):
            raise ConfigError("action_ratios must be non-negative")
        if abs(sum(self.action_ratios) - 1.0) > 1e-9:
            raise ConfigError("action_ratios must sum to 1")
        if self.tie_rule != "lower_index_first":
            raise ConfigError(f"unknown tie_rule {self.tie_rule!r}")


@dataclass
class MaskPlan:
    """The exact set of masked frames with per-frame actions.

    indices are ascending; actions align with indices; replacement_source
    is -1 except where the action is REPLACE.
    """

    T: int
    indices: np.ndarray
    actions: list[MaskAction]
    replacement_source: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        if len(self.actions) != len(self.indices):
            raise ValueError("one action per masked index required")
        if self.replacement_source.shape != self.indices.shape:
            raise ValueError("one replacement source slot per masked index required")
        if self.indices.size and (
            self.indices.min() < 0 or self.indices.max() >= self.T
        ):
            raise ValueError("masked indices out of range")

    @property
    def masked(self) -> np.ndarray:
        out = np.zeros(self.T, dtype=bool)
        out[self.indices] = True
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "T": self.T,
                "indices": [int(i) for i in self.indices],
                "actions": [a.value for a in self.actions],
                "replacement_source": [int(s) for s in self.replacement_source],
                "seed": self.seed,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "MaskPlan":
        obj = json.loads(text)
        return cls(
            T=int(obj["T"]),
            indices=np.asarray(obj["indices"], dtype=np.int64),
            actions=[MaskAction(a) for a in obj["actions"]],
            replacement_source=np.asarray(obj["replacement_source"], dtype=np.int64),
            seed=int(obj["seed"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MaskPlan":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _as_scores(scores) -> np.ndarray:
    arr = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ConfigError("scores must be a non-empty 1-D vector")
    return arr


def mask_budget(k_percent: float, T: int) -> int:
    """max(1, round(k% of T)), rounding halves up."""
    if not 0.0 < k_percent < 100.0:
        raise ConfigError(f"k_percent must be in (0, 100), got {k_percent}")
    return max(1, math.floor(k_percent * T / 100.0 + 0.5))


def rank_by_score(scores) -> np.ndarray:
    """All indices in descending score order; ties keep the lower index first."""
    arr = _as_scores(scores)
    return np.argsort(-arr, kind="stable")


def select_topk_frames(scores, k_percent: float) -> np.ndarray:
    """Indices of the top-k% frames by score, ascending.

    Exactly mask_budget(k_percent, T) indices come back; every selected
    score is >= every excluded score, with ties broken toward lower
    indices.
    """
    ranked = rank_by_score(scores)
    budget = mask_budget(k_percent, ranked.size)
    return np.sort(ranked[:budget])


def extend_consecutive(
    seed_indices: Sequence[int] | np.ndarray, span: int, T: int, budget: int
) -> np.ndarray:
    """Grow each seed rightward into a span-length run, staying within budget.

    Seeds must arrive in priority order (descending score). Runs are
    clipped at T; consumption stops at the first run whose union with the
    accepted set would exceed the budget. With span = 1 the output equals
    the input set.
    """
    if span < 1:
        raise ConfigError("span must be >= 1")
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    chosen = np.zeros(T, dtype=bool)
    size = 0
    for s in seed_indices:
        s = int(s)
        if s < 0 or s >= T:
            raise ConfigError(f"seed index {s} out of range [0, {T})")
        run = slice(s, min(s + span, T))
        gain = int(np.count_nonzero(~chosen[run]))
        if size + gain > budget:
            break
        chosen[run] = True
        size += gain
    return np.flatnonzero(chosen)


def assign_actions(
    mask_set: Sequence[int] | np.ndarray,
    T: int,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> MaskPlan:
    """Draw an independent zero/replace/keep action per masked index.

    Replacement sources are uniform over the unmasked positions; if every
    position is masked the source pool falls back to all indices.
    """
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"invalid action ratios {ratios}")
    indices = np.sort(np.asarray(list(mask_set), dtype=np.int64))
    rng = np.random.default_rng(seed)
    cuts = np.cumsum(ratios)
    draws = rng.random(indices.size)
    actions: list[MaskAction] = []
    for u in draws:
        if u < cuts[0]:
            actions.append(MaskAction.ZERO)
        elif u < cuts[1]:
            actions.append(MaskAction.REPLACE)
        else:
            actions.append(MaskAction.KEEP)
    masked = np.zeros(T, dtype=bool)
    masked[indices] = True
    pool = np.flatnonzero(~masked)
    if pool.size == 0:
        pool = np.arange(T)
    sources = np.full(indices.size, -1, dtype=np.int64)
    for i, action in enumerate(actions):
        if action is MaskAction.REPLACE:
            sources[i] = pool[rng.integers(pool.size)]
    return MaskPlan(
        T=T, indices=indices, actions=actions, replacement_source=sources, seed=seed
    )


def apply_mask_plan(frames: np.ndarray, plan: MaskPlan) -> np.ndarray:
    """Apply a plan to a T x d matrix; the input is never mutated."""
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[0] != plan.T:
        raise ConfigError(
            f"plan covers T={plan.T} frames, got matrix of shape {frames.shape}"
        )
    out = frames.copy()
    for idx, action, src in zip(plan.indices, plan.actions, plan.replacement_source):
        if action is MaskAction.ZERO:
            out[idx] = 0.0
        elif action is MaskAction.REPLACE:
            out[idx] = frames[src]
    return out


def _derive_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def ems_mask_plan(scores, config: MaskConfig) -> MaskPlan:
    """Intensity-guided plan: top-k% seeds plus consecutive-span growth.

    Seeds are all frames ranked by descending score; span is clamped to
    the budget so a plan is never empty.
    """
    config.validate()
    arr = _as_scores(scores)
    T = arr.size
    budget = mask_budget(config.k_percent, T)
    ranked = rank_by_score(arr)
    span = min(config.span, budget)
    indices = extend_consecutive(ranked, span, T, budget)
    rng = np.random.default_rng(config.seed)
    return assign_actions(indices, T, config.action_ratios, seed=_derive_seed(rng))


def uniform_mask_plan(
    T: int,
    p_percent: float,
    span: int = 1,
    seed: int = 0,
    action_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> MaskPlan:
    """Baseline plan: random seed positions, same budget/span/action path."""
    if T < 1:
        raise ConfigError("T must be >= 1")
    if span < 1:
        raise ConfigError("span must be >= 1")
    budget = mask_budget(p_percent, T)
    rng = np.random.default_rng(seed)
    ranked = rng.permutation(T)
    indices = extend_consecutive(ranked, min(span, budget), T, budget)
    return assign_actions(indices, T, action_ratios, seed=_derive_seed(rng))


# ---------------------------------------------------------------------------
# Masked-convolution kernel masks
# ---------------------------------------------------------------------------


@dataclass
class KernelMaskSpec:
    """Static kernel mask plus the optional dynamic zeroed position."""

    kernel_size: int
    center_gap: int
    D: np.ndarray
    stride: int
    ems_zero_position: int | None = field(default=None)

    def effective(self) -> np.ndarray:
        if self.ems_zero_position is None:
            return self.D
        return combine_kernel_masks(self.D, self.ems_zero_position)


def kept_kernel_rows(k: int, m: int) -> np.ndarray:
    """1-indexed kept rows: i <= k/2 - m or i >= k/2 + m (integer-exact)."""
    rows = np.arange(1, k + 1)
    return rows[(2 * rows <= k - 2 * m) | (2 * rows >= k + 2 * m)]


def build_kernel_mask(k: int, m: int, d: int) -> np.ndarray:
    """Binary k x d mask blanking the kernel center; rejects all-zero masks."""
    if k < 3 or k % 2 == 0:
        raise ConfigError(f"kernel size must be an odd integer >= 3, got {k}")
    if m < 1:
        raise ConfigError(f"center gap m must be >= 1, got {m}")
    if d < 1:
        raise ConfigError(f"channel count d must be >= 1, got {d}")
    kept = kept_kernel_rows(k, m)
    if kept.size == 0:
        raise MaskingError(f"kernel mask (k={k}, m={m}) zeroes every row")
    D = np.zeros((k, d), dtype=np.int8)
    D[kept - 1, :] = 1
    return D


def mask_size_to_center_gap(mask_size: int) -> int:
    """Map a nominal zeroed-center width to m (the formula zeroes 2m rows)."""
    if mask_size < 1:
        raise ConfigError("mask_size must be >= 1")
    return (mask_size + 1) // 2


def ems_kernel_position(scores, k: int, stride: int | None = None) -> int:
    """1-indexed kernel position with the highest average intensity.

    Windows of width k advance by stride (default k, non-overlapping);
    only complete windows count; ties go to the lower position.
    """
    arr = _as_scores(scores)
    T = arr.size
    if T < k:
        raise ConfigError(f"need T >= k, got T={T}, k={k}")
    stride = k if stride is None else stride
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    starts = np.arange(0, T - k + 1, stride)
    windows = arr[starts[:, None] + np.arange(k)[None, :]]
    averages = windows.mean(axis=0)
    return int(np.argmax(averages)) + 1


def combine_kernel_masks(D: np.ndarray, ems_position: int) -> np.ndarray:
    """D with the dynamic row forced to zero; rejects all-zero results."""
    D = np.asarray(D)
    k = D.shape[0]
    if not 1 <= ems_position <= k:
        raise ConfigError(f"ems position must be in [1, {k}], got {ems_position}")
    out = D.copy()
    out[ems_position - 1, :] = 0
    if not out.any():
        raise MaskingError(
            f"zeroing kernel position {ems_position} leaves an all-zero mask"
        )
    return out
