"""Pre-training: composite objective, input construction, loop, checkpoints.

The objective is the sum of a frame-score L1 term and a joint-input L1
term (plus the VQ penalty for the masked-convolution family). The
transformer family masks input frames with a plan and scores the loss on
masked frames only; the masked-convolution family masks inside its
kernel, consumes unmasked inputs, and scores all frames. Score targets
come from the frozen intensity source, never from ground truth.

Every run is a pure function of (corpus bytes, config, seed): batch
sampling and plan seeds are drawn from one numpy stream whose state is
checkpointed, so resuming reproduces the uninterrupted metrics exactly.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .corpus.features import FeatureSequence
from .errors import (
    ArchitectureMismatchError,
    ConfigError,
    DivergenceError,
    EmptyScopeError,
)
from .intensity import (
    IntensityExtractorModel,
    IntensityModelConfig,
    IntensitySource,
    IntensityTrack,
    ScoreAligner,
    ground_truth_track,
    heuristic_intensity,
    predict_intensity,
)
from .masking import MaskAction, MaskConfig, MaskPlan, ems_mask_plan, uniform_mask_plan
from .models.npc import NPCConfig, NPCEncoderModel, dynamic_kernel_position
from .models.transformer import TransformerConfig, TransformerEncoderModel

FAMILIES = ("transformer", "npc")
STRATEGIES = ("ems", "uniform")
INPUT_MODES = ("joint", "separate")
LOSS_SCOPES = ("masked_only", "all_frames")


@dataclass(frozen=True)
class LossBreakdown:
    """Components of one loss evaluation; total is their exact sum."""

    l_score: float
    l_joint_input: float
    l_vq: float = 0.0
    total: float = field(default=0.0)

    @classmethod
    def build(cls, l_score: float, l_joint_input: float, l_vq: float = 0.0) -> "LossBreakdown":
        return cls(l_score, l_joint_input, l_vq, l_score + l_joint_input + l_vq)

    def to_dict(self) -> dict:
        return {
            "l_score": self.l_score,
            "l_joint_input": self.l_joint_input,
            "l_vq": self.l_vq,
            "total": self.total,
        }


def make_joint_input(features, score_embeddings):
    """Element-wise sum of frames and aligned score embeddings."""
    if features.shape != score_embeddings.shape:
        raise ConfigError(
            f"shape mismatch: frames {tuple(features.shape)} vs "
            f"embeddings {tuple(score_embeddings.shape)}"
        )
    return features + score_embeddings


def make_separate_input(features, score_embeddings):
    """Feature-dimension concatenation [x_t || e(score_t)] of width 2d."""
    if features.shape[0] != score_embeddings.shape[0]:
        raise ConfigError(
            f"length mismatch: {features.shape[0]} frames vs "
            f"{score_embeddings.shape[0]} embeddings"
        )
    if isinstance(features, torch.Tensor):
        return torch.cat([features, score_embeddings], dim=-1)
    return np.concatenate([features, score_embeddings], axis=-1)


def apply_mask_plan_torch(combined: torch.Tensor, plan: MaskPlan) -> torch.Tensor:
    """Differentiable twin of masking.apply_mask_plan for model inputs."""
    if combined.shape[0] != plan.T:
        raise ConfigError(
            f"plan covers T={plan.T}, got tensor of shape {tuple(combined.shape)}"
        )
    out = combined.clone()
    zero_idx = [int(i) for i, a in zip(plan.indices, plan.actions) if a is MaskAction.ZERO]
    if zero_idx:
        out[zero_idx] = 0.0
    for idx, action, src in zip(plan.indices, plan.actions, plan.replacement_source):
        if action is MaskAction.REPLACE:
            out[int(idx)] = combined[int(src)]
    return out


def compute_losses(
    predictions: tuple[torch.Tensor, torch.Tensor],
    targets: tuple[torch.Tensor, torch.Tensor],
    plan: MaskPlan | None,
    family: str,
    loss_scope: str | None = None,
    vq_loss: torch.Tensor | float = 0.0,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Composite loss for one utterance.

    predictions = (score predictions (T,), joint predictions (T, d));
    targets = (joint target (T, d), score target (T,)). Returns the
    differentiable total plus a float breakdown.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown model family {family!r}")
    scope = loss_scope or default_loss_scope(family)
    if scope not in LOSS_SCOPES:
        raise ConfigError(f"unknown loss scope {scope!r}")
    score_pred, joint_pred = predictions
    joint_target, score_target = targets
    if scope == "masked_only":
        if plan is None or plan.indices.size == 0:
            raise EmptyScopeError("masked_only loss needs a plan with masked frames")
        sel = torch.as_tensor(plan.indices, dtype=torch.long)
        l_joint = (joint_pred[sel] - joint_target[sel]).abs().mean()
        l_score = (score_pred[sel] - score_target[sel]).abs().mean()
    else:
        l_joint = (joint_pred - joint_target).abs().mean()
        l_score = (score_pred - score_target).abs().mean()
    vq = vq_loss if isinstance(vq_loss, torch.Tensor) else torch.as_tensor(float(vq_loss))
    total = l_score + l_joint + vq.to(l_joint.dtype)
    breakdown = LossBreakdown.build(
        l_score.detach().item(), l_joint.detach().item(), vq.detach().item()
    )
    return total, breakdown


def default_loss_scope(family: str) -> str:
    return "masked_only" if family == "transformer" else "all_frames"


# ---------------------------------------------------------------------------
# Configuration and model bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    family: str = "transformer"
    strategy: str = "ems"
    input_mode: str = "joint"
    k_percent: float = 25.0
    span: int = 7
    action_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    intensity_source: str = "heuristic"
    intensity_checkpoint: str | None = None
    loss_scope: str | None = None
    steps: int = 2000
    batch_size: int = 8
    lr: float = 1e-3
    warmup_steps: int = 100
    seed: int = 0
    checkpoint_every: int = 0
    transformer: TransformerConfig = TransformerConfig()
    npc: NPCConfig = NPCConfig()

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"input_mode must be one of {INPUT_MODES}")
        if self.loss_scope is not None and self.loss_scope not in LOSS_SCOPES:
            raise ConfigError(f"loss_scope must be one of {LOSS_SCOPES}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.intensity_source not in [s.value for s in IntensitySource]:
            raise ConfigError(f"unknown intensity source {self.intensity_source!r}")
        MaskConfig(
            k_percent=self.k_percent,
            span=self.span,
            action_ratios=self.action_ratios,
        ).validate()

    @property
    def uses_intensity(self) -> bool:
        return self.strategy == "ems"

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["action_ratios"] = list(self.action_ratios)
        return out


def build_scorer(
    cfg: PretrainConfig,
) -> Callable[[FeatureSequence], IntensityTrack]:
    """Frozen per-utterance intensity source, memoized by utterance id."""
    source = IntensitySource(cfg.intensity_source)
    extractor: IntensityExtractorModel | None = None
    if source is IntensitySource.MODEL:
        if cfg.intensity_checkpoint is None:
            raise ConfigError("intensity_source=model needs intensity_checkpoint")
        header, blocks = ckpt.load_blocks(cfg.intensity_checkpoint)
        ckpt.expect_kind(header, ["intensity"])
        extractor = IntensityExtractorModel(IntensityModelConfig(**header["config"]))
        ckpt.blocks_to_module(extractor, blocks, "model")
        extractor.eval()
    cache: dict[str, IntensityTrack] = {}

    def scorer(fs: FeatureSequence) -> IntensityTrack:
        if fs.utterance_id and fs.utterance_id in cache:
            return cache[fs.utterance_id]
        if source is IntensitySource.HEURISTIC:
            track = heuristic_intensity(fs)
        elif source is IntensitySource.GROUND_TRUTH:
            track = ground_truth_track(fs)
        else:
            track, _ = predict_intensity(extractor, fs)
        if fs.utterance_id:
            cache[fs.utterance_id] = track
        return track

    return scorer


@dataclass
class PretrainState:
    """Everything the loop mutates; checkpointable as one unit."""

    cfg: PretrainConfig
    feature_dim: int
    encoder: torch.nn.Module
    aligner: ScoreAligner
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    scorer: Callable[[FeatureSequence], IntensityTrack]
    step: int = 0
    strategy_transitions: list = field(default_factory=list)


def encoder_input_dim(cfg: PretrainConfig, feature_dim: int) -> int:
    return 2 * feature_dim if cfg.input_mode == "separate" else feature_dim


def build_state(cfg: PretrainConfig, feature_dim: int) -> PretrainState:
    cfg.validate()
    in_dim = encoder_input_dim(cfg, feature_dim)
    if cfg.family == "transformer":
        enc_cfg = dataclasses.replace(
            cfg.transformer, input_dim=in_dim, target_dim=feature_dim, seed=cfg.seed
        )
        encoder: torch.nn.Module = TransformerEncoderModel(enc_cfg)
    else:
        enc_cfg = dataclasses.replace(
            cfg.npc, input_dim=in_dim, target_dim=feature_dim, seed=cfg.seed
        )
        encoder = NPCEncoderModel(enc_cfg)
    aligner = ScoreAligner(feature_dim, seed=cfg.seed + 1)
    params = list(encoder.parameters()) + list(aligner.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.lr)
    return PretrainState(
        cfg=cfg,
        feature_dim=feature_dim,
        encoder=encoder,
        aligner=aligner,
        optimizer=optimizer,
        rng=np.random.default_rng(cfg.seed),
        scorer=build_scorer(cfg),
    )


@dataclass
class PreparedExample:
    model_input: torch.Tensor
    joint_target: torch.Tensor
    score_target: torch.Tensor
    plan: MaskPlan | None
    kernel_position: int | None


def prepare_example(
    state: PretrainState, fs: FeatureSequence, plan_seed: int
) -> PreparedExample:
    """Score, align, mask, and assemble one utterance's tensors."""
    cfg = state.cfg
    x = torch.from_numpy(np.asarray(fs.frames, dtype=np.float32))
    T = fs.T
    if cfg.uses_intensity:
        track = state.scorer(fs)
        scores = np.asarray(track.scores, dtype=np.float64)
        embeddings = state.aligner(torch.from_numpy(scores.astype(np.float32)))
        score_target = torch.from_numpy(scores.astype(np.float32))
    else:
        scores = None
        embeddings = torch.zeros(T, state.feature_dim)
        score_target = torch.zeros(T)

    if cfg.input_mode == "joint":
        combined = make_joint_input(x, embeddings)
    else:
        combined = make_separate_input(x, embeddings)
    joint_target = make_joint_input(x, embeddings).detach()

    plan: MaskPlan | None = None
    kernel_position: int | None = None
    if cfg.family == "transformer":
        if cfg.strategy == "ems":
            plan = ems_mask_plan(
                scores,
                MaskConfig(
                    k_percent=cfg.k_percent,
                    span=cfg.span,
                    action_ratios=cfg.action_ratios,
                    seed=plan_seed,
                ),
            )
        else:
            plan = uniform_mask_plan(
                T, cfg.k_percent, cfg.span, plan_seed, cfg.action_ratios
            )
        model_input = apply_mask_plan_torch(combined, plan)
    else:
        model_input = combined
        if cfg.strategy == "ems":
            kernel_position = dynamic_kernel_position(state.encoder, scores)

    return PreparedExample(
        model_input=model_input,
        joint_target=joint_target,
        score_target=score_target,
        plan=plan,
        kernel_position=kernel_position,
    )


def _scoped_terms(
    example: PreparedExample,
    score_pred: torch.Tensor,
    joint_pred: torch.Tensor,
    scope: str,
) -> tuple[torch.Tensor, torch.Tensor, int, int]:
    """(sum |joint err|, sum |score err|, joint count, score count)."""
    if scope == "masked_only":
        plan = example.plan
        if plan is None or plan.indices.size == 0:
            raise EmptyScopeError("masked_only loss needs a plan with masked frames")
        sel = torch.as_tensor(plan.indices, dtype=torch.long)
        joint_err = (joint_pred[sel] - example.joint_target[sel]).abs()
        score_err = (score_pred[sel] - example.score_target[sel]).abs()
    else:
        joint_err = (joint_pred - example.joint_target).abs()
        score_err = (score_pred - example.score_target).abs()
    return joint_err.sum(), score_err.sum(), joint_err.numel(), score_err.numel()


def pretrain_step(
    state: PretrainState, batch: Sequence[FeatureSequence]
) -> LossBreakdown:
    """One optimization step over a batch of utterances.

    The loss pools the per-frame L1 terms over every in-scope element of
    the batch. Raises DivergenceError on a non-finite loss.
    """
    cfg = state.cfg
    scope = cfg.loss_scope or default_loss_scope(cfg.family)
    state.encoder.train()
    plan_seeds = [int(state.rng.integers(0, 2**63 - 1)) for _ in batch]
    examples = [
        prepare_example(state, fs, seed) for fs, seed in zip(batch, plan_seeds)
    ]

    joint_sum = torch.zeros(())
    score_sum = torch.zeros(())
    vq_sum = torch.zeros(())
    joint_n = score_n = 0
    lengths = {ex.model_input.shape[0] for ex in examples}
    stackable = (
        len(lengths) == 1
        and cfg.family == "transformer"
    )
    if stackable:
        stacked = torch.stack([ex.model_input for ex in examples])
        _, score_preds, joint_preds = state.encoder(stacked)
        for i, ex in enumerate(examples):
            js, ss, jn, sn = _scoped_terms(ex, score_preds[i], joint_preds[i], scope)
            joint_sum, score_sum = joint_sum + js, score_sum + ss
            joint_n, score_n = joint_n + jn, score_n + sn
    else:
        for ex in examples:
            xin = ex.model_input.unsqueeze(0)
            if cfg.family == "transformer":
                _, score_pred, joint_pred = state.encoder(xin)
                vq = torch.zeros(())
            else:
                _, score_pred, joint_pred, vq = state.encoder(xin, ex.kernel_position)
            js, ss, jn, sn = _scoped_terms(
                ex, score_pred.squeeze(0), joint_pred.squeeze(0), scope
            )
            joint_sum, score_sum = joint_sum + js, score_sum + ss
            joint_n, score_n = joint_n + jn, score_n + sn
            vq_sum = vq_sum + vq

    l_joint = joint_sum / max(1, joint_n)
    l_score = score_sum / max(1, score_n)
    l_vq = vq_sum / len(examples) if cfg.family == "npc" else torch.zeros(())
    total = l_score + l_joint + l_vq
    if not torch.isfinite(total):
        raise DivergenceError(
            "non-finite pre-training loss",
            record={
                "step": state.step + 1,
                "l_score": l_score.detach().item(),
                "l_joint_input": l_joint.detach().item(),
                "l_vq": l_vq.detach().item(),
            },
        )

    lr_scale = min(1.0, (state.step + 1) / max(1, cfg.warmup_steps))
    for group in state.optimizer.param_groups:
        group["lr"] = cfg.lr * lr_scale
    state.optimizer.zero_grad()
    total.backward()
    state.optimizer.step()
    state.step += 1
    return LossBreakdown.build(
        l_score.detach().item(), l_joint.detach().item(), l_vq.detach().item()
    )


# ---------------------------------------------------------------------------
# Checkpoint plumbing
# ---------------------------------------------------------------------------


def _optimizer_blocks(optimizer: torch.optim.Optimizer) -> tuple[dict, dict]:
    blocks: dict[str, np.ndarray] = {}
    steps: dict[str, float] = {}
    sd = optimizer.state_dict()
    for idx, entry in sd["state"].items():
        for key, value in entry.items():
            if isinstance(value, torch.Tensor) and value.ndim > 0:
                blocks[f"optim.{idx}.{key}"] = value.detach().cpu().numpy()
            else:
                steps[f"{idx}.{key}"] = float(value)
    return blocks, steps


def _restore_optimizer(
    optimizer: torch.optim.Optimizer, blocks: dict, steps: dict
) -> None:
    sd = optimizer.state_dict()
    state: dict = {}
    n_params = sum(len(g["params"]) for g in sd["param_groups"])
    for idx in range(n_params):
        entry = {}
        for key, value in steps.items():
            pid, name = key.split(".", 1)
            if int(pid) == idx:
                entry[name] = torch.tensor(value)
        for name in ("exp_avg", "exp_avg_sq"):
            bkey = f"optim.{idx}.{name}"
            if bkey in blocks:
                entry[name] = torch.from_numpy(np.ascontiguousarray(blocks[bkey]))
        if entry:
            state[idx] = entry
    sd["state"] = state
    optimizer.load_state_dict(sd)


def save_pretrain_checkpoint(path: str | Path, state: PretrainState) -> None:
    cfg = state.cfg
    arch = cfg.to_dict()
    header = {
        "kind": "pretrain",
        "version": 1,
        "family": cfg.family,
        "config": arch,
        "arch_hash": ckpt.config_hash(arch),
        "seed": cfg.seed,
        "step": state.step,
        "strategy": cfg.strategy,
        "feature_dim": state.feature_dim,
        "numpy_rng": state.rng.bit_generator.state,
        "strategy_transitions": state.strategy_transitions,
    }
    blocks = ckpt.module_to_blocks(state.encoder, "encoder")
    blocks.update(ckpt.module_to_blocks(state.aligner, "aligner"))
    opt_blocks, opt_steps = _optimizer_blocks(state.optimizer)
    blocks.update(opt_blocks)
    header["optim_steps"] = opt_steps
    blocks["rng.torch"] = torch.get_rng_state().numpy()
    ckpt.save_blocks(path, header, blocks)


def load_pretrain_checkpoint(
    path: str | Path, expected_cfg: PretrainConfig | None = None
) -> tuple[PretrainState, dict]:
    """Rebuild a full training state; verifies architecture when expected."""
    header, blocks = ckpt.load_blocks(path)
    ckpt.expect_kind(header, ["pretrain"])
    raw = dict(header["config"])
    raw["action_ratios"] = tuple(raw["action_ratios"])
    raw["transformer"] = TransformerConfig(**raw["transformer"])
    raw["npc"] = NPCConfig(**raw["npc"])
    cfg = PretrainConfig(**raw)
    if expected_cfg is not None:
        want = dataclasses.replace(
            expected_cfg, steps=cfg.steps, checkpoint_every=cfg.checkpoint_every
        )
        if want.to_dict() != cfg.to_dict():
            raise ArchitectureMismatchError(
                "checkpoint config does not match the requested configuration"
            )
    state = build_state(cfg, header["feature_dim"])
    ckpt.blocks_to_module(state.encoder, blocks, "encoder")
    ckpt.blocks_to_module(state.aligner, blocks, "aligner")
    _restore_optimizer(state.optimizer, blocks, header.get("optim_steps", {}))
    state.step = header["step"]
    state.strategy_transitions = header.get("strategy_transitions", [])
    state.rng = np.random.default_rng()
    state.rng.bit_generator.state = header["numpy_rng"]
    if "rng.torch" in blocks:
        torch.set_rng_state(torch.from_numpy(blocks["rng.torch"].copy()))
    return state, header


# ---------------------------------------------------------------------------
# Full runs
# ---------------------------------------------------------------------------


def pretrain(
    corpus: Sequence[FeatureSequence],
    cfg: PretrainConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    warm_start_from: str | Path | None = None,
) -> tuple[Path, list[dict]]:
    """Run pre-training; returns (final checkpoint path, metrics records).

    resume_from restores the exact training state (parameters, optimizer,
    RNG, step) and continues; warm_start_from loads only model parameters
    and the step counter from a base run, recording the strategy
    transition.
    """
    cfg.validate()
    if not corpus:
        raise ConfigError("empty corpus")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    feature_dim = corpus[0].d
    if any(fs.d != feature_dim for fs in corpus):
        raise ConfigError("corpus mixes feature dimensions")

    if resume_from is not None:
        state, _ = load_pretrain_checkpoint(resume_from, expected_cfg=cfg)
    else:
        state = build_state(cfg, feature_dim)
        if warm_start_from is not None:
            base_header, base_blocks = ckpt.load_blocks(warm_start_from)
            ckpt.expect_kind(base_header, ["pretrain"])
            if base_header["config"]["family"] != cfg.family:
                raise ArchitectureMismatchError(
                    f"warm start across families: checkpoint is "
                    f"{base_header['config']['family']!r}, config wants {cfg.family!r}"
                )
            ckpt.blocks_to_module(state.encoder, base_blocks, "encoder")
            ckpt.blocks_to_module(state.aligner, base_blocks, "aligner")
            state.step = base_header["step"]
            if base_header.get("strategy") != cfg.strategy:
                state.strategy_transitions = base_header.get(
                    "strategy_transitions", []
                ) + [
                    {
                        "step": state.step + 1,
                        "from": base_header.get("strategy"),
                        "to": cfg.strategy,
                    }
                ]

    metrics_path = out / "metrics.jsonl"
    metrics: list[dict] = []
    mode = "a" if resume_from is not None else "w"
    with open(metrics_path, mode, encoding="utf-8") as fh:
        while state.step < cfg.steps:
            t0 = time.perf_counter()
            idx = state.rng.choice(
                len(corpus), size=min(cfg.batch_size, len(corpus)), replace=False
            )
            batch = [corpus[int(i)] for i in idx]
            try:
                breakdown = pretrain_step(state, batch)
            except DivergenceError as exc:
                fh.write(json.dumps({"event": "divergence", **exc.record}) + "\n")
                raise
            record = {
                "step": state.step,
                **breakdown.to_dict(),
                "strategy": cfg.strategy,
                "wall_ms": 1000.0 * (time.perf_counter() - t0),
            }
            metrics.append(record)
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_pretrain_checkpoint(out / f"ckpt-step{state.step}.emsc", state)

    final_path = out / "checkpoint.emsc"
    save_pretrain_checkpoint(final_path, state)
    return final_path, metrics
