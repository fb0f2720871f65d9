"""Synthetic emotional corpus: generation, features, persistence, splits."""

from .features import FeatureConfig, FeatureSequence, extract_features, frame_count
from .store import read_corpus, split_corpus, write_corpus
from .synth import (
    EMOTIONS,
    EmotionProfile,
    GeneratorConfig,
    Utterance,
    synth_utterance,
)

__all__ = [
    "EMOTIONS",
    "EmotionProfile",
    "FeatureConfig",
    "FeatureSequence",
    "GeneratorConfig",
    "Utterance",
    "extract_features",
    "frame_count",
    "generate_corpus",
    "read_corpus",
    "split_corpus",
    "synth_utterance",
    "write_corpus",
]


def generate_corpus(
    per_emotion: int,
    duration: float,
    base_seed: int,
    gen_config: GeneratorConfig | None = None,
    feat_config: FeatureConfig | None = None,
    duration_jitter: float = 0.0,
) -> list[FeatureSequence]:
    """Generate a class-balanced feature corpus, deterministic per seed.

    Record ids encode emotion and per-utterance seed; durations get a
    deterministic per-utterance jitter when duration_jitter > 0.
    """
    import numpy as np

    out: list[FeatureSequence] = []
    rng = np.random.default_rng(base_seed)
    for i in range(per_emotion):
        for emotion in EMOTIONS:
            seed = int(rng.integers(0, 2**31 - 1))
            dur = duration
            if duration_jitter > 0:
                dur = duration + float(rng.uniform(-duration_jitter, duration_jitter))
            utt = synth_utterance(emotion, dur, seed, gen_config)
            utt.utterance_id = f"{emotion}-{i:04d}-{seed:010d}"
            out.append(extract_features(utt, feat_config))
    return out
