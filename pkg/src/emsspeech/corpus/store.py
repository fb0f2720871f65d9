"""Corpus persistence and splitting.

On-disk layout: ``manifest.json`` plus one ``records/<id>.feat`` binary
per record. A .feat file is magic ``EMSF``, u32 version, u32 T, u32 d,
then T*d little-endian f32 frames (row-major), then T f32 intensity
values. Frame-level unit labels and all other metadata live in the
manifest, keeping the binary layout fixed.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from ..errors import CorpusError, SplitError
from .features import FeatureSequence
from .synth import EMOTIONS

MAGIC = b"EMSF"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
RECORDS_DIR = "records"


def _record_path(root: Path, utterance_id: str) -> Path:
    return root / RECORDS_DIR / f"{utterance_id}.feat"


def write_record(path: Path, fs: FeatureSequence) -> None:
    frames = np.ascontiguousarray(fs.frames, dtype="<f4")
    intensity = np.ascontiguousarray(fs.truth_frame_intensity, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, fs.T, fs.d))
        fh.write(frames.tobytes())
        fh.write(intensity.tobytes())


def read_record(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Read one .feat file; returns (frames, intensity)."""
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorpusError(f"cannot read record file {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CorpusError(f"bad magic in record file {path}")
    version, T, d = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise CorpusError(f"unsupported record version {version} in {path}")
    expected = 16 + 4 * T * d + 4 * T
    if len(raw) != expected:
        raise CorpusError(
            f"record file {path} has {len(raw)} bytes, expected {expected}"
        )
    frames = np.frombuffer(raw, dtype="<f4", count=T * d, offset=16).reshape(T, d)
    intensity = np.frombuffer(raw, dtype="<f4", count=T, offset=16 + 4 * T * d)
    return frames.copy(), intensity.copy()


def write_corpus(features: list[FeatureSequence], path: str | Path) -> dict:
    """Write every record plus a manifest; returns the manifest dict."""
    root = Path(path)
    (root / RECORDS_DIR).mkdir(parents=True, exist_ok=True)
    records = []
    seen: set[str] = set()
    for fs in features:
        if not fs.utterance_id:
            raise CorpusError("cannot write a record without an utterance_id")
        if fs.utterance_id in seen:
            raise CorpusError(f"duplicate utterance_id {fs.utterance_id!r}")
        seen.add(fs.utterance_id)
        write_record(_record_path(root, fs.utterance_id), fs)
        rec = {
            "id": fs.utterance_id,
            "label": fs.emotion_label,
            "T": fs.T,
            "d": fs.d,
            "frame_rate": fs.frame_rate,
            "file": f"{RECORDS_DIR}/{fs.utterance_id}.feat",
        }
        if fs.unit_labels is not None:
            rec["unit_labels"] = [int(u) for u in fs.unit_labels]
        records.append(rec)
    manifest = {"version": FORMAT_VERSION, "records": records}
    with open(root / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def read_corpus(path: str | Path) -> list[FeatureSequence]:
    """Load a corpus directory; validates every record against the manifest."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise CorpusError(f"no manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"corrupt manifest {manifest_path}: {exc}") from exc
    out: list[FeatureSequence] = []
    for rec in manifest.get("records", []):
        rid = rec["id"]
        rec_path = root / rec["file"]
        if not rec_path.is_file():
            raise CorpusError(f"corpus record {rid!r} is missing ({rec_path})")
        frames, intensity = read_record(rec_path)
        if frames.shape != (rec["T"], rec["d"]):
            raise CorpusError(
                f"record {rid!r} has shape {frames.shape}, "
                f"manifest says ({rec['T']}, {rec['d']})"
            )
        units = rec.get("unit_labels")
        out.append(
            FeatureSequence(
                frames=frames,
                frame_rate=float(rec["frame_rate"]),
                truth_frame_intensity=intensity,
                emotion_label=rec["label"],
                utterance_id=rid,
                unit_labels=None if units is None else np.asarray(units, dtype=np.int32),
            )
        )
    return out


def _largest_remainder(total: int, ratios: tuple[float, ...]) -> list[int]:
    quotas = [r * total for r in ratios]
    floors = [math.floor(q) for q in quotas]
    short = total - sum(floors)
    order = sorted(
        range(len(ratios)), key=lambda i: (-(quotas[i] - floors[i]), i)
    )
    for i in order[:short]:
        floors[i] += 1
    return floors


def split_corpus(
    dataset: list[FeatureSequence],
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[list[FeatureSequence], list[FeatureSequence], list[FeatureSequence]]:
    """Stratified (train, dev, test) partition, deterministic per seed.

    Global split sizes follow the ratios via largest-remainder rounding;
    per-emotion counts stay within one record of the class quota. A split
    receiving zero records of any present class is an error.
    """
    if len(ratios) != 3:
        raise SplitError("exactly three ratios required")
    if any(r <= 0 for r in ratios):
        raise SplitError(f"all ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {sum(ratios)}")

    rng = np.random.default_rng(seed)
    by_class: dict[str, list[FeatureSequence]] = {}
    for fs in dataset:
        by_class.setdefault(fs.emotion_label, []).append(fs)
    classes = [e for e in EMOTIONS if e in by_class]

    targets = _largest_remainder(len(dataset), tuple(ratios))
    placed = [0, 0, 0]
    splits: tuple[list[FeatureSequence], ...] = ([], [], [])
    for cls in classes:
        group = sorted(by_class[cls], key=lambda fs: fs.utterance_id)
        perm = rng.permutation(len(group))
        group = [group[i] for i in perm]
        quotas = [r * len(group) for r in ratios]
        counts = [math.floor(q) for q in quotas]
        leftover = len(group) - sum(counts)
        # Each leftover record goes to a distinct split, preferring the
        # largest fractional class quota and breaking ties toward the
        # split furthest below its global target; class counts stay
        # within one record of the class quota.
        remainders = [quotas[s] - counts[s] for s in range(3)]
        shortfalls = [targets[s] - placed[s] - counts[s] for s in range(3)]
        order = sorted(range(3), key=lambda s: (-remainders[s], -shortfalls[s], s))
        for s in order[:leftover]:
            counts[s] += 1
        pos = 0
        for s in range(3):
            splits[s].extend(group[pos : pos + counts[s]])
            placed[s] += counts[s]
            pos += counts[s]
        for s in range(3):
            if counts[s] == 0:
                raise SplitError(
                    f"split {('train', 'dev', 'test')[s]} would receive zero "
                    f"records of class {cls!r}"
                )
    return splits
