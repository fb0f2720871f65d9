"""Strict TOML configuration: known sections, unknown keys rejected.

One config file drives every subcommand. Each section maps onto a frozen
dataclass; nested tables map onto nested dataclasses. Any key that does
not correspond to a field is an error, as is a section this package does
not know about: silent typos in sweep configs are the main operational
hazard this guards against.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .corpus.features import FeatureConfig
from .corpus.synth import GeneratorConfig
from .errors import ConfigError
from .intensity import IntensityModelConfig, IntensityTrainConfig
from .probes import CompareConfig, ProbeConfig
from .training import PretrainConfig


@dataclass(frozen=True)
class CorpusSection:
    per_emotion: int = 25
    duration: float = 1.28
    duration_jitter: float = 0.0
    base_seed: int = 11
    generator: GeneratorConfig = GeneratorConfig()
    features: FeatureConfig = FeatureConfig()


@dataclass(frozen=True)
class IntensitySection:
    corpus: str = ""
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    split_seed: int = 5
    model: IntensityModelConfig = IntensityModelConfig()
    train: IntensityTrainConfig = IntensityTrainConfig()


@dataclass(frozen=True)
class PretrainSection:
    corpus: str = ""
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    split_seed: int = 5
    warm_start_from: str | None = None
    resume_from: str | None = None
    run: PretrainConfig = PretrainConfig()


@dataclass(frozen=True)
class ProbeSection:
    corpus: str = ""
    checkpoint: str = ""
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    split_seed: int = 5
    run_frame_probe: bool = True
    probe: ProbeConfig = ProbeConfig()


@dataclass(frozen=True)
class CompareSection:
    corpus: str = ""
    split: tuple[float, float, float] = (0.7, 0.15, 0.15)
    split_seed: int = 5
    compare: CompareConfig = CompareConfig()


@dataclass(frozen=True)
class PlotSection:
    metrics: tuple[str, ...] = ()
    report: str | None = None


SECTION_TYPES = {
    "corpus": CorpusSection,
    "intensity": IntensitySection,
    "pretrain": PretrainSection,
    "probe": ProbeSection,
    "compare": CompareSection,
    "plot": PlotSection,
}


def _convert(value, target, path: str):
    origin = typing.get_origin(target)
    if dataclasses.is_dataclass(target):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table")
        return from_mapping(target, value, path)
    if origin in (types.UnionType, typing.Union):
        args = [a for a in typing.get_args(target) if a is not type(None)]
        if value is None:
            return None
        return _convert(value, args[0], path)
    if origin is tuple:
        args = typing.get_args(target)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected an array")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{path}: expected exactly {len(args)} entries")
        return tuple(
            _convert(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args))
        )
    if origin is dict:
        key_t, val_t = typing.get_args(target)
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table")
        return {
            _convert(k, key_t, path): _convert(v, val_t, f"{path}.{k}")
            for k, v in value.items()
        }
    if target is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if target is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if target is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if target is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported config value {value!r}")


def from_mapping(cls, mapping: dict, path: str = ""):
    """Instantiate a dataclass from a mapping; unknown keys are errors."""
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - set(known))
    if unknown:
        where = path or cls.__name__
        raise ConfigError(f"{where}: unknown key(s) {unknown}; known: {sorted(known)}")
    kwargs = {
        key: _convert(value, known[key], f"{path}.{key}" if path else key)
        for key, value in mapping.items()
    }
    return cls(**kwargs)


def load_config(path: str | Path) -> dict:
    """Parse a TOML config file; reject unknown top-level sections."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    unknown = sorted(set(raw) - set(SECTION_TYPES))
    if unknown:
        raise ConfigError(
            f"unknown section(s) {unknown}; known: {sorted(SECTION_TYPES)}"
        )
    return raw


def load_section(path: str | Path, section: str):
    raw = load_config(path)
    if section not in SECTION_TYPES:
        raise ConfigError(f"unknown section {section!r}")
    if section not in raw:
        raise ConfigError(f"config {path} has no [{section}] section")
    return from_mapping(SECTION_TYPES[section], raw[section], section)


def resolved_snapshot(section_obj) -> dict:
    """JSON-ready dump of a fully resolved section (defaults included)."""

    def clean(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {
                f.name: clean(getattr(value, f.name))
                for f in dataclasses.fields(value)
            }
        if isinstance(value, (list, tuple)):
            return [clean(v) for v in value]
        if isinstance(value, dict):
            return {k: clean(v) for k, v in value.items()}
        return value

    return clean(section_obj)


def write_snapshot(section_obj, out_path: str | Path) -> dict:
    snap = resolved_snapshot(section_obj)
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(snap, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return snap
