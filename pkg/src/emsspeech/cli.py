"""Command-line entry point for the full pipeline.

Subcommands: corpus, intensity, pretrain, probe, compare, plot. Every run
writes a resolved-config snapshot into its output directory before doing
any work, and a run.json summary on success. Exit codes: 0 success,
1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from . import checkpoint as ckpt
from . import config as cfgmod
from .errors import ConfigError, EmsSpeechError

OUT_ROOT_ENV = "EMSSPEECH_OUT_ROOT"


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we own the exit codes
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _resolve_out(args, subcommand: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ROOT_ENV)
    if not root:
        raise UsageError(f"--out is required (or set {OUT_ROOT_ENV})")
    return Path(root) / subcommand


def _start_run(args, subcommand: str, section_obj) -> tuple[Path, dict, float]:
    out = _resolve_out(args, subcommand)
    out.mkdir(parents=True, exist_ok=True)
    snap = cfgmod.write_snapshot(section_obj, out / "resolved_config.json")
    return out, snap, time.perf_counter()


def _finish_run(out: Path, subcommand: str, snap: dict, t0: float, key_metrics: dict) -> None:
    summary = {
        "subcommand": subcommand,
        "config_hash": ckpt.config_hash(snap),
        "wall_clock_s": time.perf_counter() - t0,
        "key_metrics": key_metrics,
    }
    with open(out / "run.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_split(corpus_dir: str, split, split_seed: int):
    from .corpus import read_corpus, split_corpus

    if not corpus_dir:
        raise UsageError("config must set a corpus path")
    dataset = read_corpus(corpus_dir)
    return split_corpus(dataset, tuple(split), split_seed)


def cmd_corpus(args) -> dict:
    from .corpus import generate_corpus, write_corpus

    section: cfgmod.CorpusSection = cfgmod.load_section(args.config, "corpus")
    if args.seed is not None:
        section = dataclasses.replace(section, base_seed=args.seed)
    out, snap, t0 = _start_run(args, "corpus", section)
    features = generate_corpus(
        per_emotion=section.per_emotion,
        duration=section.duration,
        base_seed=section.base_seed,
        gen_config=section.generator,
        feat_config=section.features,
        duration_jitter=section.duration_jitter,
    )
    manifest = write_corpus(features, out)
    key = {"records": len(manifest["records"])}
    _finish_run(out, "corpus", snap, t0, key)
    return key


def cmd_intensity(args) -> dict:
    from .intensity import (
        IntensityExtractorModel,
        evaluate_intensity,
        train_intensity,
    )

    section: cfgmod.IntensitySection = cfgmod.load_section(args.config, "intensity")
    if args.seed is not None:
        section = dataclasses.replace(
            section, train=dataclasses.replace(section.train, seed=args.seed)
        )
    out, snap, t0 = _start_run(args, "intensity", section)
    train_set, dev_set, test_set = _load_split(
        section.corpus, section.split, section.split_seed
    )
    model_cfg = dataclasses.replace(section.model, input_dim=train_set[0].d)
    model = IntensityExtractorModel(model_cfg)
    model, _ = train_intensity(
        model, train_set, dev_set, section.train, metrics_path=out / "metrics.jsonl"
    )
    test_mae, test_acc = evaluate_intensity(model, test_set)
    header = {
        "kind": "intensity",
        "version": 1,
        "config": dataclasses.asdict(model_cfg),
        "arch_hash": ckpt.config_hash(dataclasses.asdict(model_cfg)),
        "seed": section.train.seed,
    }
    ckpt.save_blocks(out / "intensity.emsc", header, ckpt.module_to_blocks(model, "model"))
    key = {"test_mae": test_mae, "test_emotion_accuracy": test_acc}
    _finish_run(out, "intensity", snap, t0, key)
    return key


def cmd_pretrain(args) -> dict:
    from .training import pretrain

    section: cfgmod.PretrainSection = cfgmod.load_section(args.config, "pretrain")
    if args.seed is not None:
        section = dataclasses.replace(
            section, run=dataclasses.replace(section.run, seed=args.seed)
        )
    out, snap, t0 = _start_run(args, "pretrain", section)
    train_set, _, _ = _load_split(section.corpus, section.split, section.split_seed)
    ckpt_path, metrics = pretrain(
        train_set,
        section.run,
        out,
        resume_from=section.resume_from,
        warm_start_from=section.warm_start_from,
    )
    key = {
        "checkpoint": str(ckpt_path),
        "steps": len(metrics),
        "final_total": metrics[-1]["total"] if metrics else None,
    }
    _finish_run(out, "pretrain", snap, t0, key)
    return key


def cmd_probe(args) -> dict:
    from .probes import extract_representations, frame_probe, train_probe

    section: cfgmod.ProbeSection = cfgmod.load_section(args.config, "probe")
    out, snap, t0 = _start_run(args, "probe", section)
    if not section.checkpoint:
        raise UsageError("config must set probe.checkpoint")
    train_set, _, test_set = _load_split(
        section.corpus, section.split, section.split_seed
    )
    train_reps = extract_representations(section.checkpoint, train_set)
    test_reps = extract_representations(section.checkpoint, test_set)
    emotion = train_probe(
        train_reps.pooled,
        train_reps.emotion_indices,
        test_reps.pooled,
        test_reps.emotion_indices,
        section.probe,
    )
    results = {"utterance_emotion": emotion.to_dict()}
    if section.run_frame_probe:
        results["frame_label"] = frame_probe(train_reps, test_reps, section.probe).to_dict()
    with open(out / "probe_results.json", "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=1, sort_keys=True)
        fh.write("\n")
    key = {"emotion_accuracy": emotion.mean_accuracy}
    if section.run_frame_probe:
        key["frame_error_rate"] = results["frame_label"]["mean_error_rate"]
    _finish_run(out, "probe", snap, t0, key)
    return key


def cmd_compare(args) -> dict:
    from .probes import compare_strategies

    section: cfgmod.CompareSection = cfgmod.load_section(args.config, "compare")
    out, snap, t0 = _start_run(args, "compare", section)
    train_set, _, test_set = _load_split(
        section.corpus, section.split, section.split_seed
    )
    report = compare_strategies(train_set, test_set, section.compare, out)
    key = {"status": report["status"], "cells": len(report["rows"])}
    _finish_run(out, "compare", snap, t0, key)
    return key


def cmd_plot(args) -> dict:
    from .plotting import plot_metrics, plot_report

    metrics_paths = list(args.metrics or [])
    report_path = args.report
    if args.config:
        section: cfgmod.PlotSection = cfgmod.load_section(args.config, "plot")
        metrics_paths.extend(section.metrics)
        report_path = report_path or section.report
    else:
        section = cfgmod.PlotSection(
            metrics=tuple(metrics_paths), report=report_path
        )
    if not metrics_paths and not report_path:
        raise UsageError("plot needs --metrics and/or --report inputs")
    out, snap, t0 = _start_run(args, "plot", section)
    written: list[str] = []
    for mp in metrics_paths:
        png, csv_path = plot_metrics(mp, out)
        written += [str(png), str(csv_path)]
    if report_path:
        png, csv_path = plot_report(report_path, out)
        written += [str(png), str(csv_path)]
    key = {"files": written}
    _finish_run(out, "plot", snap, t0, key)
    return key


COMMANDS = {
    "corpus": cmd_corpus,
    "intensity": cmd_intensity,
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "compare": cmd_compare,
    "plot": cmd_plot,
}


def build_parser() -> _Parser:
    parser = _Parser(prog="emsspeech", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand")
    for name in COMMANDS:
        p = sub.add_parser(name, description=f"run the {name} stage")
        p.add_argument("--config", help="TOML config file", required=(name != "plot"))
        p.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/{name})")
        p.add_argument("--seed", type=int, default=None, help="override the stage seed")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if name == "plot":
            p.add_argument("--metrics", nargs="*", help="metrics JSONL files")
            p.add_argument("--report", help="comparison report.json")
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.subcommand:
            raise UsageError(parser.format_usage())
        key = COMMANDS[args.subcommand](args)
        if args.verbose:
            print(json.dumps(key, sort_keys=True), file=sys.stderr)
        return 0
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except EmsSpeechError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
