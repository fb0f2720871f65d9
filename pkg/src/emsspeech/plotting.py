"""Render loss curves and accuracy-vs-parameter sweeps to PNG + CSV.

CSV outputs are byte-deterministic for identical inputs; PNGs are for
humans and carry no contract beyond existing.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import ConfigError


def read_metrics(path: str | Path) -> list[dict]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"metrics file not found: {p}")
    records = []
    for line_no, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{line_no}: malformed metrics line: {exc}") from exc
    if not records:
        raise ConfigError(f"metrics file {p} is empty")
    return records


def plot_metrics(metrics_path: str | Path, out_dir: str | Path) -> tuple[Path, Path]:
    """One loss-curve PNG and one CSV per metrics JSONL file."""
    records = [r for r in read_metrics(metrics_path) if "step" in r]
    if not records:
        raise ConfigError(f"no step records in {metrics_path}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(metrics_path).parent.name or Path(metrics_path).stem
    steps = [r["step"] for r in records]
    series = {
        key: [r.get(key, 0.0) for r in records]
        for key in ("total", "l_score", "l_joint_input", "l_vq")
    }

    csv_path = out / f"loss-{stem}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total", "l_score", "l_joint_input", "l_vq"])
        for i, step in enumerate(steps):
            writer.writerow(
                [step] + [f"{series[k][i]:.10g}" for k in ("total", "l_score", "l_joint_input", "l_vq")]
            )

    fig, ax = plt.subplots(figsize=(7, 4))
    for key, values in series.items():
        if any(v != 0.0 for v in values) or key == "total":
            ax.plot(steps, values, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    png_path = out / f"loss-{stem}.png"
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
    return png_path, csv_path


def plot_report(report_path: str | Path, out_dir: str | Path) -> tuple[Path, Path]:
    """Accuracy-vs-parameter curve for a comparison report."""
    p = Path(report_path)
    if not p.is_file():
        raise ConfigError(f"report file not found: {p}")
    try:
        report = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed report {p}: {exc}") from exc
    rows = [r for r in report.get("rows", []) if r.get("status") == "ok"]
    if not rows:
        raise ConfigError(f"report {p} has no successful rows")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    groups: dict[str, list[tuple[float, float]]] = {}
    for row in rows:
        key = f"{row['family']}/{row['strategy']}/{row['input_mode']}"
        groups.setdefault(key, []).append(
            (float(row["parameter"]), float(row["accuracy"]))
        )

    csv_path = out / "accuracy-vs-parameter.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "parameter", "mean_accuracy"])
        for key in sorted(groups):
            for param, acc in sorted(groups[key]):
                writer.writerow([key, f"{param:g}", f"{acc:.10g}"])

    fig, ax = plt.subplots(figsize=(7, 4))
    for key in sorted(groups):
        pts = sorted(groups[key])
        ax.plot([x for x, _ in pts], [y for _, y in pts], marker="o", label=key)
    ax.set_xlabel("masking parameter")
    ax.set_ylabel("probe accuracy")
    ax.legend()
    fig.tight_layout()
    png_path = out / "accuracy-vs-parameter.png"
    fig.savefig(png_path, dpi=110)
    plt.close(fig)
    return png_path, csv_path
