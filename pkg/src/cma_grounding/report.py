"""Plots and text summary from a training log and prediction file."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DataError  # noqa: E402


def read_jsonl(path: str | Path) -> list[dict]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


@dataclass
class ReportSummary:
    epochs: list[int]
    losses: dict[str, list[float]]
    iou_histogram: list[int] | None
    miou: float | None
    count: int | None
    text: str


def iou_histogram(ious, buckets: int = 10) -> list[int]:
    hist = [0] * buckets
    for v in ious:
        hist[min(int(v * buckets), buckets - 1)] += 1
    return hist


def build_report(log_records: list[dict], predictions: list[dict] | None = None,
                 out_dir: str | Path | None = None) -> ReportSummary:
    epochs = [r for r in log_records if r.get("type") == "epoch"]
    if not epochs:
        raise DataError("metrics log holds no epoch records")
    xs = [r["epoch"] for r in epochs]
    losses = {k: [r[k] for r in epochs] for k in ("total", "reg", "ta", "sd")}
    lines = [f"epochs: {len(xs)}",
             "final loss: " + ", ".join(f"{k}={v[-1]:.4f}" for k, v in losses.items())]
    last = epochs[-1]
    for split in ("train", "val"):
        if split in last:
            lines.append(f"final {split}: " + ", ".join(
                f"{k}={v:.2f}" if isinstance(v, float) else f"{k}={v}" for k, v in last[split].items()))
    hist = miou = count = None
    if predictions:
        ious = [p["iou"] for p in predictions]
        hist = iou_histogram(ious)
        count = len(ious)
        miou = 100.0 * sum(ious) / count
        lines.append(f"predictions: {count}, mIoU={miou:.4f}")
    text = "\n".join(lines)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        fig, ax = plt.subplots(figsize=(6, 4))
        for k, v in losses.items():
            ax.plot(xs, v, marker="o", label=k)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / "loss_curve.png", dpi=100)
        plt.close(fig)
        if hist is not None:
            fig, ax = plt.subplots(figsize=(6, 4))
            edges = np.linspace(0, 1, len(hist) + 1)
            ax.bar(edges[:-1], hist, width=np.diff(edges), align="edge", edgecolor="black")
            ax.set_xlabel("IoU")
            ax.set_ylabel("queries")
            fig.tight_layout()
            fig.savefig(out_dir / "iou_histogram.png", dpi=100)
            plt.close(fig)
        (out_dir / "summary.txt").write_text(text + "\n", encoding="utf-8")
    return ReportSummary(xs, losses, hist, miou, count, text)


def report(log_path: str | Path, predictions_path: str | Path | None = None,
           out_dir: str | Path | None = None) -> ReportSummary:
    records = read_jsonl(log_path)
    if not records:
        raise DataError(f"metrics log {log_path} is empty")
    preds = read_jsonl(predictions_path) if predictions_path else None
    return build_report(records, preds, out_dir)
