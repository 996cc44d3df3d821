"""Temporal IoU, R1@m and mIoU."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import DataError
from .model import clamp_interval

THRESHOLDS = (0.3, 0.5, 0.7)


def temporal_iou(a, b) -> float:
    """IoU of two ordered intervals; two identical points score 1, other empty unions 0."""
    a_s, a_e = float(a[0]), float(a[1])
    b_s, b_e = float(b[0]), float(b[1])
    inter = max(0.0, min(a_e, b_e) - max(a_s, b_s))
    union = max(a_e, b_e) - min(a_s, b_s)
    if union <= 0:
        return 1.0 if (a_s, a_e) == (b_s, b_e) else 0.0
    return inter / union


@dataclass
class EvalReport:
    r1_at: dict[float, float]
    miou: float
    count: int
    ious: list[float] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        out = {f"R1@{m}": v for m, v in self.r1_at.items()}
        out["mIoU"] = self.miou
        out["count"] = self.count
        return out

    def to_text(self) -> str:
        return "\n".join(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}"
                         for k, v in self.as_dict().items())


def evaluate(preds: Sequence, gts: Sequence, thresholds: Iterable[float] = THRESHOLDS,
             inclusive: bool = True) -> EvalReport:
    """Score single predictions against ground truth.

    Predictions are clamped to [0, 1] and reordered before scoring. With
    ``inclusive`` an IoU equal to the threshold counts as a hit.
    """
    if len(preds) != len(gts):
        raise DataError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise DataError("cannot evaluate an empty prediction list")
    ious = [temporal_iou(clamp_interval(p), clamp_interval(g)) for p, g in zip(preds, gts)]
    n = len(ious)
    r1 = {}
    for m in sorted(thresholds):
        hits = sum(1 for v in ious if (v >= m if inclusive else v > m))
        r1[m] = 100.0 * hits / n
    return EvalReport(r1_at=r1, miou=100.0 * sum(ious) / n, count=n, ious=ious)
