"""Regression, temporal-attention and phrase-diversity losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .config import LossConfig
from .errors import ConfigError

LOG_FLOOR = 1e-12


def _check_params(alpha: float, beta: float) -> None:
    if not alpha > 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    # beta = 1 with alpha = 0.5 is Smooth-L1, kept reachable on purpose
    if not 0 < beta <= 1:
        raise ConfigError(f"beta must lie in (0, 1], got {beta}")


def piecewise_reg(x, alpha: float = 10.0, beta: float = 0.1):
    """``alpha x^2`` for |x| < beta, ``2 alpha beta |x| - alpha beta^2`` beyond.

    Works on floats and tensors. The linear branch is taken at |x| == beta, so
    autograd returns the outer slope ``2 alpha beta sign(x)`` at the corner.
    """
    _check_params(alpha, beta)
    if not torch.is_tensor(x):
        ax = abs(x)
        return alpha * x * x if ax < beta else 2 * alpha * beta * ax - alpha * beta * beta
    ax = x.abs()
    return torch.where(ax < beta, alpha * x * x, 2 * alpha * beta * ax - alpha * beta * beta)


def piecewise_reg_grad(x: float, alpha: float = 10.0, beta: float = 0.1) -> float:
    _check_params(alpha, beta)
    if abs(x) < beta:
        return 2 * alpha * x
    return 2 * alpha * beta * (1.0 if x > 0 else -1.0 if x < 0 else 0.0)


def smooth_l1(x):
    if not torch.is_tensor(x):
        return 0.5 * x * x if abs(x) < 1 else abs(x) - 0.5
    ax = x.abs()
    return torch.where(ax < 1, 0.5 * x * x, ax - 0.5)


def regression_loss(pred: torch.Tensor, gt: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Per-sample boundary loss for ``(B, 2)`` normalized predictions and targets."""
    per_boundary = piecewise_reg(pred - gt, cfg.alpha, cfg.beta)
    return per_boundary.sum(-1) if cfg.reduction == "sum" else per_boundary.mean(-1)


def clip_indicator(gt: torch.Tensor, n: int, min_overlap: float = 0.5) -> torch.Tensor:
    """Mark clips whose span [i/N, (i+1)/N) overlaps the interval by at least half a clip.

    ``gt`` is ``(B, 2)`` normalized. A sample with no qualifying clip falls back
    to the clip holding the interval midpoint.
    """
    lo = torch.arange(n, dtype=gt.dtype) / n
    hi = lo + 1.0 / n
    overlap = (torch.minimum(hi, gt[:, 1:2]) - torch.maximum(lo, gt[:, 0:1])).clamp(min=0)
    ind = overlap >= min_overlap / n - 1e-12
    empty = ~ind.any(dim=1)
    if empty.any():
        mid = gt[empty].mean(dim=1)
        idx = (mid * n).floor().long().clamp(0, n - 1)
        ind[empty.nonzero(as_tuple=True)[0], idx] = True
    return ind


def temporal_attention_loss(a: torch.Tensor, indicator: torch.Tensor) -> torch.Tensor:
    """Mean negative log attention over in-interval clips, per sample."""
    if a.dim() == 1:
        a, indicator = a.unsqueeze(0), indicator.unsqueeze(0)
    ind = indicator.to(a.dtype)
    nll = -(ind * torch.log(a.clamp(min=LOG_FLOOR))).sum(-1)
    return nll / ind.sum(-1).clamp(min=1)


def semantic_diversity_loss(A: torch.Tensor) -> torch.Tensor:
    """``||A A^T - I||_F^2`` per sample, for ``(k, L)`` or ``(B, k, L)`` inputs."""
    gram = A @ A.transpose(-1, -2)
    eye = torch.eye(A.shape[-2], dtype=A.dtype)
    return ((gram - eye) ** 2).sum(dim=(-1, -2))


@dataclass
class LossReport:
    total: float
    reg: float
    ta: float
    sd: float

    def as_dict(self) -> dict[str, float]:
        return {"total": self.total, "reg": self.reg, "ta": self.ta, "sd": self.sd}


def total_loss(reg, ta, sd, cfg: LossConfig):
    """Weighted sum ``reg + lambda_ta ta + lambda_sd sd``; tensors stay differentiable."""
    return reg + cfg.lambda_ta * ta + cfg.lambda_sd * sd


def loss_report(reg: float, ta: float, sd: float, cfg: LossConfig) -> LossReport:
    reg, ta, sd = float(reg), float(ta), float(sd)
    return LossReport(total=float(total_loss(reg, ta, sd, cfg)), reg=reg, ta=ta, sd=sd)


def compute_losses(out, gt: torch.Tensor, cfg: LossConfig):
    """Batch-mean loss terms from a model output; returns ``(total, reg, ta, sd)`` tensors."""
    reg = regression_loss(out.boundaries, gt, cfg).mean()
    ind = clip_indicator(gt, out.temporal_attention.shape[-1])
    ta = temporal_attention_loss(out.temporal_attention, ind).mean()
    if out.phrase_attention is None:
        sd = torch.zeros((), dtype=reg.dtype)
    else:
        sd = semantic_diversity_loss(out.phrase_attention).mean()
    return total_loss(reg, ta, sd, cfg), reg, ta, sd
