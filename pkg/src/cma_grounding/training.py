"""Training loop, evaluation, checkpoints and ablation sweeps."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .config import ModelConfig
from .data import Dataset, Vocabulary, iterate_batches
from .errors import ConfigError, DataError, NumericalError
from .losses import compute_losses
from .metrics import EvalReport, evaluate, temporal_iou
from .model import CMAModel, build_model, clamp_interval

log = logging.getLogger(__name__)


@dataclass
class Checkpoint:
    state: dict
    config: ModelConfig
    epoch: int
    rng_state: dict
    vocab: list[str] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def model(self, dtype: torch.dtype = torch.float32) -> CMAModel:
        model = build_model(self.config, dtype)
        model.load_state_dict(self.state)
        model.eval()
        return model

    def save(self, path: str | Path) -> None:
        torch.save({
            "state": self.state,
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "vocab": self.vocab,
            "metrics": self.metrics,
        }, path)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            raw = torch.load(path, map_location="cpu", weights_only=False)
        except (OSError, RuntimeError) as exc:
            raise DataError(f"cannot load checkpoint {path}: {exc}") from exc
        return cls(state=raw["state"], config=ModelConfig.from_dict(raw["config"]),
                   epoch=raw["epoch"], rng_state=raw["rng_state"], vocab=raw["vocab"],
                   metrics=raw.get("metrics", {}))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]
    model: CMAModel


def _check_dims(cfg: ModelConfig, dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    if dataset.d_v != cfg.d_v:
        raise ConfigError(f"dataset features have d_v={dataset.d_v}, config expects {cfg.d_v}")
    if len(dataset.vocab) > cfg.vocab_size:
        raise ConfigError(f"vocabulary of {len(dataset.vocab)} words exceeds vocab_size={cfg.vocab_size}")


def _rng_snapshot(np_rng: np.random.Generator) -> dict:
    return {"torch": torch.random.get_rng_state(), "numpy": copy.deepcopy(np_rng.bit_generator.state)}


def train(cfg: ModelConfig, train_set: Dataset, val_set: Dataset | None = None,
          log_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
          against: str = "annotated", on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam on the total loss; keeps the best-by-validation-mIoU parameters.

    Without ``val_set`` the last epoch's parameters are kept and the logged
    mIoU is measured on the training batches as they are seen.
    """
    cfg.validate()
    _check_dims(cfg, train_set)
    if val_set is not None:
        _check_dims(cfg, val_set)
    torch.manual_seed(cfg.seed)
    np_rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    records: list[dict] = []
    sink = open(log_path, "w", encoding="utf-8") if log_path else None

    def emit(rec: dict) -> None:
        records.append(rec)
        if sink:
            sink.write(json.dumps(rec) + "\n")
            sink.flush()

    best_state = copy.deepcopy(model.state_dict())
    best = {"epoch": 0, "miou": float("-inf")}
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            t0 = time.perf_counter()
            sums = np.zeros(4)
            seen = 0
            preds, gts = [], []
            for batch in iterate_batches(train_set.samples, cfg.batch_size, cfg.N, cfg.L_max, np_rng):
                try:
                    out = model(batch.video, batch.tokens, batch.mask)
                    total, reg, ta, sd = compute_losses(out, batch.gt, cfg.loss)
                except NumericalError as exc:
                    raise NumericalError(f"{exc} at epoch {epoch} step {step}; "
                                         f"batch ids: {batch.ids}") from exc
                if not torch.isfinite(total):
                    raise NumericalError(f"non-finite loss at epoch {epoch} step {step}; "
                                         f"batch ids: {batch.ids}")
                optimizer.zero_grad()
                total.backward()
                if cfg.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optimizer.step()
                step += 1
                parts = [t.item() for t in (total.detach(), reg.detach(), ta.detach(), sd.detach())]
                emit({"type": "step", "epoch": epoch, "step": step,
                      **dict(zip(("total", "reg", "ta", "sd"), parts))})
                b = len(batch.ids)
                sums += np.array(parts) * b
                seen += b
                preds.extend(out.boundaries.detach().tolist())
                gts.extend(batch.gt.tolist())
            means = sums / seen
            rec = {"type": "epoch", "epoch": epoch,
                   **dict(zip(("total", "reg", "ta", "sd"), means.tolist())),
                   "seconds": time.perf_counter() - t0}
            train_report = evaluate(preds, gts)
            rec["train"] = train_report.as_dict()
            if val_set is not None:
                report, _ = evaluate_model(model, val_set, against=against)
                rec["val"] = report.as_dict()
                score = report.miou
            else:
                score = None
            emit(rec)
            if on_epoch:
                on_epoch(rec)
            log.info("epoch %d loss %.4f mIoU %s", epoch, means[0],
                     f"{score:.2f}" if score is not None else f"{train_report.miou:.2f} (train)")
            if score is None or score > best["miou"]:
                best = {"epoch": epoch, "miou": score if score is not None else train_report.miou}
                best_state = copy.deepcopy(model.state_dict())
    finally:
        if sink:
            sink.close()
    if val_set is None and cfg.epochs > 0:
        best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    ckpt = Checkpoint(state=best_state, config=cfg, epoch=best["epoch"],
                      rng_state=_rng_snapshot(np_rng), vocab=list(train_set.vocab.words),
                      metrics={"best_miou": best["miou"]} if cfg.epochs else {})
    if checkpoint_path:
        ckpt.save(checkpoint_path)
    return TrainResult(ckpt, records, model)


@torch.no_grad()
def predict_dataset(model: CMAModel, dataset: Dataset, batch_size: int = 256) -> np.ndarray:
    """Raw ``(B, 2)`` normalized predictions in dataset order."""
    cfg = model.cfg
    dtype = next(model.parameters()).dtype
    model.eval()
    outs = []
    for batch in iterate_batches(dataset.samples, batch_size, cfg.N, cfg.L_max, dtype=dtype):
        outs.append(model(batch.video, batch.tokens, batch.mask).boundaries.double().numpy())
    return np.concatenate(outs) if outs else np.zeros((0, 2))


def evaluate_model(model: CMAModel, dataset: Dataset, against: str = "annotated",
                   batch_size: int = 256) -> tuple[EvalReport, list[dict]]:
    """Metrics plus one prediction record per sample.

    ``against="true"`` scores synthetic data against the unperturbed intervals.
    """
    if len(dataset) == 0:
        raise DataError("cannot evaluate an empty dataset")
    _check_dims(model.cfg, dataset)
    raw = predict_dataset(model, dataset, batch_size)
    gts = [s.true_gt if against == "true" else s.gt for s in dataset]
    report = evaluate([tuple(p) for p in raw], gts)
    records = []
    for s, p, g in zip(dataset, raw, gts):
        c = clamp_interval(p)
        records.append({
            "id": s.id,
            "pred_start": c.start * s.duration,
            "pred_end": c.end * s.duration,
            "pred_start_norm": c.start,
            "pred_end_norm": c.end,
            "raw_start_norm": float(p[0]),
            "raw_end_norm": float(p[1]),
            "iou": temporal_iou(c, clamp_interval(g)),
        })
    return report, records


def write_predictions(records: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# ablations

LOSS_ROWS = ((0.5, 1.0), (2.0, 0.1), (2.0, 0.2), (10.0, 0.1))

ABLATION_AXES = {
    "structure": [("Encoder-only", {"structure": "encoder_only"}),
                  ("Decoder-only", {"structure": "decoder_only"}),
                  ("Full model", {"structure": "full"})],
    "pe": [("w/o PE", {"pe_variant": "none"}),
           ("Embedding matrix", {"pe_variant": "learned"}),
           ("Sin/cos PE", {"pe_variant": "sinusoidal"})],
    "fusion": [("Add", {"fusion_op": "add"}),
               ("Concat", {"fusion_op": "concat"}),
               ("HadamardProduct", {"fusion_op": "hadamard"})],
    "loss": [("Smooth_L1" if (a, b) == (0.5, 1.0) else "Ours", {"loss.alpha": a, "loss.beta": b})
             for a, b in LOSS_ROWS],
}


def variant_config(base: ModelConfig, changes: dict) -> ModelConfig:
    cfg = base.replace()
    for key, value in changes.items():
        if key.startswith("loss."):
            setattr(cfg.loss, key[5:], value)
        else:
            setattr(cfg, key, value)
    return cfg.validate()


@dataclass
class AblationRow:
    name: str
    changes: dict
    miou: list[float]
    r1_05: list[float]

    @property
    def mean_miou(self) -> float:
        return float(np.mean(self.miou))

    @property
    def mean_r1_05(self) -> float:
        return float(np.mean(self.r1_05))


def ablate(base: ModelConfig, axis: str, train_set: Dataset, test_set: Dataset,
           seeds: Sequence[int] = (0,), against: str = "annotated") -> list[AblationRow]:
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}")
    rows = []
    for name, changes in ABLATION_AXES[axis]:
        row = AblationRow(name, changes, [], [])
        for seed in seeds:
            cfg = variant_config(base, {**changes, "seed": seed})
            result = train(cfg, train_set)
            report, _ = evaluate_model(result.model, test_set, against=against)
            row.miou.append(report.miou)
            row.r1_05.append(report.r1_at[0.5])
            log.info("%s %s seed %d: mIoU %.2f R1@0.5 %.2f", axis, name, seed,
                     report.miou, report.r1_at[0.5])
        rows.append(row)
    return rows


def format_ablation(axis: str, rows: Sequence[AblationRow]) -> str:
    if axis == "loss":
        header = f"{'Reg. Loss':<12}{'alpha':>7}{'beta':>7}{'R1@0.5':>9}{'mIoU':>9}"
        lines = [header, "-" * len(header)]
        for r in rows:
            lines.append(f"{r.name:<12}{r.changes['loss.alpha']:>7g}{r.changes['loss.beta']:>7g}"
                         f"{r.mean_r1_05:>9.2f}{r.mean_miou:>9.2f}")
    else:
        header = f"{'Method':<20}{'R1@0.5':>9}{'mIoU':>9}"
        lines = [header, "-" * len(header)]
        for r in rows:
            lines.append(f"{r.name:<20}{r.mean_r1_05:>9.2f}{r.mean_miou:>9.2f}")
    return "\n".join(lines)


def vocab_from_checkpoint(ckpt: Checkpoint) -> Vocabulary:
    vocab = Vocabulary()
    for w in ckpt.vocab[2:]:
        vocab.add(w)
    return vocab
