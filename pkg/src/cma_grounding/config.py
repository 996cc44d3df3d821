"""Model, loss and training configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

PE_VARIANTS = ("none", "sinusoidal", "learned")
FUSION_OPS = ("hadamard", "concat", "add")
STRUCTURES = ("full", "encoder_only", "decoder_only")

# (alpha, beta) regimes tuned per dataset
CHARADES_LOSS = (10.0, 0.1)
ACTIVITYNET_LOSS = (2.0, 0.4)


@dataclass
class LossConfig:
    alpha: float = CHARADES_LOSS[0]
    beta: float = CHARADES_LOSS[1]
    lambda_ta: float = 1.0
    lambda_sd: float = 1.0
    # how the two boundary residuals are combined: "sum" or "mean"
    reduction: str = "sum"

    def validate(self) -> None:
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not 0 < self.beta < 1:
            # beta == 1 is accepted so the Smooth-L1 member of the family stays reachable
            if self.beta != 1:
                raise ConfigError(f"beta must lie in (0, 1), got {self.beta}")
        if self.lambda_ta < 0:
            raise ConfigError(f"lambda_ta must be nonnegative, got {self.lambda_ta}")
        if self.lambda_sd < 0:
            raise ConfigError(f"lambda_sd must be nonnegative, got {self.lambda_sd}")
        if self.reduction not in ("sum", "mean"):
            raise ConfigError(f"unknown residual reduction {self.reduction!r}")


@dataclass
class ModelConfig:
    """All architectural, loss and optimisation hyperparameters.

    ``d`` is the shared model width. The bi-directional query encoder emits
    ``d_q = 2 * hidden`` features which must equal ``d`` because the guide
    vectors and the decoder mix both modalities in one space.
    """

    d: int = 512
    d_v: int = 32
    d_q: int = 512
    d_s: int | None = None
    word_dim: int = 300
    vocab_size: int = 64
    k: int = 1
    heads: int = 4
    layers: int = 2
    lstm_layers: int = 2
    N: int = 128
    L_max: int = 10
    pe_variant: str = "sinusoidal"
    fusion_op: str = "hadamard"
    structure: str = "full"
    residual: bool = True
    ffn_mult: int = 4
    loss: LossConfig = field(default_factory=LossConfig)
    lr: float = 1e-3
    batch_size: int = 100
    epochs: int = 100
    grad_clip: float = 10.0
    seed: int = 0

    @property
    def hidden(self) -> int:
        return self.d_q // 2

    @property
    def phrase_dim(self) -> int:
        return self.d_s if self.d_s is not None else max(1, self.d // 2)

    @property
    def pe_max_len(self) -> int:
        return max(self.N, self.L_max)

    def validate(self) -> "ModelConfig":
        positive = ("d", "d_v", "d_q", "word_dim", "vocab_size", "k", "heads",
                    "layers", "lstm_layers", "N", "L_max", "ffn_mult", "batch_size")
        for name in positive:
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.d_s is not None and self.d_s < 1:
            raise ConfigError(f"d_s must be a positive integer, got {self.d_s!r}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be nonnegative, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.d_q % 2:
            raise ConfigError(f"d_q={self.d_q} must be even (two recurrent directions)")
        if self.d_q != self.d:
            raise ConfigError(f"d_q={self.d_q} must equal d={self.d}")
        if self.pe_variant not in PE_VARIANTS:
            raise ConfigError(f"unknown pe_variant {self.pe_variant!r}")
        if self.pe_variant == "sinusoidal" and self.d % 2:
            raise ConfigError("sinusoidal encoding needs an even d")
        if self.fusion_op not in FUSION_OPS:
            raise ConfigError(f"unknown fusion_op {self.fusion_op!r}")
        if self.structure not in STRUCTURES:
            raise ConfigError(f"unknown structure {self.structure!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive, got {self.grad_clip}")
        self.loss.validate()
        return self

    def replace(self, **changes: Any) -> "ModelConfig":
        loss = changes.pop("loss", None)
        cfg = dataclasses.replace(self, **changes)
        cfg.loss = dataclasses.replace(self.loss) if loss is None else loss
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        data = dict(data)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        loss = data.pop("loss", None) or {}
        if isinstance(loss, LossConfig):
            loss_cfg = loss
        else:
            loss_names = {f.name for f in dataclasses.fields(LossConfig)}
            bad = set(loss) - loss_names
            if bad:
                raise ConfigError(f"unknown loss config keys: {sorted(bad)}")
            loss_cfg = LossConfig(**loss)
        return cls(loss=loss_cfg, **data)


def micro_config(**overrides: Any) -> ModelConfig:
    """Small model used for desk-scale experiments."""
    base = dict(d=64, d_q=64, d_v=32, word_dim=32, heads=4, layers=2, k=1,
                N=16, L_max=8, batch_size=100, epochs=50)
    base.update(overrides)
    return ModelConfig.from_dict(base)


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ModelConfig:
    """Read a YAML or JSON config file; ``overrides`` use dotted keys (``loss.alpha``)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    apply_overrides(data, overrides or {})
    return ModelConfig.from_dict(data).validate()


def apply_overrides(data: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    for key, value in overrides.items():
        target = data
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return data
