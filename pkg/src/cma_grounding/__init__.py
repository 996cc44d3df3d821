"""Cross-modality attention model for language-guided video temporal grounding."""

from .config import LossConfig, ModelConfig, micro_config
from .data import Dataset, GroundingSample, SyntheticConfig, generate_synthetic
from .errors import ConfigError, DataError, NumericalError
from .metrics import EvalReport, evaluate, temporal_iou
from .model import CMAModel, TimeInterval, build_model, predict
from .training import Checkpoint, evaluate_model, train

__all__ = [
    "CMAModel", "Checkpoint", "ConfigError", "DataError", "Dataset", "EvalReport",
    "GroundingSample", "LossConfig", "ModelConfig", "NumericalError", "SyntheticConfig",
    "TimeInterval", "build_model", "evaluate", "evaluate_model", "generate_synthetic",
    "micro_config", "predict", "temporal_iou", "train",
]
