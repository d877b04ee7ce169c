"""Two-stage semi-supervised domain adaptation on synthetic shift benchmarks."""

import json as _json

from . import _core
from ._core import (
    ConfigError,
    CorruptArtifact,
    DataFormatError,
    Error,
    InvalidInput,
    Model,
    ShapeMismatch,
    TrainingFault,
    accuracy,
    consistency,
    consistency_unlabeled,
    cross_entropy,
    distillation,
    ema_update,
    loss_gradients,
    preset_names,
)

__all__ = [
    "ConfigError", "CorruptArtifact", "DataFormatError", "Error", "InvalidInput", "Model",
    "ShapeMismatch", "TrainingFault", "accuracy", "consistency", "consistency_unlabeled",
    "cross_entropy", "default_config", "distillation", "ema_update", "generate", "load_checkpoint",
    "loss_gradients", "preset_config", "preset_names", "run_experiment",
]


def _dump(config):
    return "" if config is None else _json.dumps(config)


def default_config():
    """The default run configuration as a dict."""
    return _json.loads(_core.default_config())


def preset_config(preset, config=None):
    return _json.loads(_core.preset_config(preset, _dump(config)))


def generate(config=None, overrides=()):
    """Split arrays: source, target_labeled, target_unlabeled, held_out as (X, y).

    Unlabeled rows carry y = -1.
    """
    return _core.generate(_dump(config), list(overrides))


def run_experiment(config=None, preset="custom", overrides=()):
    """Trains both stages. Returns the report dict and the trained models."""
    out = _core.run_experiment(_dump(config), preset, list(overrides))
    out["report"] = _json.loads(out["report"])
    return out


def load_checkpoint(path):
    return _core.load_checkpoint(str(path))
