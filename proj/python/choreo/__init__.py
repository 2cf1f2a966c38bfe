"""Python bindings for the choreo skill-discovery agent."""

import json
import os

from . import _core
from ._core import (
    ContractViolation,
    NotReady,
    NumericFault,
    ParseError,
    PointMassEnv,
    StartupError,
    config_keys,
    kl_categorical,
    knn_entropy_reward,
    lambda_returns,
    quantize,
    resample_weights,
)

__all__ = [
    "ContractViolation", "NotReady", "NumericFault", "ParseError", "PointMassEnv", "StartupError",
    "config_keys", "resolve_config", "pretrain", "finetune", "evaluate", "bench_codebook",
    "export_skills", "generate_dataset", "kl_categorical", "knn_entropy_reward", "lambda_returns",
    "quantize", "resample_weights",
]


def _values(overrides):
    out = {}
    for key, value in (overrides or {}).items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, os.PathLike):
            value = os.fspath(value)
        out[key] = repr(value) if isinstance(value, float) else str(value)
    return out


def resolve_config(overrides=None, config_file=""):
    """Effective configuration as {key: text} after defaults < file < CHOREO_SEED < overrides."""
    return _core.resolve_config(_values(overrides), os.fspath(config_file))


def pretrain(overrides=None, config_file="", resume=False):
    return _core.pretrain(_values(overrides), os.fspath(config_file), resume)


def finetune(overrides=None, config_file="", resume=False):
    return _core.finetune(_values(overrides), os.fspath(config_file), resume)


def evaluate(overrides=None, config_file=""):
    return json.loads(_core.evaluate(_values(overrides), os.fspath(config_file)))


def bench_codebook(overrides=None, config_file=""):
    return json.loads(_core.bench_codebook(_values(overrides), os.fspath(config_file)))


def export_skills(overrides=None, config_file="", output=""):
    return json.loads(_core.export_skills(_values(overrides), os.fspath(config_file), os.fspath(output)))


def generate_dataset(path, episodes, overrides=None):
    _core.generate_dataset(_values(overrides), episodes, os.fspath(path))
