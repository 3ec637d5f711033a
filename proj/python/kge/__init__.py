"""Knowledge graph embedding toolkit (C++ core)."""

from ._core import (
    Dataset,
    KgeError,
    Model,
    NoResultError,
    NumericError,
    TrainResult,
    UserError,
    evaluate,
    format_golden_setting,
    golden_preset,
    load_dataset,
    model_kinds,
    project,
    train,
    tune,
)

__all__ = [
    "Dataset",
    "KgeError",
    "Model",
    "NoResultError",
    "NumericError",
    "TrainResult",
    "UserError",
    "evaluate",
    "format_golden_setting",
    "golden_preset",
    "load_dataset",
    "model_kinds",
    "project",
    "train",
    "tune",
]
