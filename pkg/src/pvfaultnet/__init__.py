"""Lightweight CNN engine for binary PV-cell defect classification."""

from .model import (
    ArchitectureConfig,
    LayerSpec,
    Network,
    audit_reference_counts,
    build_pvfaultnet,
    count_parameters,
    shape_propagate,
    with_batchnorm,
    with_dropout,
)
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureConfig",
    "LayerSpec",
    "Network",
    "TrainConfig",
    "audit_reference_counts",
    "build_pvfaultnet",
    "count_parameters",
    "evaluate",
    "shape_propagate",
    "train",
    "with_batchnorm",
    "with_dropout",
    "__version__",
]
