"""Classifiers behind a uniform layer-access contract, plus the shapes testbed."""

from .adapter import LOGITS, ModelAdapter, TorchAdapter, zero_model
from .nets import (
    ARCHITECTURES,
    REFERENCE_ARCH,
    TRANSFER_ARCHS,
    accuracy,
    build_network,
    load_network,
    reference_model,
    save_network,
    train_reference,
)
from .plugins import available_plugins, load_model, register_plugin
from .shapes import CLASS_NAMES, ShapesDataset, generate_shapes_dataset

__all__ = [
    "LOGITS",
    "ModelAdapter",
    "TorchAdapter",
    "zero_model",
    "ARCHITECTURES",
    "REFERENCE_ARCH",
    "TRANSFER_ARCHS",
    "accuracy",
    "build_network",
    "load_network",
    "reference_model",
    "save_network",
    "train_reference",
    "available_plugins",
    "load_model",
    "register_plugin",
    "CLASS_NAMES",
    "ShapesDataset",
    "generate_shapes_dataset",
]
