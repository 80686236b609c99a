"""Small convolutional classifiers for the shapes testbed, their training and caching."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..container import load_tensors, save_tensors
from ..errors import InvalidInputError, TrainingError
from .adapter import LOGITS, TorchAdapter
from .shapes import NUM_CLASSES, ShapesDataset, generate_shapes_dataset

log = logging.getLogger(__name__)

MODEL_SIZE = 32
DEFAULT_TRAIN_SIZE = 5000
DEFAULT_EPOCHS = 30
_CACHE_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    name: str
    widths: tuple
    kernel: int
    pool_before: tuple  # 1-based conv indices preceded by a 2x2 average pool
    activation: str


ARCHITECTURES = {
    a.name: a
    for a in (
        Architecture("ref6", (16, 16, 32, 32, 64, 64), 3, (3, 5), "silu"),
        Architecture("gelu4k5", (16, 32, 48, 64), 5, (2, 3, 4), "gelu"),
        Architecture("elu8", (8, 8, 16, 16, 24, 24, 32, 32), 3, (3, 5, 7), "elu"),
        Architecture("relu4", (24, 24, 48, 48), 3, (2, 4), "relu"),
    )
}
REFERENCE_ARCH = "ref6"
TRANSFER_ARCHS = ("gelu4k5", "elu8", "relu4")

_ACTIVATIONS = {"silu": nn.SiLU, "gelu": nn.GELU, "elu": nn.ELU, "relu": nn.ReLU}


class _Standardize(nn.Module):
    def forward(self, x):
        return (x - 0.5) / 0.25


def build_network(arch: str | Architecture, seed: int = 0, num_classes: int = NUM_CLASSES, size: int = MODEL_SIZE):
    """Freshly initialised :class:`TorchAdapter` for ``arch``.

    Layers are ``conv1 .. convN`` (post-activation), ``pool`` (global mean,
    the penultimate features) and ``logits``.
    """
    arch = ARCHITECTURES[arch] if isinstance(arch, str) else arch
    act = _ACTIVATIONS[arch.activation]
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        stages = []
        in_ch = 3
        for i, width in enumerate(arch.widths, start=1):
            parts = [_Standardize()] if i == 1 else []
            if i in arch.pool_before:
                parts.append(nn.AvgPool2d(2))
            conv = nn.Conv2d(in_ch, width, arch.kernel, padding=arch.kernel // 2)
            nn.init.kaiming_normal_(conv.weight, nonlinearity="relu")
            nn.init.zeros_(conv.bias)
            parts += [conv, act()]
            stages.append((f"conv{i}", nn.Sequential(*parts)))
            in_ch = width
        stages.append(("pool", nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Flatten())))
        stages.append((LOGITS, nn.Linear(in_ch, num_classes)))
    adapter = TorchAdapter(stages, (size, size, 3), name=arch.name)
    adapter.arch = arch.name
    return adapter


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def accuracy(model: TorchAdapter, images, labels, batch_size=250) -> float:
    correct = 0
    with torch.no_grad():
        for start in range(0, len(labels), batch_size):
            x = torch.from_numpy(np.ascontiguousarray(images[start : start + batch_size]))
            pred = model.logits(x.to(model.dtype)).argmax(dim=1).numpy()
            correct += int((pred == labels[start : start + batch_size]).sum())
    return correct / max(1, len(labels))


def train_reference(
    seed: int,
    dataset: ShapesDataset,
    epochs: int = DEFAULT_EPOCHS,
    arch: str = REFERENCE_ARCH,
    batch_size: int = 64,
    lr: float = 2e-3,
    min_accuracy: float | None = 0.80,
) -> TorchAdapter:
    """Mini-batch Adam training on 90 % of ``dataset``; accuracy is measured on the rest.

    Raises :class:`TrainingError` when ``epochs > 0`` and held-out accuracy
    stays below ``min_accuracy``.
    """
    counts = np.bincount(dataset.labels, minlength=NUM_CLASSES)
    if counts.max() - counts.min() > 1:
        raise InvalidInputError("training set is not class-balanced")
    train, held_out = dataset.split(0.1)
    model = build_network(arch, seed, size=dataset.size)
    params = list(model.module.parameters())
    for p in params:
        p.requires_grad_(True)
    model.module.train()
    opt = torch.optim.Adam(params, lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, epochs))
    rng = np.random.default_rng(seed)
    x_all = torch.from_numpy(train.images)
    y_all = torch.from_numpy(train.labels)
    loss_fn = nn.CrossEntropyLoss()
    for epoch in range(epochs):
        total = 0.0
        for idx in _batches(len(train), batch_size, rng):
            idx = torch.from_numpy(idx)
            opt.zero_grad()
            loss = loss_fn(model.module(x_all[idx]), y_all[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        sched.step()
        log.info("%s seed=%d epoch %d/%d loss %.4f", arch, seed, epoch + 1, epochs, total / len(train))
    model.module.eval()
    for p in params:
        p.requires_grad_(False)
    model.held_out_accuracy = accuracy(model, held_out.images, held_out.labels)
    model.seed = seed
    if epochs > 0 and min_accuracy is not None and model.held_out_accuracy < min_accuracy:
        raise TrainingError(
            f"{arch} reached only {model.held_out_accuracy:.3f} held-out accuracy after {epochs} epochs"
        )
    return model


def network_from_state(state: dict, arch: str | None = None, size: int = MODEL_SIZE) -> TorchAdapter:
    """Rebuild a network from saved tensors, inferring the architecture when not given."""
    candidates = [arch] if arch else list(ARCHITECTURES)
    for name in candidates:
        model = build_network(name, 0, size=size)
        ref = model.module.state_dict()
        if set(ref) == set(state) and all(tuple(ref[k].shape) == tuple(np.shape(state[k])) for k in ref):
            model.module.load_state_dict({k: torch.from_numpy(np.asarray(state[k])) for k in ref})
            return model
    raise InvalidInputError(f"tensors do not match any known architecture ({candidates})")


def save_network(model: TorchAdapter, path, **manifest) -> None:
    save_tensors(model.state_dict(), path)
    meta = {"arch": model.arch, **manifest}
    Path(path).with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_network(path) -> TorchAdapter:
    path = Path(path)
    meta_path = path.with_suffix(".json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    model = network_from_state(load_tensors(path), meta.get("arch"))
    model.held_out_accuracy = meta.get("held_out_accuracy")
    model.seed = meta.get("seed")
    return model


def cache_dir() -> Path:
    root = os.environ.get("MACO_CACHE_DIR") or Path.home() / ".cache" / "macoviz"
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def reference_model(seed: int = 0, arch: str = REFERENCE_ARCH, n: int = DEFAULT_TRAIN_SIZE, epochs: int = DEFAULT_EPOCHS):
    """Trained testbed classifier, loaded from the cache or trained and cached."""
    path = cache_dir() / f"{arch}-seed{seed}-n{n}-e{epochs}-v{_CACHE_VERSION}.macomdl"
    if path.exists():
        return load_network(path)
    log.info("training %s (seed %d, n=%d, %d epochs)", arch, seed, n, epochs)
    data = generate_shapes_dataset(n, seed, MODEL_SIZE)
    model = train_reference(seed, data, epochs, arch=arch)
    tmp = path.with_name(path.name + ".tmp")
    save_network(model, tmp, seed=seed, n=n, epochs=epochs, held_out_accuracy=model.held_out_accuracy)
    tmp.with_suffix(".json").replace(path.with_suffix(".json"))
    tmp.replace(path)
    return model
