"""Differentiable scalar criteria maximized by the optimizers.

An :class:`Objective` maps the activation of one layer to one value per
batch item; calling it on ``(model, x)`` returns the batch mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import InvalidInputError, InvalidTargetError
from .imageio import load_image
from .models.adapter import LOGITS, as_batch

__all__ = [
    "Objective",
    "logit_objective",
    "channel_objective",
    "direction_objective",
    "inversion_objective",
    "parse_objective",
]

_COS_EPS = 1e-12


def _pool(act):
    return act.mean(dim=(2, 3)) if act.ndim == 4 else act


@dataclass(frozen=True, eq=False)
class Objective:
    kind: str
    layer_id: str
    target: object
    descriptor: str = ""
    reducer: str = "spatial-mean"
    _reference: torch.Tensor | None = field(default=None, repr=False)

    def values(self, act: torch.Tensor) -> torch.Tensor:
        """Per-item objective values from this objective's layer activation."""
        if self.kind == "logit":
            if act.ndim != 2 or not 0 <= self.target < act.shape[1]:
                raise InvalidTargetError(f"class index {self.target} out of range for {tuple(act.shape[1:])} logits")
            return act[:, self.target]
        if self.kind == "channel":
            if act.ndim < 2 or not 0 <= self.target < act.shape[1]:
                raise InvalidTargetError(f"channel {self.target} out of range for layer {self.layer_id}")
            return _pool(act)[:, self.target]
        if self.kind == "direction":
            pooled = _pool(act)
            v = torch.tensor(self.target, dtype=pooled.dtype)
            if act.ndim < 2 or pooled.shape[1] != v.shape[0]:
                raise InvalidTargetError(
                    f"direction has {v.shape[0]} entries, layer {self.layer_id} has {pooled.shape[1]} channels"
                )
            return (pooled * v).sum(dim=1)
        if self.kind == "inversion":
            flat = act.reshape(act.shape[0], -1)
            ref = self._reference.to(flat.dtype)
            if flat.shape[1] != ref.shape[0]:
                raise InvalidTargetError(f"layer {self.layer_id} does not match the reference activation")
            num = flat @ ref
            den = flat.norm(dim=1) * ref.norm() + _COS_EPS
            return num / den
        raise InvalidTargetError(f"unknown objective kind {self.kind!r}")

    def per_sample(self, model, x) -> torch.Tensor:
        act = model.forward_activations(x, self.layer_id)
        return self.values(act)

    def __call__(self, model, x) -> torch.Tensor:
        return self.per_sample(model, as_batch(x)).mean()

    def to_dict(self) -> dict:
        return {"kind": self.kind, "layer": self.layer_id, "descriptor": self.descriptor or str(self)}

    def __str__(self):
        if self.descriptor:
            return self.descriptor
        if self.kind == "logit":
            return f"logit:{self.target}"
        if self.kind == "channel":
            return f"channel:{self.layer_id}:{self.target}"
        return f"{self.kind}:{self.layer_id}"


def logit_objective(class_index: int) -> Objective:
    """Pre-softmax logit of ``class_index``."""
    return Objective("logit", LOGITS, int(class_index), f"logit:{int(class_index)}")


def channel_objective(layer_id: str, channel_index: int) -> Objective:
    """Spatial mean of one channel of ``layer_id``."""
    return Objective("channel", layer_id, int(channel_index), f"channel:{layer_id}:{int(channel_index)}")


def direction_objective(layer_id: str, vector, descriptor: str = "") -> Objective:
    """Inner product of the spatially pooled activation with ``vector / |vector|``."""
    v = np.asarray(vector, dtype=np.float64).ravel()
    norm = np.linalg.norm(v)
    if not np.isfinite(norm) or norm == 0:
        raise InvalidTargetError("direction vector must be finite and non-zero")
    v = v / norm
    v.setflags(write=False)
    return Objective("direction", layer_id, v, descriptor or f"direction:{layer_id}")


def inversion_objective(layer_id: str, reference_image, model, descriptor: str = "") -> Objective:
    """Cosine similarity to the activation ``model`` produces on ``reference_image``.

    The reference activation is captured once, here.
    """
    model.check_layer(layer_id)
    x = as_batch(reference_image)
    if x.shape[0] != 1:
        raise InvalidInputError("inversion takes a single reference image")
    h, w, c = model.input_size
    if tuple(x.shape[1:]) != (c, h, w):
        raise InvalidInputError(f"reference image {tuple(x.shape[1:])} does not match model input {(c, h, w)}")
    with torch.no_grad():
        ref = model.forward_activations(x.to(model.dtype), layer_id).reshape(-1).detach().clone()
    return Objective("inversion", layer_id, None, descriptor or f"inversion:{layer_id}", _reference=ref)


def _read_vector(path):
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    return np.array([float(t) for t in path.read_text().replace(",", " ").split()])


def parse_objective(descriptor: str, model) -> Objective:
    """Build an objective from its CLI form.

    ``logit:<class>``, ``channel:<layer>:<idx>``, ``direction:<layer>:@<vectorfile>``
    or ``inversion:<layer>:@<imagefile>``.
    """
    parts = descriptor.split(":", 2)
    kind = parts[0]
    try:
        if kind == "logit" and len(parts) == 2:
            return logit_objective(int(parts[1]))
        if kind == "channel" and len(parts) == 3:
            model.check_layer(parts[1])
            return channel_objective(parts[1], int(parts[2]))
        if kind in ("direction", "inversion") and len(parts) == 3 and parts[2].startswith("@"):
            model.check_layer(parts[1])
            source = parts[2][1:]
            if kind == "direction":
                return direction_objective(parts[1], _read_vector(source), descriptor)
            h, w, _ = model.input_size
            return inversion_objective(parts[1], load_image(source, (h, w)), model, descriptor)
    except ValueError as exc:
        if isinstance(exc, InvalidTargetError):
            raise
        raise InvalidTargetError(f"malformed objective {descriptor!r}: {exc}") from exc
    raise InvalidTargetError(f"malformed objective {descriptor!r}")
