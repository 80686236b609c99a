"""Differentiable model contract used by every optimizer and metric."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np
import torch
from torch import nn

from ..errors import InvalidTargetError, NumericFailureError

CONCURRENT_READ_SAFE = "concurrent-read-safe"
EXCLUSIVE = "exclusive"
LOGITS = "logits"


def as_batch(x, dtype=None) -> torch.Tensor:
    """Accept ``[C, H, W]`` / ``[B, C, H, W]`` arrays or tensors."""
    if not isinstance(x, torch.Tensor):
        x = torch.from_numpy(np.ascontiguousarray(x))
    if dtype is not None:
        x = x.to(dtype)
    return x.unsqueeze(0) if x.ndim == 3 else x


class ModelAdapter:
    """Forward-to-named-layer access to a classifier.

    Subclasses implement :meth:`forward_layers`. ``layer_catalog`` lists
    ``(layer_id, channel_count)`` in forward order and always ends with
    ``"logits"``.
    """

    name = "model"
    input_size: tuple[int, int, int]  # (H, W, C)
    class_count: int
    layer_catalog: list
    concurrency_class = CONCURRENT_READ_SAFE

    def forward_layers(self, x: torch.Tensor, layer_ids) -> dict:
        raise NotImplementedError

    @property
    def layer_ids(self) -> list[str]:
        return [name for name, _ in self.layer_catalog]

    def check_layer(self, layer_id: str) -> int:
        for name, channels in self.layer_catalog:
            if name == layer_id:
                return channels
        raise InvalidTargetError(f"unknown layer {layer_id!r}; model {self.name} has {self.layer_ids}")

    @property
    def penultimate(self) -> str:
        return self.layer_ids[-2]

    def forward_activations(self, x, layer_id: str) -> torch.Tensor:
        self.check_layer(layer_id)
        return self.forward_layers(as_batch(x), [layer_id])[layer_id]

    def logits(self, x) -> torch.Tensor:
        return self.forward_activations(x, LOGITS)

    def objective_input_gradient(self, objective, x):
        """Value of ``objective`` at ``x`` and its exact gradient w.r.t. ``x``."""
        single = getattr(x, "ndim", None) == 3
        xb = as_batch(x).detach().clone().requires_grad_(True)
        value = objective(self, xb)
        if not torch.isfinite(value):
            raise NumericFailureError("objective is not finite")
        (grad,) = torch.autograd.grad(value, xb, allow_unused=True)
        grad = torch.zeros_like(xb) if grad is None else grad
        grad = grad[0] if single else grad
        return float(value.detach()), grad.detach().numpy()

    def to(self, dtype) -> "ModelAdapter":
        return self


class TorchAdapter(ModelAdapter):
    """Adapter over an ordered list of named ``nn.Module`` stages.

    The output of stage ``name`` is the activation for layer ``name``; the last
    stage must be named ``"logits"``.
    """

    def __init__(self, stages, input_size, name="torch-model", concurrency_class=CONCURRENT_READ_SAFE):
        self.stages = OrderedDict(stages)
        if next(reversed(self.stages)) != LOGITS:
            raise ValueError("last stage must be named 'logits'")
        self.module = nn.Sequential(self.stages)
        self.module.eval()
        # NHWC convolutions run roughly a third faster on CPU.
        self.module.to(memory_format=torch.channels_last)
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.input_size = tuple(input_size)
        self.name = name
        self.concurrency_class = concurrency_class
        h, w, c = self.input_size
        dtype = next(self.module.parameters(), torch.zeros(())).dtype
        with torch.no_grad():
            acts = self.forward_layers(torch.zeros(1, c, h, w, dtype=dtype), list(self.stages))
        self.layer_catalog = [(n, int(a.shape[1]) if a.ndim > 1 else 1) for n, a in acts.items()]
        self.class_count = self.layer_catalog[-1][1]

    def forward_layers(self, x, layer_ids):
        wanted = set(layer_ids)
        for layer_id in wanted:
            if layer_id not in self.stages:
                raise InvalidTargetError(f"unknown layer {layer_id!r}; model {self.name} has {self.layer_ids}")
        out = {}
        if x.ndim == 4:
            x = x.contiguous(memory_format=torch.channels_last)
        for name, stage in self.stages.items():
            x = stage(x)
            if name in wanted:
                out[name] = x
                if len(out) == len(wanted):
                    break
        return out

    def state_dict(self) -> dict:
        return {k: v.detach().contiguous().numpy() for k, v in self.module.state_dict().items()}

    def to(self, dtype):
        self.module.to(dtype)
        return self

    @property
    def dtype(self):
        p = next(self.module.parameters(), None)
        return torch.float32 if p is None else p.dtype


class _Zero(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.channels = channels

    def forward(self, x):
        # Keeps the graph attached to x so gradients exist and are exactly zero.
        base = x.sum(dim=(1, 2, 3), keepdim=False) * 0.0
        return base[:, None].expand(-1, self.channels)


def zero_model(input_size=(32, 32, 3), class_count=10) -> TorchAdapter:
    """Model whose every activation is identically zero; any objective on it is constant."""
    stages = [("features", _Zero(class_count)), (LOGITS, nn.Identity())]
    adapter = TorchAdapter(stages, input_size, name="zero")
    return adapter
