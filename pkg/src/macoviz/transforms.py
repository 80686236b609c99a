"""Stochastic robustness transformations applied to candidates during optimization.

A :class:`TransformPipeline` is a pure function of ``(seed, step_index)``:
every sampled parameter comes from a generator seeded with that pair, so a
run can be replayed from its config alone. Transforms operate on torch
tensors so gradients flow back to the canvas.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidInputError

__all__ = [
    "resize_bilinear",
    "add_uniform_noise",
    "sample_crop_fraction",
    "random_crop_resize",
    "UniformNoise",
    "CropResize",
    "Pad",
    "Jitter",
    "RandomScale",
    "RandomRotate",
    "TransformPipeline",
    "sample_and_apply",
    "maco_pipeline",
    "baseline_pipeline",
]


def resize_bilinear(image, size):
    """Bilinear resize (no antialiasing) of a ``[..., C, H, W]`` array or tensor."""
    size = tuple(int(s) for s in size)
    as_numpy = not isinstance(image, torch.Tensor)
    x = torch.from_numpy(np.asarray(image, dtype=np.float64)) if as_numpy else image
    if tuple(x.shape[-2:]) == size:
        out = x
    else:
        lead = x.shape[:-2]
        flat = x.reshape(-1, 1, *x.shape[-2:])
        out = F.interpolate(flat, size=size, mode="bilinear", align_corners=False)
        out = out.reshape(*lead, *size)
    return out.numpy() if as_numpy else out


def _rng(seed, step_index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(step_index)]))


def add_uniform_noise(image: torch.Tensor, amplitude: float, rng: np.random.Generator):
    """``image + delta`` with ``delta ~ U(-amplitude, amplitude)`` i.i.d. per element."""
    if amplitude < 0:
        raise InvalidInputError("noise amplitude must be non-negative")
    if amplitude == 0:
        return image
    delta = rng.uniform(-amplitude, amplitude, size=tuple(image.shape))
    return image + torch.as_tensor(delta, dtype=image.dtype)


def sample_crop_fraction(rng, mean_frac=0.25, std_frac=0.1, low=0.05, high=0.95) -> float:
    return float(np.clip(rng.normal(mean_frac, std_frac), low, high))


def _crop_window(rng, height, width, frac):
    side = max(2, int(round(frac * min(height, width))))
    top = int(rng.integers(0, height - side + 1))
    left = int(rng.integers(0, width - side + 1))
    return top, left, side


def random_crop_resize(image, mean_frac=0.25, std_frac=0.1, out_size=None, rng=None):
    """Square crop of side ``s * min(H, W)``, ``s ~ N(mean_frac, std_frac)`` clamped
    to ``[0.05, 0.95]``, placed uniformly, then bilinearly resized to ``out_size``."""
    h, w = image.shape[-2:]
    out_size = out_size or (h, w)
    if min(out_size) < 2:
        raise InvalidInputError("crop output size must be at least 2x2")
    frac = sample_crop_fraction(rng, mean_frac, std_frac)
    top, left, side = _crop_window(rng, h, w, frac)
    return resize_bilinear(image[..., top : top + side, left : left + side], out_size)


# Each step draws its parameters from the shared generator (`sample`) and
# applies them deterministically (`apply`).


@dataclass(frozen=True)
class UniformNoise:
    amplitude: float = 0.1
    kind: str = field(default="noise", init=False)

    def sample(self, rng, shape):
        if self.amplitude < 0:
            raise InvalidInputError("noise amplitude must be non-negative")
        if self.amplitude == 0:
            return None
        return rng.uniform(-self.amplitude, self.amplitude, size=shape)

    def apply(self, x, params, out_size):
        return x if params is None else x + torch.as_tensor(params, dtype=x.dtype)


@dataclass(frozen=True)
class CropResize:
    mean_frac: float = 0.25
    std_frac: float = 0.1
    low: float = 0.05
    high: float = 0.95
    kind: str = field(default="crop", init=False)

    def sample(self, rng, shape):
        frac = sample_crop_fraction(rng, self.mean_frac, self.std_frac, self.low, self.high)
        return _crop_window(rng, shape[-2], shape[-1], frac)

    def apply(self, x, params, out_size):
        top, left, side = params
        return resize_bilinear(x[..., top : top + side, left : left + side], out_size)


@dataclass(frozen=True)
class Pad:
    pixels: int = 16
    mode: str = "reflect"
    kind: str = field(default="pad", init=False)

    def sample(self, rng, shape):
        return None

    def apply(self, x, params, out_size):
        p = self.pixels
        flat = x.reshape(-1, *x.shape[-3:])
        padded = F.pad(flat, (p, p, p, p), mode=self.mode)
        return padded.reshape(*x.shape[:-2], *padded.shape[-2:])


@dataclass(frozen=True)
class Jitter:
    """Random crop removing ``pixels`` rows and columns (shifts content by up to that)."""

    pixels: int = 16
    kind: str = field(default="jitter", init=False)

    def sample(self, rng, shape):
        return int(rng.integers(0, self.pixels + 1)), int(rng.integers(0, self.pixels + 1))

    def apply(self, x, params, out_size):
        dy, dx = params
        h, w = x.shape[-2:]
        return x[..., dy : h - self.pixels + dy, dx : w - self.pixels + dx]


def _affine(x, theta):
    flat = x.reshape(-1, *x.shape[-3:])
    mat = torch.as_tensor(theta, dtype=x.dtype).expand(flat.shape[0], 2, 3)
    grid = F.affine_grid(mat, list(flat.shape), align_corners=False)
    out = F.grid_sample(flat, grid, mode="bilinear", padding_mode="reflection", align_corners=False)
    return out.reshape(x.shape)


@dataclass(frozen=True)
class RandomScale:
    low: float = 0.95
    high: float = 1.05
    kind: str = field(default="scale", init=False)

    def sample(self, rng, shape):
        return float(rng.uniform(self.low, self.high))

    def apply(self, x, params, out_size):
        s = 1.0 / params
        return _affine(x, [[s, 0.0, 0.0], [0.0, s, 0.0]])


@dataclass(frozen=True)
class RandomRotate:
    degrees: float = 5.0
    kind: str = field(default="rotate", init=False)

    def sample(self, rng, shape):
        return float(rng.uniform(-self.degrees, self.degrees))

    def apply(self, x, params, out_size):
        a = math.radians(params)
        c, s = math.cos(a), math.sin(a)
        return _affine(x, [[c, -s, 0.0], [s, c, 0.0]])


_STEP_TYPES = {cls.kind: cls for cls in (UniformNoise, CropResize, Pad, Jitter, RandomScale, RandomRotate)}


@dataclass(frozen=True)
class TransformPipeline:
    """Ordered transform steps; output is always resized to ``out_size``."""

    steps: tuple
    out_size: tuple[int, int]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "out_size", tuple(int(s) for s in self.out_size))

    def with_seed(self, seed: int) -> "TransformPipeline":
        return TransformPipeline(self.steps, self.out_size, int(seed))

    def sample(self, step_index: int, shape) -> list:
        rng = _rng(self.seed, step_index)
        params = []
        for step in self.steps:
            params.append(step.sample(rng, tuple(shape)))
            shape = _shape_after(step, shape, self.out_size)
        return params

    def apply(self, image: torch.Tensor, step_index: int) -> torch.Tensor:
        x = image
        for step, params in zip(self.steps, self.sample(step_index, image.shape)):
            x = step.apply(x, params, self.out_size)
        return resize_bilinear(x, self.out_size)

    def to_dict(self) -> dict:
        return {
            "steps": [asdict(s) for s in self.steps],
            "out_size": list(self.out_size),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TransformPipeline":
        steps = []
        for d in data["steps"]:
            d = dict(d)
            steps.append(_STEP_TYPES[d.pop("kind")](**d))
        return cls(tuple(steps), tuple(data["out_size"]), int(data.get("seed", 0)))


def _shape_after(step, shape, out_size):
    shape = tuple(shape)
    if isinstance(step, CropResize):
        return shape[:-2] + tuple(out_size)
    if isinstance(step, Pad):
        return shape[:-2] + (shape[-2] + 2 * step.pixels, shape[-1] + 2 * step.pixels)
    if isinstance(step, Jitter):
        return shape[:-2] + (shape[-2] - step.pixels, shape[-1] - step.pixels)
    return shape


def sample_and_apply(pipeline: TransformPipeline, image: torch.Tensor, step_index: int):
    if not pipeline.steps:
        raise InvalidInputError("pipeline has no steps")
    return pipeline.apply(image, step_index)


def maco_pipeline(out_size, seed=0, noise=0.1, crop=True, crop_mean=0.25, crop_std=0.1):
    """Uniform noise followed by random crop-resize; either may be switched off."""
    steps = []
    if noise:
        steps.append(UniformNoise(noise))
    if crop:
        steps.append(CropResize(crop_mean, crop_std))
    return TransformPipeline(tuple(steps), out_size, seed)


def baseline_pipeline(out_size, seed=0):
    """Fixed stand-in for the usual ten-transform robustness list of Fourier/pixel methods."""
    steps = (
        Pad(16),
        Jitter(16),
        RandomScale(0.95, 1.05),
        RandomRotate(5.0),
        Jitter(8),
    )
    return TransformPipeline(steps, out_size, seed)
