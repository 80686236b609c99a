"""Procedural ten-class shapes dataset used as the hermetic testbed.

Every image is drawn from per-image parameters sampled before rendering, so
the same ``(n, seed)`` renders the same scenes at any resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError

CLASS_NAMES = (
    "disk",
    "square",
    "triangle",
    "ring",
    "cross",
    "star",
    "stripe-grid",
    "checker",
    "blob",
    "crescent",
)
NUM_CLASSES = len(CLASS_NAMES)
_SUPERSAMPLE = 3


@dataclass
class ShapesDataset:
    images: np.ndarray  # float32 [N, 3, H, W] in [0, 1]
    labels: np.ndarray  # int64 [N]
    generator_seed: int

    class_names = CLASS_NAMES

    def __len__(self):
        return len(self.labels)

    @property
    def size(self) -> int:
        return self.images.shape[-1]

    def subset(self, index) -> "ShapesDataset":
        return ShapesDataset(self.images[index], self.labels[index], self.generator_seed)

    def split(self, held_out_fraction=0.1):
        """Stratified split; the last images of each class are held out."""
        train, test = [], []
        for k in range(NUM_CLASSES):
            idx = np.flatnonzero(self.labels == k)
            cut = len(idx) - max(1, int(round(held_out_fraction * len(idx))))
            train.append(idx[:cut])
            test.append(idx[cut:])
        train = np.sort(np.concatenate(train))
        test = np.sort(np.concatenate(test))
        return self.subset(train), self.subset(test)

    def of_class(self, k: int) -> np.ndarray:
        return self.images[self.labels == k]


def _in_polygon(px, py, verts):
    inside = np.zeros(px.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xint)
    return inside


def _regular(n, radius, offset=np.pi / 2):
    a = offset + 2 * np.pi * np.arange(n) / n
    return np.stack([radius * np.cos(a), radius * np.sin(a)], axis=1)


_TRIANGLE = _regular(3, 1.05)
_STAR = np.empty((10, 2))
_STAR[0::2] = _regular(5, 1.05)
_STAR[1::2] = _regular(5, 0.45, np.pi / 2 + np.pi / 5)


def _shape_mask(cls, px, py, extra):
    r = np.hypot(px, py)
    box = np.maximum(np.abs(px), np.abs(py))
    name = CLASS_NAMES[cls]
    if name == "disk":
        return r <= 0.9
    if name == "square":
        return box <= 0.78
    if name == "triangle":
        return _in_polygon(px, py, _TRIANGLE)
    if name == "ring":
        return (r <= 1.0) & (r >= 0.62)
    if name == "cross":
        return ((np.abs(px) <= 0.3) & (np.abs(py) <= 1.0)) | ((np.abs(py) <= 0.3) & (np.abs(px) <= 1.0))
    if name == "star":
        return _in_polygon(px, py, _STAR)
    if name == "stripe-grid":
        lines = (np.mod(px * 2.0 + 0.15, 1.0) < 0.3) | (np.mod(py * 2.0 + 0.15, 1.0) < 0.3)
        return (box <= 0.9) & lines
    if name == "checker":
        cells = (np.floor(px * 2.2) + np.floor(py * 2.2)) % 2 == 0
        return (box <= 0.9) & cells
    if name == "blob":
        t = np.arctan2(py, px)
        a3, p3, a5, p5 = extra
        return r <= 0.8 * (1 + a3 * np.sin(3 * t + p3) + a5 * np.sin(5 * t + p5))
    if name == "crescent":
        return (r <= 1.0) & (np.hypot(px - 0.45, py) > 0.78)
    raise AssertionError(cls)


def _sample_params(rng, label):
    fg = rng.uniform(0, 1, 3)
    bg = rng.uniform(0, 1, 3)
    while np.abs(fg - bg).mean() < 0.3:
        bg = rng.uniform(0, 1, 3)
    return {
        "label": label,
        "fg": fg,
        "bg": bg,
        "center": rng.uniform(-0.4, 0.4, 2),  # +-20 % of the canvas side
        "scale": 0.5 * rng.uniform(0.75, 1.25),
        "angle": rng.uniform(0, 2 * np.pi),
        "blob": (rng.uniform(0.1, 0.25), rng.uniform(0, 2 * np.pi), rng.uniform(0.05, 0.15), rng.uniform(0, 2 * np.pi)),
        "tex_freq": rng.uniform(1.0, 4.0, 3),
        "tex_angle": rng.uniform(0, np.pi, 3),
        "tex_phase": rng.uniform(0, 2 * np.pi, 3),
        "tex_amp": rng.uniform(0.02, 0.08, (3, 3)),
    }


def _render(params, size):
    s = size * _SUPERSAMPLE
    coords = (np.arange(s) + 0.5) / s * 2 - 1
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    ca, sa = np.cos(params["angle"]), np.sin(params["angle"])
    dx, dy = xx - params["center"][0], yy - params["center"][1]
    px = (ca * dx + sa * dy) / params["scale"]
    py = (-sa * dx + ca * dy) / params["scale"]
    mask = _shape_mask(params["label"], px, py, params["blob"]).astype(np.float64)
    mask = mask.reshape(size, _SUPERSAMPLE, size, _SUPERSAMPLE).mean(axis=(1, 3))

    c = (np.arange(size) + 0.5) / size * 2 - 1
    yy, xx = np.meshgrid(c, c, indexing="ij")
    bg = np.empty((3, size, size))
    for ch in range(3):
        bg[ch] = params["bg"][ch]
        for f, a, p, amp in zip(params["tex_freq"], params["tex_angle"], params["tex_phase"], params["tex_amp"][ch]):
            bg[ch] += amp * np.sin(np.pi * f * (np.cos(a) * xx + np.sin(a) * yy) + p)
    img = bg * (1 - mask) + params["fg"][:, None, None] * mask
    return np.clip(img, 0.0, 1.0)


def generate_shapes_dataset(n: int, seed: int, size: int = 64) -> ShapesDataset:
    """Render ``n`` class-balanced shape images of ``size x size`` pixels."""
    if n < NUM_CLASSES:
        raise InvalidInputError(f"need at least {NUM_CLASSES} images, got {n}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % NUM_CLASSES)
    images = np.empty((n, 3, size, size), dtype=np.float32)
    for i, label in enumerate(labels):
        images[i] = _render(_sample_params(rng, int(label)), size)
    return ShapesDataset(images, labels.astype(np.int64), seed)
