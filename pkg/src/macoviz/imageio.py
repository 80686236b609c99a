"""PNG / JSON / NumPy artifact reading and writing."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyDatasetError
from .transforms import resize_bilinear

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


def to_uint8(x) -> np.ndarray:
    return np.round(np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image, alpha=None) -> None:
    """Write an 8-bit RGBA PNG from a ``[3, H, W]`` image and optional ``[H, W]`` mask."""
    rgb = to_uint8(image).transpose(1, 2, 0)
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    a = np.full(rgb.shape[:2], 255, np.uint8) if alpha is None else to_uint8(alpha)
    Image.fromarray(np.dstack([rgb, a]), mode="RGBA").save(path, format="PNG", optimize=False)


def load_image(path, size=None) -> np.ndarray:
    """RGB image as float32 ``[3, H, W]`` in ``[0, 1]``; ``.npy`` arrays load as stored."""
    path = Path(path)
    if path.suffix == ".npy":
        x = np.load(path).astype(np.float32)
    else:
        with Image.open(path) as im:
            x = np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1) / 255.0
    if size is not None and tuple(x.shape[-2:]) != tuple(size):
        x = resize_bilinear(x, size).astype(np.float32)
    return x


def list_images(directory, suffixes=IMAGE_SUFFIXES) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in suffixes)


def load_image_dir(directory, size=None, suffixes=IMAGE_SUFFIXES) -> list[np.ndarray]:
    paths = list_images(directory, suffixes)
    if not paths:
        raise EmptyDatasetError(f"no images in {directory}")
    return [load_image(p, size) for p in paths]


def write_json(path, document) -> None:
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True, default=_plain) + "\n")


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def save_result(result, directory, name="visualization") -> tuple[Path, Path]:
    """PNG (alpha = transparency mask) plus JSON sidecar and lossless ``.npy`` reconstruction."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    png = directory / f"{name}.png"
    sidecar = directory / f"{name}.json"
    save_png(png, result.image, result.alpha)
    np.save(directory / f"{name}.npy", result.raw.astype(np.float32), allow_pickle=False)
    write_json(sidecar, result.sidecar())
    return png, sidecar
