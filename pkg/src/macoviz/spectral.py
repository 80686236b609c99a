"""Real-image 2-D DFT, polar decomposition and Hermitian reconstruction.

Spectra live on the half plane returned by a real-input FFT, shape
``[C, H, W // 2 + 1]``. Two groups of half-plane bins need care when going
back to pixels:

* self-conjugate bins (DC, and the Nyquist row/column for even sizes) must
  hold a real value, so they are projected to ``r * cos(phi)``;
* in column 0 (and the Nyquist column when ``W`` is even) the rows
  ``H - k`` are the conjugates of rows ``k``; only the rows ``0 < k < H / 2``
  are free, the mirrored rows are rebuilt from them.

With that completion the inverse transform is real by construction, and
``decompose(recompose(r, phi)).magnitude == r`` on every bin that is not
self-conjugate whenever ``r`` is itself Hermitian-symmetric (true for any
average of real-image magnitudes).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np
import torch

from .errors import EmptyDatasetError, FormatError, InvalidInputError
from .transforms import resize_bilinear

__all__ = [
    "Spectrum",
    "MagnitudeTemplate",
    "decompose",
    "recompose",
    "recompose_torch",
    "recompose_cartesian_torch",
    "half_width",
    "self_conjugate_mask",
    "mirrored_mask",
    "radial_frequency",
    "compute_magnitude_template",
    "save_template",
    "load_template",
]

TEMPLATE_MAGIC = b"MACOMAG1"
TEMPLATE_VERSION = 1
_MAX_DIM = 1 << 16


def half_width(width: int) -> int:
    return width // 2 + 1


def _special_columns(width):
    return (0, width // 2) if width % 2 == 0 else (0,)


@lru_cache(maxsize=64)
def _completion_plan(height, width):
    """Gather index and imaginary-part sign for Hermitian completion."""
    wh = half_width(width)
    src = np.arange(height * wh).reshape(height, wh)
    sign = np.ones((height, wh))
    for c in _special_columns(width):
        for k in range(height):
            if k == 0 or 2 * k == height:
                sign[k, c] = 0.0
            elif 2 * k > height:
                src[k, c] = (height - k) * wh + c
                sign[k, c] = -1.0
    src.setflags(write=False)
    sign.setflags(write=False)
    return src.ravel(), sign


def self_conjugate_mask(height: int, width: int) -> np.ndarray:
    """Bins whose DFT value is necessarily real for a real image."""
    _, sign = _completion_plan(height, width)
    mask = np.zeros_like(sign, dtype=bool)
    for c in _special_columns(width):
        mask[:, c] = sign[:, c] == 0.0
    return mask


def mirrored_mask(height: int, width: int) -> np.ndarray:
    """Half-plane bins rebuilt as conjugates of other bins (not free parameters)."""
    _, sign = _completion_plan(height, width)
    return sign < 0


def radial_frequency(height: int, width: int) -> np.ndarray:
    """Radial frequency in cycles/pixel on the half-plane grid (Nyquist = 0.5)."""
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    return np.sqrt(fy * fy + fx * fx)


@lru_cache(maxsize=64)
def _torch_plan(height, width):
    src, sign = _completion_plan(height, width)
    return torch.from_numpy(src.copy()), torch.from_numpy(sign.copy())


def _complete(re, im, height, width):
    src, sign = _completion_plan(height, width)
    lead = re.shape[:-2]
    if isinstance(re, torch.Tensor):
        index, sgn = _torch_plan(height, width)
        index = index.to(re.device)
        sgn = sgn.to(dtype=im.dtype, device=im.device)
        re = re.reshape(*lead, -1)[..., index].reshape(re.shape)
        im = im.reshape(*lead, -1)[..., index].reshape(im.shape) * sgn
    else:
        re = re.reshape(*lead, -1)[..., src].reshape(re.shape)
        im = im.reshape(*lead, -1)[..., src].reshape(im.shape) * sign
    return re, im


@dataclass(frozen=True)
class Spectrum:
    magnitude: np.ndarray
    phase: np.ndarray
    height: int
    width: int


@dataclass
class MagnitudeTemplate:
    magnitude: np.ndarray  # float32 [C, H, Wh]
    source_count: int
    source_label: str = ""
    width: int | None = None

    def __post_init__(self):
        self.magnitude = np.ascontiguousarray(self.magnitude, dtype=np.float32)
        if self.magnitude.ndim != 3:
            raise InvalidInputError("template magnitude must be [C, H, W//2+1]")
        if np.any(self.magnitude < 0):
            raise InvalidInputError("template magnitude must be non-negative")
        if self.width is None:
            self.width = 2 * (self.magnitude.shape[2] - 1)
        if half_width(self.width) != self.magnitude.shape[2]:
            raise InvalidInputError(
                f"width {self.width} inconsistent with half-plane size {self.magnitude.shape[2]}"
            )

    @property
    def channels(self) -> int:
        return self.magnitude.shape[0]

    @property
    def height(self) -> int:
        return self.magnitude.shape[1]

    @property
    def size(self) -> tuple[int, int]:
        return self.height, self.width


def _wrap(phase):
    wrapped = np.mod(phase + np.pi, 2 * np.pi) - np.pi
    return np.where(wrapped >= np.pi, wrapped - 2 * np.pi, wrapped)


def decompose(image) -> Spectrum:
    """Polar half-plane spectrum of a real ``[C, H, W]`` image."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3:
        raise InvalidInputError(f"expected a [C, H, W] image, got shape {x.shape}")
    if x.shape[1] < 2 or x.shape[2] < 2:
        raise InvalidInputError("image must be at least 2x2")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("image contains non-finite values")
    z = np.fft.rfft2(x)
    return Spectrum(np.abs(z), _wrap(np.angle(z)), x.shape[1], x.shape[2])


def recompose(magnitude, phase, height: int, width: int) -> np.ndarray:
    """Real image from a half-plane magnitude/phase pair."""
    r = np.asarray(magnitude, dtype=np.float64)
    phi = np.asarray(phase, dtype=np.float64)
    if r.shape != phi.shape or r.ndim != 3 or r.shape[1:] != (height, half_width(width)):
        raise InvalidInputError(
            f"magnitude {r.shape} / phase {phi.shape} do not match a {height}x{width} half plane"
        )
    if np.any(r < 0):
        raise InvalidInputError("magnitude must be non-negative")
    re, im = _complete(r * np.cos(phi), r * np.sin(phi), height, width)
    return np.fft.irfft2(re + 1j * im, s=(height, width))


def recompose_torch(magnitude: torch.Tensor, phase: torch.Tensor, height: int, width: int):
    """Differentiable counterpart of :func:`recompose` for ``[..., C, H, Wh]`` tensors."""
    re, im = _complete(magnitude * torch.cos(phase), magnitude * torch.sin(phase), height, width)
    return torch.fft.irfft2(torch.complex(re, im), s=(height, width))


def recompose_cartesian_torch(re: torch.Tensor, im: torch.Tensor, height: int, width: int):
    """Real image from a cartesian half-plane spectrum, with the same completion."""
    re, im = _complete(re, im, height, width)
    return torch.fft.irfft2(torch.complex(re, im), s=(height, width))


def compute_magnitude_template(
    images: Iterable, target_size: tuple[int, int], label: str = ""
) -> MagnitudeTemplate:
    """Elementwise mean of ``|F(x)|`` over ``images``, each resized to ``target_size``."""
    height, width = target_size
    total = None
    count = 0
    for image in images:
        x = np.asarray(image, dtype=np.float64)
        if x.shape[1:] != (height, width):
            x = resize_bilinear(x, (height, width))
        mag = decompose(x).magnitude
        if total is None:
            total = np.zeros_like(mag)
        elif mag.shape != total.shape:
            raise InvalidInputError("images disagree on channel count")
        total += mag
        count += 1
    if count == 0:
        raise EmptyDatasetError("no images to average")
    return MagnitudeTemplate(total / count, count, label, width)


def save_template(template: MagnitudeTemplate, path) -> None:
    label = template.source_label.encode("utf-8")
    c, h, wh = template.magnitude.shape
    buf = io.BytesIO()
    buf.write(TEMPLATE_MAGIC)
    buf.write(struct.pack("<IIIIQI", TEMPLATE_VERSION, c, h, wh, template.source_count, len(label)))
    buf.write(label)
    buf.write(template.magnitude.astype("<f4").tobytes(order="C"))
    Path(path).write_bytes(buf.getvalue())


def load_template(path, width: int | None = None) -> MagnitudeTemplate:
    """Read a template file; ``width`` defaults to the even size implied by the half plane."""
    data = Path(path).read_bytes()
    if data[:8] != TEMPLATE_MAGIC:
        raise FormatError("bad magic bytes, not a magnitude template", 0)
    header = struct.calcsize("<IIIIQI")
    if len(data) < 8 + header:
        raise FormatError("truncated header", len(data))
    version, c, h, wh, count, lab_len = struct.unpack_from("<IIIIQI", data, 8)
    if version != TEMPLATE_VERSION:
        raise FormatError(f"unsupported version {version}", 8)
    for offset, dim in ((12, c), (16, h), (20, wh)):
        if dim == 0 or dim > _MAX_DIM:
            raise FormatError(f"dimension {dim} out of range", offset)
    pos = 8 + header
    if pos + lab_len > len(data):
        raise FormatError(f"label declares {lab_len} bytes, file truncated", pos)
    try:
        label = data[pos : pos + lab_len].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("label is not valid UTF-8", pos) from exc
    pos += lab_len
    nbytes = 4 * c * h * wh
    if pos + nbytes > len(data):
        raise FormatError(
            f"payload declares {nbytes} bytes but only {len(data) - pos} remain", pos
        )
    if pos + nbytes != len(data):
        raise FormatError("trailing bytes after payload", pos + nbytes)
    mag = np.frombuffer(data, dtype="<f4", count=c * h * wh, offset=pos).reshape(c, h, wh)
    return MagnitudeTemplate(mag.astype(np.float32), int(count), label, width)
