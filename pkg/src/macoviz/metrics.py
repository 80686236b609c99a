"""Scores for comparing feature-visualization methods.

* plausibility: mean distance from each visualization to its k-th nearest
  natural image of the same class, in L2-normalized deep-feature space;
* FID: Frechet distance between Gaussian fits of two feature sets;
* transferability: top-1 accuracy of other classifiers on the visualizations;
* spectrum report: dataset-mean magnitude spectrum and its high-frequency
  energy share.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from .errors import InvalidInputError, NumericFailureError
from .transforms import resize_bilinear

__all__ = [
    "FID_CROP_RATIO",
    "model_features",
    "l2_normalize",
    "plausibility_from_features",
    "plausibility_knn",
    "fid",
    "transferability",
    "center_crop",
    "full_plane_magnitude",
    "hf_ratio_from_magnitude",
    "spectrum_report",
    "template_hf_ratio",
    "apply_transparency",
]

FID_CROP_RATIO = 299 / 512
_COV_REG = 1e-6
_EIG_TOL = 1e-6


def _stack(images) -> np.ndarray:
    if isinstance(images, np.ndarray) and images.ndim == 4:
        return images
    images = [np.asarray(x) for x in images]
    if not images:
        raise InvalidInputError("empty image set")
    return np.stack(images)


def model_features(model, images, layer_id=None, batch_size=250) -> np.ndarray:
    """Activations at ``layer_id`` (penultimate by default), spatially averaged, ``[n, d]``.

    Images are bilinearly resized to the model input first.
    """
    layer_id = layer_id or model.penultimate
    model.check_layer(layer_id)
    x = _stack(images)
    h, w, _ = model.input_size
    out = []
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            chunk = torch.from_numpy(np.ascontiguousarray(x[start : start + batch_size], dtype=np.float32))
            chunk = resize_bilinear(chunk, (h, w)).to(getattr(model, "dtype", torch.float32))
            act = model.forward_activations(chunk, layer_id)
            if act.ndim == 4:
                act = act.mean(dim=(2, 3))
            out.append(act.reshape(act.shape[0], -1).double().numpy())
    return np.concatenate(out)


def l2_normalize(features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    norm = np.sqrt((f * f).sum(axis=1, keepdims=True))
    return f / np.where(norm > 0, norm, 1.0)


def plausibility_from_features(viz_features, class_features, k: int = 1) -> float:
    """Mean over rows of ``viz_features`` of the distance to the k-th nearest class feature."""
    a = np.asarray(viz_features, dtype=np.float64)
    b = np.asarray(class_features, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise InvalidInputError("plausibility needs non-empty visualization and class sets")
    if len(b) < k:
        raise InvalidInputError(f"need at least k={k} class images, got {len(b)}")
    diff = a[:, None, :] - b[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    kth = np.sort(dist, axis=1)[:, k - 1]
    # correctly rounded, so the score does not depend on summation order
    return math.fsum(kth.tolist()) / len(kth)


def plausibility_knn(viz_images, class_images, model, layer_id=None, k: int = 1) -> float:
    """Deep k-NN plausibility; lower means closer to natural images of the class."""
    if len(viz_images) == 0 or len(class_images) == 0:
        raise InvalidInputError("plausibility needs non-empty visualization and class sets")
    fv = l2_normalize(model_features(model, viz_images, layer_id))
    fc = l2_normalize(model_features(model, class_images, layer_id))
    return plausibility_from_features(fv, fc, k)


def _sqrt_psd(mat):
    vals, vecs = np.linalg.eigh(mat)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _cov(x):
    return np.atleast_2d(np.cov(x, rowvar=False)) + _COV_REG * np.eye(x.shape[1])


def fid(features_a, features_b) -> float:
    """Frechet distance between Gaussian fits of two ``[n, d]`` feature sets.

    The cross term uses the eigenvalues of the symmetric product
    ``S_a^1/2 S_b S_a^1/2``; the inputs are put in a canonical order first, so
    ``fid(a, b) == fid(b, a)`` bit for bit.
    """
    a = np.ascontiguousarray(features_a, dtype=np.float64)
    b = np.ascontiguousarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"feature sets must be [n, d] with equal d, got {a.shape} and {b.shape}")
    if len(a) < 2 or len(b) < 2:
        raise InvalidInputError("each feature set needs at least 2 rows")
    if (a.shape, a.tobytes()) > (b.shape, b.tobytes()):
        a, b = b, a
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a, cov_b = _cov(a), _cov(b)
    root_a = _sqrt_psd(cov_a)
    prod = root_a @ cov_b @ root_a
    eig = np.linalg.eigvalsh((prod + prod.T) / 2)
    tol = _EIG_TOL * max(1.0, float(np.abs(eig).max()))
    if eig.min() < -tol:
        raise NumericFailureError(f"covariance product has eigenvalue {eig.min():.3g} below tolerance")
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.sqrt(np.clip(eig, 0.0, None)).sum()
    return float(max(value, 0.0))


def transferability(viz_images_by_class: dict, models: dict) -> dict:
    """Top-1 accuracy of each model at recognizing visualizations as their target class."""
    if not models:
        raise InvalidInputError("no transfer models")
    labels, images = [], []
    for k, imgs in sorted(viz_images_by_class.items()):
        for img in imgs:
            labels.append(int(k))
            images.append(np.asarray(img))
    if not images:
        raise InvalidInputError("no visualizations")
    labels = np.asarray(labels)
    out = {}
    for model_id, model in models.items():
        if labels.max() >= model.class_count or labels.min() < 0:
            raise InvalidInputError(
                f"model {model_id} has {model.class_count} classes; visualization labels reach {labels.max()}"
            )
        logits = model_features(model, images, "logits")
        out[model_id] = float((logits.argmax(axis=1) == labels).mean())
    return out


def center_crop(images, ratio: float = FID_CROP_RATIO) -> np.ndarray:
    x = _stack(images)
    h, w = x.shape[-2:]
    ch, cw = max(1, int(round(h * ratio))), max(1, int(round(w * ratio)))
    top, left = (h - ch) // 2, (w - cw) // 2
    return x[..., top : top + ch, left : left + cw]


def full_plane_magnitude(half, width: int) -> np.ndarray:
    """Expand a half-plane magnitude ``[..., H, W//2+1]`` to the full ``[..., H, W]`` plane."""
    half = np.asarray(half)
    h = half.shape[-2]
    rows = (-np.arange(h)) % h
    cols = np.arange(width)
    src_col = np.where(cols <= width // 2, cols, width - cols)
    mirror = cols > width // 2
    out = half[..., :, src_col].copy()
    out[..., :, mirror] = half[..., rows, :][..., :, src_col[mirror]]
    return out


def _full_frequency(h, w):
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    return np.sqrt(fy * fy + fx * fx)


def hf_ratio_from_magnitude(magnitude) -> float:
    """Share of non-DC spectral energy above half the Nyquist frequency (0.25 cycles/pixel)."""
    m = np.asarray(magnitude, dtype=np.float64)
    energy = m * m
    energy[0, 0] = 0.0
    total = energy.sum()
    if total <= 0:
        return 0.0
    high = _full_frequency(*m.shape) > 0.25
    return float(energy[high].sum() / total)


def spectrum_report(images):
    """Channel-averaged mean magnitude spectrum of ``images``.

    Returns the fftshifted ``log(1 + mean |F(x)|)`` map and the hf ratio of the
    mean magnitude.
    """
    x = _stack(images).astype(np.float64)
    if x.ndim != 4:
        raise InvalidInputError("expected images as [N, C, H, W]")
    mean_mag = np.abs(np.fft.fft2(x)).mean(axis=(0, 1))
    return np.fft.fftshift(np.log1p(mean_mag)), hf_ratio_from_magnitude(mean_mag)


def template_hf_ratio(template) -> float:
    mag = full_plane_magnitude(template.magnitude.astype(np.float64), template.width)
    return hf_ratio_from_magnitude(mag.mean(axis=0))


def apply_transparency(image, alpha) -> np.ndarray:
    """Composite ``image`` over its own mean colour using ``alpha`` as opacity."""
    x = np.asarray(image, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)[None]
    background = x.mean(axis=(1, 2), keepdims=True)
    return (a * x + (1 - a) * background).astype(np.float32)
