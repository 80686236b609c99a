"""Concept extraction by non-negative factorization of patch activations.

Images are cut into a grid of patches, each patch is pushed through the model
and its spatially pooled (and ReLU-clamped) activation at one layer becomes a
row of ``A``. ``A ~= U W`` with ``U, W >= 0``; the rows of ``W`` are the
concepts and can be rendered with MACO as direction objectives.

Importance here is the mean coefficient of a concept over patches, a cheap
proxy rather than a variance-based sensitivity index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .container import load_tensors, save_tensors
from .errors import InvalidInputError, InvalidTargetError
from .maco import OptimizerConfig, maco_visualize
from .objectives import direction_objective
from .transforms import resize_bilinear

__all__ = [
    "IMPORTANCE_PROXY",
    "PatchRef",
    "ConceptBasis",
    "cut_patches",
    "patch_index_map",
    "extract_patch_activations",
    "nmf",
    "fit_concepts",
    "rank_concepts",
    "top_patches",
    "patch_label_agreement",
    "visualize_concept",
]

IMPORTANCE_PROXY = "mean-coefficient"
_EPS = 1e-12


@dataclass(frozen=True)
class PatchRef:
    index: int  # row of the activation matrix
    image_index: int
    row: int
    col: int
    coefficient: float = 0.0


def _edges(n, grid):
    return [(i * n) // grid for i in range(grid + 1)]


def cut_patches(image, grid: int = 3) -> list:
    """Non-overlapping ``grid x grid`` tiles of a ``[C, H, W]`` image, row-major."""
    x = np.asarray(image)
    h, w = x.shape[-2:]
    if grid < 1 or grid > min(h, w):
        raise InvalidInputError(f"grid {grid} does not fit a {h}x{w} image")
    rows, cols = _edges(h, grid), _edges(w, grid)
    return [x[..., rows[i] : rows[i + 1], cols[j] : cols[j + 1]] for i in range(grid) for j in range(grid)]


def patch_index_map(n_images: int, grid: int = 3) -> list[PatchRef]:
    return [
        PatchRef(k * grid * grid + i * grid + j, k, i, j)
        for k in range(n_images)
        for i in range(grid)
        for j in range(grid)
    ]


def extract_patch_activations(model, layer_id: str, images, grid: int = 3, batch_size: int = 243) -> np.ndarray:
    """``[n_images * grid**2, channels]`` pooled, non-negative patch activations."""
    model.check_layer(layer_id)
    h, w, c = model.input_size
    patches = []
    for image in images:
        if np.asarray(image).shape[0] != c:
            raise InvalidInputError(f"images must have {c} channels")
        patches.extend(resize_bilinear(np.asarray(p, dtype=np.float64), (h, w)) for p in cut_patches(image, grid))
    if not patches:
        raise InvalidInputError("no images")
    x = np.stack(patches).astype(np.float32)
    rows = []
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            chunk = torch.from_numpy(x[start : start + batch_size]).clamp(0.0, 1.0).to(model.dtype)
            act = model.forward_activations(chunk, layer_id)
            if act.ndim != 4:
                raise InvalidTargetError(f"layer {layer_id!r} has no spatial channel structure")
            rows.append(act.mean(dim=(2, 3)).clamp(min=0.0).double().numpy())
    return np.concatenate(rows)


def _loss(a, u, w):
    return float(np.linalg.norm(a - u @ w))


def nmf(a, rank: int, iterations: int = 500, seed: int = 0):
    """Multiplicative-update NMF minimizing ``||A - U W||_F``.

    Returns ``(U, W, trace)`` where ``trace[i]`` is the Frobenius error after
    iteration ``i``. Rows of ``W`` are L2-normalized at the end and ``U``
    rescaled so the product is unchanged. An update that would raise the
    error by rounding is rejected, so the trace never increases.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError("A must be a matrix")
    if not np.isfinite(a).all() or (a < 0).any():
        raise InvalidInputError("A must be finite and non-negative")
    n, p = a.shape
    if not 1 <= rank <= min(n, p):
        raise InvalidInputError(f"rank must be in [1, {min(n, p)}], got {rank}")
    if iterations < 1:
        raise InvalidInputError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(a.mean(), _EPS) / rank)
    u = rng.uniform(0.1, 1.0, size=(n, rank)) * scale
    w = rng.uniform(0.1, 1.0, size=(rank, p)) * scale
    loss = _loss(a, u, w)
    trace = []
    for _ in range(iterations):
        w_new = w * (u.T @ a) / (u.T @ u @ w + _EPS)
        u_new = u * (a @ w_new.T) / (u @ (w_new @ w_new.T) + _EPS)
        new_loss = _loss(a, u_new, w_new)
        if new_loss <= loss:
            u, w, loss = u_new, w_new, new_loss
        trace.append(loss)
    norms = np.linalg.norm(w, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return u * safe[None, :], w / safe[:, None], trace


@dataclass
class ConceptBasis:
    W: np.ndarray  # [r, p]
    U: np.ndarray  # [n_patches, r]
    layer_id: str
    reconstruction_error: list = field(default_factory=list)
    iterations: int = 0
    seed: int = 0

    @property
    def rank(self) -> int:
        return self.W.shape[0]

    def manifest(self) -> dict:
        return {
            "layer": self.layer_id,
            "rank": self.rank,
            "iterations": self.iterations,
            "seed": self.seed,
            "importance": IMPORTANCE_PROXY,
            "reconstruction_error": list(self.reconstruction_error),
        }

    def save(self, path) -> None:
        path = Path(path)
        save_tensors({"U": self.U.astype(np.float32), "W": self.W.astype(np.float32)}, path)
        path.with_suffix(".json").write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ConceptBasis":
        path = Path(path)
        tensors = load_tensors(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        return cls(
            W=np.asarray(tensors["W"]),
            U=np.asarray(tensors["U"]),
            layer_id=meta["layer"],
            reconstruction_error=meta.get("reconstruction_error", []),
            iterations=meta.get("iterations", 0),
            seed=meta.get("seed", 0),
        )


def fit_concepts(model, layer_id, images, rank, iterations=500, seed=0, grid=3) -> ConceptBasis:
    a = extract_patch_activations(model, layer_id, images, grid)
    u, w, trace = nmf(a, rank, iterations, seed)
    return ConceptBasis(W=w, U=u, layer_id=layer_id, reconstruction_error=trace, iterations=iterations, seed=seed)


def rank_concepts(u) -> list[int]:
    """Concept indices by mean coefficient, descending; ties by index."""
    means = np.asarray(u, dtype=np.float64).mean(axis=0)
    return sorted(range(len(means)), key=lambda j: (-means[j], j))


def top_patches(u, index_map, concept: int, count: int) -> list[PatchRef]:
    u = np.asarray(u)
    if not 0 <= concept < u.shape[1]:
        raise InvalidInputError(f"concept {concept} out of range for rank {u.shape[1]}")
    col = u[:, concept]
    order = sorted(range(len(col)), key=lambda i: (-col[i], i))[: max(count, 0)]
    out = []
    for i in order:
        ref = index_map[i]
        out.append(PatchRef(ref.index, ref.image_index, ref.row, ref.col, float(col[i])))
    return out


def patch_label_agreement(u, patch_labels, concept: int, count: int) -> tuple[int, float]:
    """Dominant class of a concept and the share of its top patches carrying that class.

    The dominant class is the one whose patches hold the largest total
    coefficient for the concept.
    """
    u = np.asarray(u, dtype=np.float64)
    labels = np.asarray(patch_labels)
    classes = np.unique(labels)
    totals = [u[labels == k, concept].sum() for k in classes]
    dominant = int(classes[int(np.argmax(totals))])
    refs = top_patches(u, patch_index_map(len(labels), 1), concept, count)
    hits = sum(labels[r.index] == dominant for r in refs)
    return dominant, hits / max(len(refs), 1)


def visualize_concept(model, layer_id: str, w_row, template, config: OptimizerConfig = OptimizerConfig()):
    """MACO rendering of a concept direction."""
    channels = model.check_layer(layer_id)
    w_row = np.asarray(w_row, dtype=np.float64).ravel()
    if w_row.shape[0] != channels:
        raise InvalidTargetError(f"concept has {w_row.shape[0]} entries, layer {layer_id} has {channels}")
    objective = direction_objective(layer_id, w_row, f"concept:{layer_id}")
    return maco_visualize(model, objective, template, config)
