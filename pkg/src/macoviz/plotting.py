"""Matplotlib figures and static HTML galleries for command outputs."""

from __future__ import annotations

import html
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# No version or timestamp in the PNG, so figures are byte-stable.
_PNG_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def spectrum_figure(panels: dict, path, title="Mean log-magnitude spectrum"):
    """One panel per ``label -> (log_map, hf_ratio)``."""
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.4), squeeze=False)
    for ax, (label, (log_map, hf)) in zip(axes[0], panels.items()):
        im = ax.imshow(log_map, cmap="magma", interpolation="nearest")
        ax.set_title(f"{label}\nhf ratio {hf:.4f}", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def radial_profile_figure(profiles: dict, path):
    """Radially averaged log-magnitude curves, one per label."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, log_map in profiles.items():
        r, values = radial_profile(log_map)
        ax.plot(r, values, label=label)
    ax.set_xlabel("radius (bins from DC)")
    ax.set_ylabel("mean log(1 + |F|)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def radial_profile(shifted_map):
    m = np.asarray(shifted_map, dtype=np.float64)
    h, w = m.shape
    yy, xx = np.indices(m.shape)
    radius = np.rint(np.hypot(yy - h // 2, xx - w // 2)).astype(int)
    counts = np.bincount(radius.ravel())
    sums = np.bincount(radius.ravel(), weights=m.ravel())
    keep = counts > 0
    return np.flatnonzero(keep), sums[keep] / counts[keep]


def scores_figure(rows: list, path, title="Scores"):
    """Bar charts of plausibility, FID, mean objective and transferability for report rows."""
    labels = [r.label for r in rows]
    fig, axes = plt.subplots(1, 4, figsize=(14, 3.4))
    x = np.arange(len(rows))
    for ax, (name, values) in zip(axes[:3], [
        ("plausibility (lower is better)", [r.plausibility for r in rows]),
        ("FID (lower is better)", [r.fid for r in rows]),
        ("logit magnitude", [r.mean_objective for r in rows]),
    ]):
        ax.bar(x, values, color="tab:blue")
        ax.set_xticks(x, labels, rotation=30, ha="right", fontsize=8)
        ax.set_title(name, fontsize=9)
    models = sorted(rows[0].transferability)
    width = 0.8 / max(len(models), 1)
    for j, model_id in enumerate(models):
        axes[3].bar(x + j * width, [r.transferability.get(model_id, np.nan) for r in rows], width, label=model_id)
    axes[3].set_xticks(x + 0.4 - width / 2, labels, rotation=30, ha="right", fontsize=8)
    axes[3].set_ylim(0, 1)
    axes[3].set_title("transferability (higher is better)", fontsize=9)
    axes[3].legend(fontsize=7)
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def image_grid_figure(images, path, captions=None, columns=10):
    images = list(images)
    rows = max(1, -(-len(images) // columns))
    fig, axes = plt.subplots(rows, columns, figsize=(1.2 * columns, 1.3 * rows), squeeze=False)
    for i, ax in enumerate(axes.ravel()):
        ax.axis("off")
        if i < len(images):
            ax.imshow(np.clip(np.asarray(images[i]).transpose(1, 2, 0), 0, 1), interpolation="nearest")
            if captions:
                ax.set_title(captions[i], fontsize=6)
    fig.tight_layout()
    return _save(fig, path)


def write_gallery(directory, entries, title="Gallery", name="index.html"):
    """Static HTML page listing ``(relative_png_path, caption)`` entries."""
    directory = Path(directory)
    cells = "\n".join(
        f'<figure><img src="{html.escape(str(src))}" width="128"><figcaption>{html.escape(caption)}</figcaption></figure>'
        for src, caption in entries
    )
    page = (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{html.escape(title)}</title>"
        "<style>body{font-family:sans-serif}figure{display:inline-block;margin:6px;text-align:center}"
        "img{image-rendering:pixelated;background:#ccc}</style></head>\n"
        f"<body><h1>{html.escape(title)}</h1>\n{cells}\n</body></html>\n"
    )
    path = directory / name
    path.write_text(page)
    return path
