"""Reference methods: full-spectrum Fourier optimization and pixel-space optimization.

Both use the fixed robustness transform list from
:func:`macoviz.transforms.baseline_pipeline` and the same ascent loop and
transparency accumulation as MACO, so all three are directly comparable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .errors import InvalidInputError
from .maco import OptimizerConfig, _results, optimize
from .spectral import half_width, radial_frequency, recompose_cartesian_torch
from .transforms import baseline_pipeline

__all__ = [
    "BASELINE_LR",
    "FourierParams",
    "frequency_weights",
    "fourier_visualize",
    "fourier_visualize_many",
    "cbr_visualize",
    "cbr_visualize_many",
]

BASELINE_LR = 0.05
_INIT_STD = 0.01


def frequency_weights(height: int, width: int, decay: float = 1.0) -> np.ndarray:
    """Low-frequency boost ``(1 / max(f, f0)) ** decay`` normalized to max 1, ``f0 = 1 / max(H, W)``."""
    f0 = 1.0 / max(height, width)
    w = (1.0 / np.maximum(radial_frequency(height, width), f0)) ** decay
    return w / w.max()


@dataclass
class FourierParams:
    buffer: np.ndarray  # [2, C, H, Wh]: real and imaginary parts
    frequency_weights: np.ndarray  # [H, Wh]
    decay: float = 1.0

    @classmethod
    def initial(cls, channels, height, width, seed, decay=1.0):
        rng = np.random.default_rng(seed)
        buf = rng.normal(0.0, _INIT_STD, size=(2, channels, height, half_width(width)))
        w = frequency_weights(height, width, decay)
        # DC set so the initial image is mid-grey.
        buf[0, :, 0, 0] = 0.5 * np.sqrt(height * width) / w[0, 0]
        buf[1, :, 0, 0] = 0.0
        return cls(buf.astype(np.float32), w.astype(np.float32), decay)


def _fourier_render(weights, height, width):
    scale = float(np.sqrt(height * width))  # orthonormal inverse
    w = torch.from_numpy(weights)

    def render(buf):
        return recompose_cartesian_torch(buf[:, 0] * w, buf[:, 1] * w, height, width) * scale

    return render


def _pipelines(model, configs):
    h, w, _ = model.input_size
    return [
        (cfg.pipeline.with_seed(cfg.seed) if cfg.pipeline is not None else baseline_pipeline((h, w), cfg.seed))
        for cfg in configs
    ]


def _prepare(model, objectives, seeds, config, size):
    seeds = [int(s) for s in seeds]
    if len(seeds) != len(objectives):
        raise InvalidInputError("need one seed per objective")
    if len(size) != 2 or min(size) < 2:
        raise InvalidInputError(f"invalid canvas size {size}")
    configs = [replace(config, seed=s) for s in seeds]
    pipelines = _pipelines(model, configs)
    configs = [replace(cfg, pipeline=p) for cfg, p in zip(configs, pipelines)]
    return seeds, configs, pipelines


def fourier_visualize_many(model, objectives, size, seeds, config=OptimizerConfig(learning_rate=BASELINE_LR),
                           decay=1.0, on_step=None):
    seeds, configs, pipelines = _prepare(model, objectives, seeds, config, size)
    h, w = size
    c = model.input_size[2]
    inits = [FourierParams.initial(c, h, w, s, decay) for s in seeds]
    weights = inits[0].frequency_weights
    buf0 = torch.from_numpy(np.stack([p.buffer for p in inits]))
    render = _fourier_render(weights, h, w)
    buf, trace, alpha, initial, final = optimize(
        model, list(objectives), buf0, render, pipelines, config.steps, config.learning_rate,
        config.betas, config.eps, on_step=on_step, draws=config.transform_draws,
    )
    with torch.no_grad():
        raw = render(buf)
    return _results("fourier", model, objectives, seeds, configs, buf, raw, trace, alpha, initial, final,
                    extra={"decay": decay})


def fourier_visualize(model, objective, size, config=OptimizerConfig(learning_rate=BASELINE_LR), decay=1.0,
                      on_step=None):
    """Optimize both cartesian components of a low-frequency-weighted spectrum."""
    return fourier_visualize_many(model, [objective], size, [config.seed], config, decay, on_step)[0]


def cbr_initial(channels, height, width, seed):
    rng = np.random.default_rng(seed)
    return (0.5 + rng.uniform(-0.01, 0.01, size=(channels, height, width))).astype(np.float32)


def cbr_visualize_many(model, objectives, size, seeds, config=OptimizerConfig(learning_rate=BASELINE_LR),
                       on_step=None):
    seeds, configs, pipelines = _prepare(model, objectives, seeds, config, size)
    h, w = size
    c = model.input_size[2]
    x0 = torch.from_numpy(np.stack([cbr_initial(c, h, w, s) for s in seeds]))

    def project(x):
        x.clamp_(0.0, 1.0)

    x, trace, alpha, initial, final = optimize(
        model, list(objectives), x0, lambda p: p, pipelines, config.steps, config.learning_rate,
        config.betas, config.eps, project=project, on_step=on_step, draws=config.transform_draws,
    )
    return _results("cbr", model, objectives, seeds, configs, x, x, trace, alpha, initial, final)


def cbr_visualize(model, objective, size, config=OptimizerConfig(learning_rate=BASELINE_LR), on_step=None):
    """Pixel-space ascent, projected back to ``[0, 1]`` after every step."""
    return cbr_visualize_many(model, [objective], size, [config.seed], config, on_step)[0]
