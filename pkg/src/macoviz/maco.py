"""Phase-only feature visualization under a fixed magnitude spectrum.

The image is ``recompose(r, phi)`` with ``r`` a dataset-averaged magnitude
template; only ``phi`` is optimized. Input gradients seen along the way are
accumulated into a transparency mask at no extra cost.

The ascent loop in :func:`optimize` is shared with the baselines: each
method only supplies an initial parameter tensor, a ``render`` function from
parameters to canvas images and an optional projection step.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .errors import InvalidInputError, NumericFailureError
from .models.adapter import LOGITS
from .spectral import MagnitudeTemplate, recompose_torch
from .transforms import TransformPipeline, maco_pipeline, resize_bilinear

__all__ = [
    "OptimizerConfig",
    "VisualizationResult",
    "maco_visualize",
    "maco_visualize_many",
    "phase_gradient",
    "finalize_alpha",
    "optimize",
    "fingerprint",
]


def fingerprint(data) -> str:
    """Stable hash of a JSON-serializable document (key order irrelevant)."""
    canon = json.dumps(data, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if hasattr(value, "to_dict"):
        return value.to_dict()
    raise TypeError(f"cannot serialize {type(value).__name__}")


@dataclass(frozen=True)
class OptimizerConfig:
    """Ascent settings. ``pipeline=None`` selects the method's default transforms."""

    steps: int = 256
    learning_rate: float = 1.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    pipeline: TransformPipeline | None = None
    transform_draws: int = 1

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidInputError("steps must be >= 0")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning rate must be > 0")
        if self.transform_draws < 1:
            raise InvalidInputError("transform_draws must be >= 1")

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "betas": list(self.betas),
            "eps": self.eps,
            "seed": self.seed,
            "rule": "nadam",
            "transform_draws": self.transform_draws,
            "pipeline": None if self.pipeline is None else self.pipeline.to_dict(),
        }


@dataclass
class VisualizationResult:
    image: np.ndarray  # [C, H, W] in [0, 1]
    alpha: np.ndarray  # [H, W] in [0, 1]
    objective_trace: list
    config_fingerprint: str
    method: str
    objective: str
    seed: int
    steps: int
    learning_rate: float
    initial_objective: float
    final_objective: float
    clamped_fraction: float
    raw: np.ndarray  # unclamped reconstruction (the optimized image itself)
    params: np.ndarray
    template_label: str = ""
    extra: dict = field(default_factory=dict)

    def sidecar(self) -> dict:
        return {
            "method": self.method,
            "objective": self.objective,
            "seed": self.seed,
            "steps": self.steps,
            "lr": self.learning_rate,
            "initial_objective": self.initial_objective,
            "final_objective": self.final_objective,
            "clamped_fraction": self.clamped_fraction,
            "template_label": self.template_label,
            "config_fingerprint": self.config_fingerprint,
            **self.extra,
        }


def finalize_alpha(alpha_accumulated, steps: int) -> np.ndarray:
    """Mean over steps, divided by its 99th percentile (the max if that is 0), clamped to [0, 1]."""
    acc = np.asarray(alpha_accumulated, dtype=np.float64)
    if steps <= 0:
        return np.zeros_like(acc)
    mean = acc / steps
    scale = np.percentile(mean, 99)
    if scale <= 0:
        scale = mean.max()
    if scale <= 0:
        return np.zeros_like(mean)
    return np.clip(mean / scale, 0.0, 1.0)


def _objective_values(model, objectives, x):
    if all(o.kind == "logit" for o in objectives):
        acts = model.forward_layers(x, [LOGITS])
        logits = acts[LOGITS]
        targets = [o.target for o in objectives]
        if logits.ndim == 2 and all(0 <= t < logits.shape[1] for t in targets):
            return logits[torch.arange(len(targets)), torch.tensor(targets)]
    else:
        acts = model.forward_layers(x, sorted({o.layer_id for o in objectives}))
    return torch.stack([o.values(acts[o.layer_id][i : i + 1])[0] for i, o in enumerate(objectives)])


EVAL_DRAWS = 16
_EVAL_STEP_BASE = 1 << 40  # disjoint from the step indices used while optimizing


def _mean_over_draws(model, objectives, canvas, pipelines, step_indices):
    """Objective per canvas averaged over one transform draw per step index, in one forward pass."""
    b = len(objectives)
    x = torch.cat([
        torch.stack([p.apply(canvas[i], k) for i, p in enumerate(pipelines)]) for k in step_indices
    ]).clamp(0.0, 1.0)
    values = _objective_values(model, list(objectives) * len(step_indices), x)
    return values.reshape(len(step_indices), b).mean(dim=0)


def expected_objective(model, objectives, canvas, pipelines, draws=EVAL_DRAWS):
    """Objective of each canvas averaged over ``draws`` fixed transform samples.

    This is the quantity the ascent maximizes. The draws come from each
    pipeline's own stream at indices no optimization step uses, so initial and
    final values are scored under identical transforms.
    """
    with torch.no_grad():
        indices = [_EVAL_STEP_BASE + k for k in range(draws)]
        return _mean_over_draws(model, objectives, canvas, pipelines, indices).to(torch.float64)


def optimize(model, objectives, params, render, pipelines, steps, lr, betas=(0.9, 0.999), eps=1e-8,
             project=None, on_step=None, draws=1):
    """Batched transform-robust gradient ascent with NAdam.

    ``params[i]`` is optimized for ``objectives[i]`` under ``pipelines[i]``;
    the runs share nothing except the forward pass, so each behaves exactly as
    if optimized alone. Each step averages ``draws`` transform samples
    (stream indices ``n * draws`` up to ``(n + 1) * draws - 1``). Returns final params, per-step values ``[steps, B]``,
    the accumulated ``|dL/d canvas|`` maps ``[B, H, W]`` and the
    :func:`expected_objective` values before and after.
    """
    params = params.detach().clone().requires_grad_(True)
    opt = torch.optim.NAdam([params], lr=lr, betas=betas, eps=eps, maximize=True)
    with torch.no_grad():
        canvas = render(params)
    initial = expected_objective(model, objectives, canvas, pipelines)
    alpha = torch.zeros(canvas.shape[0], *canvas.shape[-2:], dtype=torch.float64)
    trace = []
    for n in range(steps):
        opt.zero_grad(set_to_none=False)
        canvas = render(params)
        if canvas is params:
            canvas = canvas.view_as(canvas)
        canvas.retain_grad()
        values = _mean_over_draws(model, objectives, canvas, pipelines, range(n * draws, (n + 1) * draws))
        if not torch.isfinite(values).all():
            raise NumericFailureError("objective became non-finite", step=n)
        values.sum().backward()
        if params.grad is None:
            params.grad = torch.zeros_like(params)
        if not torch.isfinite(params.grad).all():
            raise NumericFailureError("gradient became non-finite", step=n)
        if canvas.grad is not None:
            alpha += canvas.grad.detach().abs().sum(dim=1).to(torch.float64)
        opt.step()
        if project is not None:
            with torch.no_grad():
                project(params)
        trace.append(values.detach().clone())
        if on_step is not None:
            on_step(n, params.detach())
    with torch.no_grad():
        canvas = render(params)
    final = expected_objective(model, objectives, canvas, pipelines)
    trace = torch.stack(trace) if trace else torch.zeros(0, len(objectives))
    return params.detach(), trace, alpha, initial, final


def _check_template(model, template):
    if template.channels != model.input_size[2]:
        raise InvalidInputError(
            f"template has {template.channels} channels, model expects {model.input_size[2]}"
        )


def _results(method, model, objectives, seeds, configs, params, raw, trace, alpha, initial, final,
             template_label="", extra=None):
    out = []
    for i, (obj, seed, cfg) in enumerate(zip(objectives, seeds, configs)):
        image = raw[i].clamp(0.0, 1.0).numpy().copy()
        r = raw[i].numpy()
        out.append(
            VisualizationResult(
                image=image,
                alpha=finalize_alpha(alpha[i].numpy(), cfg.steps),
                objective_trace=[float(v) for v in trace[:, i]],
                config_fingerprint=fingerprint(
                    {"method": method, "objective": str(obj), "config": cfg.to_dict(),
                     "model": getattr(model, "name", "model"), "template": template_label}
                ),
                method=method,
                objective=str(obj),
                seed=int(seed),
                steps=cfg.steps,
                learning_rate=cfg.learning_rate,
                initial_objective=float(initial[i]),
                final_objective=float(final[i]),
                clamped_fraction=float(((r < 0) | (r > 1)).mean()),
                raw=r.copy(),
                params=params[i].numpy().copy(),
                template_label=template_label,
                extra=dict(extra or {}),
            )
        )
    return out


def _default_pipeline(model, seed):
    h, w, _ = model.input_size
    return maco_pipeline((h, w), seed)


def initial_phase(template: MagnitudeTemplate, seed: int) -> np.ndarray:
    """``phi_0 ~ U(-pi, pi)`` i.i.d. per half-plane bin, except the DC phase, which starts at 0.

    The DC bin contributes ``r cos(phi)``: a random start would make the mean
    brightness of a channel negative half of the time and the hard clamp would
    then zero every gradient. At ``phi = 0`` its gradient ``-r sin(phi)`` is
    exactly 0, so the DC stays at the template's mean brightness.
    """
    rng = np.random.default_rng(seed)
    phase = rng.uniform(-np.pi, np.pi, size=template.magnitude.shape)
    phase[..., 0, 0] = 0.0
    return phase.astype(np.float32)


def maco_visualize_many(model, objectives, template: MagnitudeTemplate, seeds, config=OptimizerConfig(),
                        on_step=None):
    """Independent runs, one per ``(objective, seed)`` pair, optimized as one batch."""
    _check_template(model, template)
    seeds = [int(s) for s in seeds]
    if len(seeds) != len(objectives):
        raise InvalidInputError("need one seed per objective")
    configs = [replace(config, seed=s) for s in seeds]
    pipelines = [
        (cfg.pipeline.with_seed(s) if cfg.pipeline is not None else _default_pipeline(model, s))
        for cfg, s in zip(configs, seeds)
    ]
    configs = [replace(cfg, pipeline=p) for cfg, p in zip(configs, pipelines)]
    h, w = template.size
    r = torch.from_numpy(template.magnitude)
    phi0 = torch.from_numpy(np.stack([initial_phase(template, s) for s in seeds]))

    def render(phi):
        return recompose_torch(r, phi, h, w)

    phi, trace, alpha, initial, final = optimize(
        model, list(objectives), phi0, render, pipelines, config.steps, config.learning_rate,
        config.betas, config.eps, on_step=on_step, draws=config.transform_draws,
    )
    with torch.no_grad():
        raw = render(phi)
    return _results("maco", model, objectives, seeds, configs, phi, raw, trace, alpha, initial, final,
                    template.source_label)


def maco_visualize(model, objective, template: MagnitudeTemplate, config=OptimizerConfig(), on_step=None):
    """Single MACO run; ``on_step(n, phi)`` sees the phase after each update."""
    return maco_visualize_many(model, [objective], template, [config.seed], config, on_step)[0]


def phase_gradient(model, objective, template, phase, transform=None, width=None):
    """Exact ``dL/dphi`` through reconstruction, ``transform``, resize and clamp.

    ``transform`` maps a canvas tensor ``[C, H, W]`` to a model input; ``None``
    only resizes. Computation runs in the dtype of ``phase``.
    """
    phase = np.asarray(phase)
    dtype = torch.float64 if phase.dtype == np.float64 else torch.float32
    mag = template.magnitude if isinstance(template, MagnitudeTemplate) else np.asarray(template)
    h = mag.shape[-2]
    if width is not None:
        w = width
    else:
        w = template.width if isinstance(template, MagnitudeTemplate) else 2 * (mag.shape[-1] - 1)
    r = torch.as_tensor(mag, dtype=dtype)
    phi = torch.as_tensor(phase, dtype=dtype).clone().requires_grad_(True)
    canvas = recompose_torch(r, phi, h, w)
    mh, mw, _ = model.input_size
    x = transform(canvas) if transform is not None else resize_bilinear(canvas, (mh, mw))
    x = resize_bilinear(x, (mh, mw)).clamp(0.0, 1.0).to(getattr(model, "dtype", dtype))
    value = objective(model, x.unsqueeze(0))
    (grad,) = torch.autograd.grad(value, phi, allow_unused=True)
    return np.zeros_like(phase) if grad is None else grad.numpy()
