"""Method comparison and ablation on the shapes testbed.

A :class:`Testbed` bundles the generator classifier, independently trained
transfer classifiers, a magnitude template and a held-out natural image set.
:func:`evaluate_method` renders ``per_class`` logit visualizations for every
class and scores them; :func:`ablation_run` does the same for toggled MACO
variants.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import metrics
from .baselines import BASELINE_LR, cbr_visualize_many, fourier_visualize_many
from .errors import InvalidInputError
from .maco import OptimizerConfig, fingerprint, maco_visualize_many
from .models import REFERENCE_ARCH, TRANSFER_ARCHS, generate_shapes_dataset, reference_model
from .models.nets import cache_dir
from .objectives import logit_objective
from .spectral import compute_magnitude_template, load_template, save_template
from .transforms import maco_pipeline

log = logging.getLogger(__name__)

__all__ = [
    "CANVAS_SIZE",
    "MACO_DRAWS",
    "METHODS",
    "CANONICAL_ABLATION",
    "Testbed",
    "EvaluationReport",
    "Settings",
    "shapes_template",
    "shapes_testbed",
    "run_method",
    "score_results",
    "evaluate_method",
    "evaluate_methods",
    "median_report",
    "ablation_run",
]

CANVAS_SIZE = (64, 64)
MACO_DRAWS = 8
METHODS = ("maco", "fourier", "cbr")
TEMPLATE_IMAGES = 2000
NATURAL_PER_CLASS = 50
_NATURAL_SEED = 20_000


def shapes_template(size=CANVAS_SIZE, n=TEMPLATE_IMAGES, seed=0):
    """Magnitude template of ``n`` shapes images rendered at ``size``, cached on disk."""
    h, w = size
    path = cache_dir() / f"shapes-template-{h}x{w}-n{n}-seed{seed}.macomag"
    if path.exists():
        return load_template(path)
    data = generate_shapes_dataset(n, seed, max(h, w))
    template = compute_magnitude_template(data.images, size, f"builtin:shapes n={n} seed={seed}")
    tmp = path.with_name(path.name + ".tmp")
    save_template(template, tmp)
    tmp.replace(path)
    return template


@dataclass
class Testbed:
    model: object
    transfer: dict
    template: object
    natural: object  # ShapesDataset at model input size
    seed: int = 0
    _natural_features: np.ndarray | None = field(default=None, repr=False)

    @property
    def extractor(self) -> str:
        return f"{self.model.name}:{self.model.penultimate}"

    @property
    def class_count(self) -> int:
        return self.model.class_count

    def natural_features(self) -> np.ndarray:
        if self._natural_features is None:
            self._natural_features = metrics.model_features(self.model, self.natural.images)
        return self._natural_features

    def describe(self) -> dict:
        return {
            "generator": f"{REFERENCE_ARCH}-seed{self.seed}",
            "transfer": sorted(self.transfer),
            "template": self.template.source_label,
            "canvas": list(self.template.size),
            "natural_images": len(self.natural.images),
            "extractor": self.extractor,
        }


def shapes_testbed(seed: int = 0, natural_per_class: int = NATURAL_PER_CLASS) -> Testbed:
    model = reference_model(seed, REFERENCE_ARCH)
    transfer = {arch: reference_model(seed, arch) for arch in TRANSFER_ARCHS}
    h, w, _ = model.input_size
    natural = generate_shapes_dataset(natural_per_class * model.class_count, _NATURAL_SEED + seed, h)
    return Testbed(model, transfer, shapes_template(), natural, seed)


@dataclass(frozen=True)
class Settings:
    """One method configuration. The toggles only apply to MACO."""

    method: str = "maco"
    steps: int = 256
    learning_rate: float | None = None  # None: 1.0 for MACO, BASELINE_LR otherwise
    transform_draws: int | None = None  # None: MACO_DRAWS for MACO, 1 otherwise
    noise: bool = True
    crop: bool = True
    transparency: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")

    @property
    def lr(self) -> float:
        if self.learning_rate is not None:
            return self.learning_rate
        return 1.0 if self.method == "maco" else BASELINE_LR

    @property
    def draws(self) -> int:
        if self.transform_draws is not None:
            return self.transform_draws
        return MACO_DRAWS if self.method == "maco" else 1

    def run_key(self) -> tuple:
        """Everything that affects the rendered images (transparency is scoring only)."""
        return (self.method, self.steps, self.lr, self.draws, self.noise, self.crop)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(learning_rate=self.lr, transform_draws=self.draws)
        return d


@dataclass
class EvaluationReport:
    method: str
    per_class_plausibility: list
    fid: float
    transferability: dict
    mean_objective: float  # mean target logit of the scored images
    spectrum_hf_ratio: float
    settings_fingerprint: str
    label: str = ""
    settings: dict = field(default_factory=dict)
    extractor: str = ""
    seeds: list = field(default_factory=list)

    @property
    def plausibility(self) -> float:
        return float(np.mean(self.per_class_plausibility))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plausibility"] = self.plausibility
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        d = dict(d)
        d.pop("plausibility", None)
        return cls(**d)


def _objectives_and_seeds(class_count, per_class, seed):
    objectives = [logit_objective(k) for k in range(class_count) for _ in range(per_class)]
    seeds = [seed * 100_000 + i for i in range(len(objectives))]
    return objectives, seeds


def run_method(testbed: Testbed, settings: Settings, seed: int = 0, per_class: int = 10, on_step=None):
    """All logit visualizations for one evaluation seed."""
    objectives, seeds = _objectives_and_seeds(testbed.class_count, per_class, seed)
    config = OptimizerConfig(steps=settings.steps, learning_rate=settings.lr, transform_draws=settings.draws)
    model = testbed.model
    log.info("rendering %d %s visualizations (seed %d)", len(objectives), settings.method, seed)
    if settings.method == "maco":
        h, w, _ = model.input_size
        pipeline = maco_pipeline((h, w), 0, noise=0.1 if settings.noise else 0.0, crop=settings.crop)
        config = replace(config, pipeline=pipeline)
        return maco_visualize_many(model, objectives, testbed.template, seeds, config, on_step)
    if settings.method == "fourier":
        return fourier_visualize_many(model, objectives, testbed.template.size, seeds, config, on_step=on_step)
    return cbr_visualize_many(model, objectives, testbed.template.size, seeds, config, on_step=on_step)


def _class_of(result) -> int:
    return int(result.objective.split(":")[1])


def score_results(testbed: Testbed, results, settings: Settings, seed=0, label="") -> EvaluationReport:
    if not results:
        raise InvalidInputError("no visualizations to score")
    if settings.transparency:
        images = [metrics.apply_transparency(r.image, r.alpha) for r in results]
    else:
        images = [r.image for r in results]
    classes = np.array([_class_of(r) for r in results])
    model = testbed.model
    natural = testbed.natural
    per_class = []
    for k in range(testbed.class_count):
        viz = [img for img, c in zip(images, classes) if c == k]
        if viz:
            per_class.append(metrics.plausibility_knn(viz, natural.of_class(k), model))
    viz_features = metrics.model_features(model, metrics.center_crop(np.stack(images)))
    by_class = {k: [img for img, c in zip(images, classes) if c == k] for k in sorted(set(classes.tolist()))}
    # logit magnitude of the scored images at full view, like the other scores
    logits = metrics.model_features(model, images, "logits")
    target_logits = logits[np.arange(len(images)), classes]
    _, hf = metrics.spectrum_report([r.raw for r in results])
    document = {"settings": settings.to_dict(), "testbed": testbed.describe(), "per_class": len(results) // len(by_class)}
    return EvaluationReport(
        method=settings.method,
        per_class_plausibility=per_class,
        fid=metrics.fid(viz_features, testbed.natural_features()),
        transferability=metrics.transferability(by_class, testbed.transfer),
        mean_objective=float(target_logits.mean()),
        spectrum_hf_ratio=hf,
        settings_fingerprint=fingerprint(document),
        label=label or settings.method,
        settings=settings.to_dict(),
        extractor=testbed.extractor,
        seeds=[seed],
    )


def evaluate_method(testbed, settings: Settings, seed=0, per_class=10, label=""):
    results = run_method(testbed, settings, seed, per_class)
    return score_results(testbed, results, settings, seed, label), results


def median_report(reports: list) -> EvaluationReport:
    """Field-wise median across evaluation seeds."""
    if not reports:
        raise InvalidInputError("no reports")
    first = reports[0]
    med = lambda values: float(np.median(values))  # noqa: E731
    return EvaluationReport(
        method=first.method,
        per_class_plausibility=[med(v) for v in zip(*(r.per_class_plausibility for r in reports))],
        fid=med([r.fid for r in reports]),
        transferability={k: med([r.transferability[k] for r in reports]) for k in first.transferability},
        mean_objective=med([r.mean_objective for r in reports]),
        spectrum_hf_ratio=med([r.spectrum_hf_ratio for r in reports]),
        settings_fingerprint=fingerprint([r.settings_fingerprint for r in reports]),
        label=first.label,
        settings=first.settings,
        extractor=first.extractor,
        seeds=[s for r in reports for s in r.seeds],
    )


def evaluate_methods(testbed, methods=METHODS, seeds=(0, 1, 2), per_class=10, steps=256, keep=None):
    """Median reports per method. ``keep``, if a dict, receives ``(method, seed) -> results``."""
    out = {}
    for method in methods:
        settings = Settings(method, steps=steps)
        reports = []
        for seed in seeds:
            report, results = evaluate_method(testbed, settings, seed, per_class)
            reports.append(report)
            if keep is not None:
                keep[(method, seed)] = results
        out[method] = median_report(reports)
    return out


CANONICAL_ABLATION = (
    ("full", {}),
    ("- transparency", {"transparency": False}),
    ("- crop", {"crop": False}),
    ("- noise", {"noise": False}),
    ("fourier", {"magnitude_constraint": False}),
)


def _settings_for(toggles: dict, steps: int) -> Settings:
    unknown = set(toggles) - {"magnitude_constraint", "crop", "noise", "transparency"}
    if unknown:
        raise InvalidInputError(f"unknown ablation toggles {sorted(unknown)}")
    if not toggles.get("magnitude_constraint", True):
        return Settings("fourier", steps=steps, transparency=toggles.get("transparency", True))
    return Settings(
        "maco",
        steps=steps,
        noise=toggles.get("noise", True),
        crop=toggles.get("crop", True),
        transparency=toggles.get("transparency", True),
    )


def ablation_run(testbed, rows=CANONICAL_ABLATION, seed=0, per_class=10, steps=256, cache=None):
    """One report per ``(label, toggles)`` row; rows that render the same images share one run.

    ``cache`` maps ``(run_key, seed, per_class)`` to results and may be pre-filled.
    """
    cache = {} if cache is None else cache
    reports = []
    for label, toggles in rows:
        settings = _settings_for(dict(toggles), steps)
        key = (settings.run_key(), seed, per_class)
        if key not in cache:
            cache[key] = run_method(testbed, settings, seed, per_class)
        reports.append(score_results(testbed, cache[key], settings, seed, label))
    return reports
