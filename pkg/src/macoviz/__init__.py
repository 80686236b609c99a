"""Feature visualization by phase-only optimization under a fixed magnitude spectrum."""

from .baselines import cbr_visualize, fourier_visualize
from .concepts import ConceptBasis, fit_concepts, nmf, rank_concepts, top_patches, visualize_concept
from .maco import OptimizerConfig, VisualizationResult, maco_visualize, maco_visualize_many, phase_gradient
from .metrics import fid, plausibility_knn, spectrum_report, transferability
from .objectives import channel_objective, direction_objective, inversion_objective, logit_objective
from .spectral import MagnitudeTemplate, compute_magnitude_template, decompose, load_template, recompose, save_template

__version__ = "0.1.0"

__all__ = [
    "cbr_visualize",
    "fourier_visualize",
    "ConceptBasis",
    "fit_concepts",
    "nmf",
    "rank_concepts",
    "top_patches",
    "visualize_concept",
    "OptimizerConfig",
    "VisualizationResult",
    "maco_visualize",
    "maco_visualize_many",
    "phase_gradient",
    "fid",
    "plausibility_knn",
    "spectrum_report",
    "transferability",
    "channel_objective",
    "direction_objective",
    "inversion_objective",
    "logit_objective",
    "MagnitudeTemplate",
    "compute_magnitude_template",
    "decompose",
    "load_template",
    "recompose",
    "save_template",
]
