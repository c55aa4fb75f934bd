"""Density-estimation trajectories: kernels, bespoke fits, InPCA embeddings and LLM probing."""

from .errors import ConfigError, DimensionError, IcdeError, NumericalError, ProtocolError, ProviderError
from .estimators import (
    Constant,
    HistogramPrior,
    KdeConfig,
    PowerLaw,
    Silverman,
    amise_optimal_bandwidth,
    bayesian_histogram,
    de_trajectory,
    kde_estimate,
)
from .bespoke import FitPoint, FitSchedule, fit_bespoke_point, fit_bespoke_schedule
from .inpca import DistanceMatrix, Embedding, inpca_embed, meta_inpca, pairwise_distances
from .kernels import TOPHAT, KernelSpec, kernel_eval
from .prob import DiscretePdf, Grid, SampleSet, Trajectory, hellinger_distance, hellinger_sq, sample
from .probe import SerializationConfig, hierarchy_pdf, icl_trajectory
from .randpdf import GpConfig, generate_random_pdf

__all__ = [
    "ConfigError", "DimensionError", "IcdeError", "NumericalError", "ProtocolError", "ProviderError",
    "Constant", "HistogramPrior", "KdeConfig", "PowerLaw", "Silverman", "amise_optimal_bandwidth",
    "bayesian_histogram", "de_trajectory", "kde_estimate",
    "FitPoint", "FitSchedule", "fit_bespoke_point", "fit_bespoke_schedule",
    "DistanceMatrix", "Embedding", "inpca_embed", "meta_inpca", "pairwise_distances",
    "TOPHAT", "KernelSpec", "kernel_eval",
    "DiscretePdf", "Grid", "SampleSet", "Trajectory", "hellinger_distance", "hellinger_sq", "sample",
    "SerializationConfig", "hierarchy_pdf", "icl_trajectory",
    "GpConfig", "generate_random_pdf",
]
