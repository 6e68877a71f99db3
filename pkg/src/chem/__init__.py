"""Conformal hallucination scoring for image reconstruction models."""

from .conformal import (
    AdditiveFamily,
    CalibrationResult,
    ConformalWarning,
    HashMismatchError,
    MultiplicativeFamily,
    RadiusModel,
    calibrate_lambda,
    calibration_from_files,
    calibration_to_files,
    coverage_rate,
    init_radius,
    predict_intervals,
)
from .forward import (
    DegradationConfig,
    Psf,
    SceneConfig,
    Source,
    convolve,
    degrade,
    delta_psf,
    gaussian_psf,
    make_dataset,
    make_experiment_data,
    synthesize_scene,
)
from .metric import (
    ChemEstimator,
    ChemReport,
    chem_aggregate,
    chem_per_coefficient,
    hallucination_map,
    hoeffding_bound,
    perturbation_sweep,
    standardize_scores,
)
from .raster import read_raster, write_raster
from .reconstructors import (
    HallucinationInjector,
    Identity,
    TikhonovDeconvolver,
    WaveletSoftThreshold,
    WienerDeconvolver,
    make_reconstructor,
    sure_select_lambda,
    tikhonov_deconvolve,
)
from .transforms import ShearletTransform, SubbandRMSNormalizer, WaveletTransform, make_transform

__version__ = "0.1.0"

__all__ = [
    "AdditiveFamily",
    "CalibrationResult",
    "ChemEstimator",
    "ChemReport",
    "ConformalWarning",
    "DegradationConfig",
    "HallucinationInjector",
    "HashMismatchError",
    "Identity",
    "MultiplicativeFamily",
    "Psf",
    "RadiusModel",
    "SceneConfig",
    "ShearletTransform",
    "Source",
    "SubbandRMSNormalizer",
    "TikhonovDeconvolver",
    "WaveletSoftThreshold",
    "WaveletTransform",
    "WienerDeconvolver",
    "calibrate_lambda",
    "calibration_from_files",
    "calibration_to_files",
    "chem_aggregate",
    "chem_per_coefficient",
    "convolve",
    "coverage_rate",
    "degrade",
    "delta_psf",
    "gaussian_psf",
    "hallucination_map",
    "hoeffding_bound",
    "init_radius",
    "make_dataset",
    "make_experiment_data",
    "make_reconstructor",
    "make_transform",
    "perturbation_sweep",
    "predict_intervals",
    "read_raster",
    "standardize_scores",
    "sure_select_lambda",
    "synthesize_scene",
    "tikhonov_deconvolve",
    "write_raster",
]
