"""labelsift: uncertainty-based detection and relabeling of noisy image labels."""

from .data import Dataset, GoldSubset, NoiseSpec, draw_gold_subset, inject_noise, make_blobs
from .mixfit import BetaMixtureFit, EmConfig, fit_beta_mixture, posterior_noisy
from .nn import ModelConfig, TrainedMember, predict_ensemble, train_ensemble, train_member
from .pipeline import PipelineConfig, Report, run_pipeline
from .uncertainty import (PredictionTensor, ScoreVector, bald, mean_max_softmax,
                          softmax_stddev, to_uncertainty, variation_ratio)

__all__ = [
    "Dataset", "GoldSubset", "NoiseSpec", "draw_gold_subset", "inject_noise",
    "make_blobs", "BetaMixtureFit", "EmConfig", "fit_beta_mixture",
    "posterior_noisy", "ModelConfig", "TrainedMember", "predict_ensemble",
    "train_ensemble", "train_member", "PipelineConfig", "Report", "run_pipeline",
    "PredictionTensor", "ScoreVector", "bald", "mean_max_softmax",
    "softmax_stddev", "to_uncertainty", "variation_ratio",
]

__version__ = "0.1.0"
