"""Peer effect estimation when network links are misclassified."""
from .core import (
    Dataset,
    GroupSample,
    Theta,
    adjust_measure,
    reduced_form_solve,
    within_transform,
)
from .errors import MislinkError, NumericalError, ValidationError
from .estimators import EstimatorSpec, PeerEffectsFit, fit, s2sls, tsls
from .lim import lim_transform_group, lim_weight_fast, lim_weights_bruteforce
from .montecarlo import McConfig, McReport, VariantTemplate, emit_table, run_mc
from .rates import RatesEstimate, estimate_rates
from .simulate import MeasureChannelSpec, SimConfig, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "EstimatorSpec",
    "GroupSample",
    "McConfig",
    "McReport",
    "MeasureChannelSpec",
    "MislinkError",
    "NumericalError",
    "PeerEffectsFit",
    "RatesEstimate",
    "SimConfig",
    "Theta",
    "ValidationError",
    "VariantTemplate",
    "adjust_measure",
    "emit_table",
    "estimate_rates",
    "fit",
    "lim_transform_group",
    "lim_weight_fast",
    "lim_weights_bruteforce",
    "reduced_form_solve",
    "run_mc",
    "s2sls",
    "simulate_dataset",
    "tsls",
    "within_transform",
]
