"""Gradient-free Bayesian experimental design for implicit simulators.

A neural critic is trained on a clipped mutual-information lower bound while
the design is moved along a Guided Evolution Strategies gradient estimate, so
the simulator never needs to be differentiated.
"""

__version__ = "0.1.0"

from .bed_loop import BedConfig, BedTrace, evaluate_smile, project_design, run_pathwise_baseline, run_saga_bed
from .exceptions import (
    ConfigError,
    ContractError,
    DiagnosticsError,
    DomainError,
    NumericError,
    SagabedError,
    ShapeError,
    SupportError,
    UnsupportedModelError,
)
from .grad_free import EsConfig, GesState, es_gradient, ges_covariance, ges_gradient, subspace_update
from .mi_estimators import (
    MiBatch,
    clip,
    marginal_pairing,
    mine_lower_bound,
    nmc_estimate,
    smile_grad_psi,
    smile_lower_bound,
)
from .models import DesignDomain, DesignVector, LinearModel, PKModel, RabiModel, make_model
from .nn_core import AdamState, Critic, InputStandardizer, Mlp, adam_step, load_critic, mlp_backward, mlp_forward, mlp_init, save_critic
from .posterior import PosteriorModel, PosteriorSummary, categorical_sample, mh_sample, posterior_logdensity, summarize
from .estimator import SAGABED, CriticPosterior

__all__ = [
    "AdamState",
    "BedConfig",
    "BedTrace",
    "ConfigError",
    "ContractError",
    "Critic",
    "CriticPosterior",
    "DesignDomain",
    "DesignVector",
    "DiagnosticsError",
    "DomainError",
    "EsConfig",
    "GesState",
    "InputStandardizer",
    "LinearModel",
    "MiBatch",
    "Mlp",
    "NumericError",
    "PKModel",
    "PosteriorModel",
    "PosteriorSummary",
    "RabiModel",
    "SAGABED",
    "SagabedError",
    "ShapeError",
    "SupportError",
    "UnsupportedModelError",
    "adam_step",
    "categorical_sample",
    "clip",
    "es_gradient",
    "evaluate_smile",
    "ges_covariance",
    "ges_gradient",
    "load_critic",
    "make_model",
    "marginal_pairing",
    "mh_sample",
    "mine_lower_bound",
    "mlp_backward",
    "mlp_forward",
    "mlp_init",
    "nmc_estimate",
    "posterior_logdensity",
    "project_design",
    "run_pathwise_baseline",
    "run_saga_bed",
    "save_critic",
    "smile_grad_psi",
    "smile_lower_bound",
    "subspace_update",
    "summarize",
]
