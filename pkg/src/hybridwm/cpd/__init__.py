"""Conditional distribution models for the stochastic stream."""

from .encoding import EncodedData, FeatureEncoder
from .models import (
    CategoricalModel,
    CpdBundle,
    NodeModel,
    QuantileModel,
    SamplingError,
    derive_seed,
    fit_all,
    fit_node,
    model_from_json,
    node_loglik_surrogate,
    pinball,
    sample_joint,
    sample_joint_batch,
    topological_order,
)
from .nets import TAU, FitConfig

__all__ = [
    "TAU",
    "CategoricalModel",
    "CpdBundle",
    "EncodedData",
    "FeatureEncoder",
    "FitConfig",
    "NodeModel",
    "QuantileModel",
    "SamplingError",
    "derive_seed",
    "fit_all",
    "fit_node",
    "model_from_json",
    "node_loglik_surrogate",
    "pinball",
    "sample_joint",
    "sample_joint_batch",
    "topological_order",
]
