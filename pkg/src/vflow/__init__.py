"""Flows with variational data augmentation (VFlow) on NumPy."""

from .kernels import BACKEND
from .model import ConditionalFlow, Flow, VFlowModel, build_vflow
from .numerics import Rng
from .objective import elbo, elbo_discrete, importance_log_likelihood

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConditionalFlow",
    "Flow",
    "Rng",
    "VFlowModel",
    "build_vflow",
    "elbo",
    "elbo_discrete",
    "importance_log_likelihood",
]
