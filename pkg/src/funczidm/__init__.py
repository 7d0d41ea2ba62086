"""Functional concurrent zero-inflated Dirichlet-multinomial regression."""

from .basis import SplineBasis, build_basis, evaluate_basis
from .data import CovariateProfile, LongitudinalDataset
from .draws import PosteriorDraws
from .model import Hyperparameters, ParameterState, augmented_log_joint, shrinkage_variance
from .sampler import SamplerConfig, run_chain, run_chains

__version__ = "0.1.0"
