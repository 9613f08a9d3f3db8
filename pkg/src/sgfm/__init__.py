"""Guided generation by sampling a tilted source and transporting it with a trained flow."""

from .distributions import DistributionSpec, GuidanceLoss, make_distribution, sample
from .flow import AffineField, IntegrationConfig, LearnedField, LinearField, integrate, train
from .guidance import GuidanceProblem, SamplerConfig, guide
from .evaluation import OracleSpec, error_curve, wasserstein

__all__ = [
    "DistributionSpec",
    "GuidanceLoss",
    "make_distribution",
    "sample",
    "AffineField",
    "IntegrationConfig",
    "LearnedField",
    "LinearField",
    "integrate",
    "train",
    "GuidanceProblem",
    "SamplerConfig",
    "guide",
    "OracleSpec",
    "error_curve",
    "wasserstein",
]
