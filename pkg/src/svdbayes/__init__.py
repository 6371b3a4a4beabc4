"""Bayesian rank selection and model averaging for the SVD."""

__version__ = "0.1.0"

from .gibbs import (ChainConfig, ChainSummary, FactorState, PriorConfig,
                    empirical_bayes_hyperparams, make_prior,
                    prior_detectability, prior_diffuse, prior_empirical_bayes,
                    run_chain)
from .samplers import RandomSource

__all__ = [
    "ChainConfig", "ChainSummary", "FactorState", "PriorConfig",
    "RandomSource", "empirical_bayes_hyperparams", "make_prior",
    "prior_detectability", "prior_diffuse", "prior_empirical_bayes",
    "run_chain", "__version__",
]
