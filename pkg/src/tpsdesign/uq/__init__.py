"""Bayesian design machinery: posterior, samplers and reliability."""

from .mcmc import Chain, accept_move, mh_sample
from .posterior import (
    PARAM_NAMES,
    FDModel,
    LikelihoodSpec,
    PosteriorEvaluator,
    PriorSpec,
    SurrogateModel,
    log_likelihood,
    log_posterior,
    log_prior,
    make_likelihood,
    normal_cdf,
    z_quantile,
)
from .reliability import ReliabilityReport, cross_verify, reliability
from .smc import ParticleEnsemble, effective_sample_size, smc_sample, systematic_resample

__all__ = [
    "PARAM_NAMES", "Chain", "FDModel", "LikelihoodSpec", "ParticleEnsemble", "PosteriorEvaluator",
    "PriorSpec", "ReliabilityReport", "SurrogateModel", "accept_move", "cross_verify",
    "effective_sample_size", "log_likelihood", "log_posterior", "log_prior", "make_likelihood",
    "mh_sample", "normal_cdf", "reliability", "smc_sample", "systematic_resample", "z_quantile",
]
