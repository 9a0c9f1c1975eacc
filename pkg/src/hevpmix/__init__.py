"""Hierarchical extreme-value, stick-breaking and max-mixture models for spatial extremes."""

from .distributions import GevParams, gev_cdf, gev_logpdf, gev_quantile, gev_sample, ps_sample, rng_stream
from .errors import (ConfigError, DataError, DegenerateWeightsError, DomainError, HevpmixError,
                     InitializationError, NumericalError)
from .geometry import KnotSet, Site, grid_sites, kernel_weights
from .mcmc import ChainConfig, PosteriorSamples, Sampler, posterior_prob_delta, run_chain
from .predict import cross_validate, empirical_chi, model_chi, predict_quantiles
from .simulate import Dataset, SimConfig, simulate

__version__ = "0.1.0"
