"""Particle MCMC for long-memory fractional-order battery models."""

from .analysis import PosteriorSummary, kde, prior_posterior_overlap, summarize
from .fom import (PARAM_NAMES, THETA_STAR, BatteryTheta, Dataset, FoModel, build_model,
                  gen_prbs, impedance, simulate)
from .pathtree import TrajectoryTree
from .pmmh import (Chain, PmmhConfig, Prior, pmmh_run, select_num_particles, table_prior,
                   tune_and_run)
from .smc import FilterConfig, FilterOutput, run_filter, systematic_resample

__version__ = "0.1.0"

__all__ = [
    "PARAM_NAMES", "THETA_STAR", "BatteryTheta", "Dataset", "FoModel", "build_model",
    "gen_prbs", "impedance", "simulate", "TrajectoryTree", "FilterConfig", "FilterOutput",
    "run_filter", "systematic_resample", "Prior", "PmmhConfig", "Chain", "pmmh_run",
    "tune_and_run", "select_num_particles", "table_prior", "PosteriorSummary", "kde",
    "prior_posterior_overlap", "summarize",
]
