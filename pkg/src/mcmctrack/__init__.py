"""Bayesian multi-target tracking on image stacks via trans-dimensional MCMC.

Targets are never detected up front: the sampler works on the raw pixel
likelihood, jumping between track configurations with reversible moves,
refreshing individual tracks by conditional SMC, and (optionally) learning
the model parameters by conjugate Gibbs updates.
"""

from .chain import ChainState
from .errors import ConfigError, DataFormatError, NumericalError
from .filtering import gamma_threshold, match_filter, residual_frame
from .io import RunConfig, load_config, read_stack, write_stack
from .metrics import OspaParams, greedy_nn_tracker, ospa_frame, summarize_chain
from .model import (ImageStack, ModelParams, Track, alive_positions,
                    canonical_order, log_joint, render_frame, sample_images,
                    sample_prior_tracks, snr)
from .moves import sweep
from .params import PriorConfig, surrogate_mle
from .pgibbs import CsmcConfig, csmc_refresh
from .representation import MttSequence, mtt_from_tracks, tracks_from_mtt
from .sampler import SamplerConfig, burn_in_slice, init_chain, run_chain
from .birth import ProposalConfig

__version__ = "0.1.0"

__all__ = [
    "ChainState", "ConfigError", "DataFormatError", "NumericalError",
    "gamma_threshold", "match_filter", "residual_frame",
    "RunConfig", "load_config", "read_stack", "write_stack",
    "OspaParams", "greedy_nn_tracker", "ospa_frame", "summarize_chain",
    "ImageStack", "ModelParams", "Track", "alive_positions", "canonical_order",
    "log_joint", "render_frame", "sample_images", "sample_prior_tracks", "snr",
    "sweep", "PriorConfig", "surrogate_mle", "CsmcConfig", "csmc_refresh",
    "MttSequence", "mtt_from_tracks", "tracks_from_mtt",
    "SamplerConfig", "burn_in_slice", "init_chain", "run_chain",
    "ProposalConfig", "__version__",
]
