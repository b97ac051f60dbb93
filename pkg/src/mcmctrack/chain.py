"""Mutable per-chain state shared by the move, refresh and learning code."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .model import (ImageStack, ModelParams, ResidualLikelihood,
                    canonical_order, log_prior_tracks)

MOVE_FAMILIES = ("bd", "ms", "os", "ss")


def _zero_counters():
    return {fam: 0 for fam in MOVE_FAMILIES}


@dataclass
class ChainState:
    """Tracks, parameters, residual cache and bookkeeping for one chain.

    ``log_prior`` caches log p(z, x); the image term lives in the residual
    cache.  Moves mutate the cache incrementally and keep ``log_prior`` in
    sync, so ``log_joint`` is O(1); ``spot_check`` guards against drift.
    """

    tracks: list
    params: ModelParams
    cache: ResidualLikelihood
    log_prior: float
    rng: np.random.Generator
    sweep: int = 0
    proposed: dict = field(default_factory=_zero_counters)
    accepted: dict = field(default_factory=_zero_counters)

    @classmethod
    def create(cls, y: ImageStack, params: ModelParams, tracks=(), rng=None):
        tracks = canonical_order(list(tracks))
        cache = ResidualLikelihood(y, params, tracks)
        return cls(tracks, params, cache, log_prior_tracks(tracks, params),
                   rng if rng is not None else np.random.default_rng())

    @property
    def n_tracks(self):
        return len(self.tracks)

    @property
    def log_joint(self):
        return self.log_prior + self.cache.log_lik_total

    def replace_tracks(self, tracks, log_prior=None):
        """Swap the track list after the cache has already been mutated."""
        self.tracks = tracks
        self.log_prior = (log_prior if log_prior is not None
                          else log_prior_tracks(tracks, self.params))

    def set_params(self, params: ModelParams):
        """Install new parameters; residuals and priors are rebuilt."""
        self.params = params
        self.cache.rebuild(self.tracks, params)
        self.log_prior = log_prior_tracks(self.tracks, params)

    def spot_check(self, tol=1e-6):
        """Verify cached quantities against a recomputation from scratch.

        Raises NumericalError when incremental updates drifted beyond ``tol``
        (relative); on success the exact values replace the cached ones.
        """
        fresh_prior = log_prior_tracks(self.tracks, self.params)
        fresh_cache = ResidualLikelihood(self.cache.y, self.params, self.tracks)
        claims = ((self.log_prior, fresh_prior, "track prior"),
                  (self.cache.log_lik_total, fresh_cache.log_lik_total, "image likelihood"))
        for cached, fresh, what in claims:
            if cached == fresh:
                continue
            if not np.isfinite(fresh) or abs(cached - fresh) > tol * max(1.0, abs(fresh)):
                raise NumericalError(
                    f"cached {what} drifted: {cached!r} vs recomputed {fresh!r}")
        self.log_prior = fresh_prior
        self.cache.rebuild(self.tracks)
