"""Conditional SMC refresh of a single track's state sequence.

The track's positions, velocities and intensities are redrawn jointly by a
particle filter constrained to keep the current sequence as its reference
path, with ancestor sampling.  The kernel leaves the track's conditional
posterior invariant, so it is used as a Gibbs step: the returned track is
always adopted.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import A, S1, S2, Track, V1, V2, log_transition, psf_patch

log = logging.getLogger(__name__)


@dataclass
class CsmcConfig:
    n_particles: int = 15
    resampling: str = "multinomial"
    ancestor_sampling: bool = True

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.resampling != "multinomial":
            raise ValueError("only multinomial resampling is implemented")


def _residual_bases(track, others, y, params):
    """Per-lifetime-frame residual images with every other track subtracted."""
    bases = []
    for k in range(track.length):
        t = track.tb + k
        frame = y.frames[t] - params.background[t]
        for other in others:
            if other.alive_at(t):
                patch = psf_patch(other.state_at(t), params)
                if patch is not None:
                    r0, r1, c0, c1, vals = patch
                    frame[r0:r1 + 1, c0:c1 + 1] -= vals
        bases.append(frame)
    return bases


def _blob_loglik(base, x, params, sig2):
    """Log-likelihood gain from adding the blob of ``x`` to a residual frame."""
    patch = psf_patch(x, params)
    if patch is None:
        return 0.0
    r0, r1, c0, c1, vals = patch
    window = base[r0:r1 + 1, c0:c1 + 1]
    return (np.sum(vals * window) - 0.5 * np.sum(vals * vals)) / sig2


def _initial_particles(count, params, rng):
    out = np.empty((count, 5))
    out[:, A] = (params.birth_mean_intensity
                 + math.sqrt(params.birth_var_intensity) * rng.standard_normal(count))
    out[:, S1] = (params.birth_mean_x
                  + math.sqrt(params.birth_var_position) * rng.standard_normal(count))
    out[:, S2] = (params.birth_mean_y
                  + math.sqrt(params.birth_var_position) * rng.standard_normal(count))
    out[:, V1] = math.sqrt(params.birth_var_velocity) * rng.standard_normal(count)
    out[:, V2] = math.sqrt(params.birth_var_velocity) * rng.standard_normal(count)
    return out


def _propagate(prev, params, rng):
    """One dynamics step for a block of particles; matches sample_transition."""
    count = len(prev)
    dt = params.frame_dt
    lx, ly = params.spatial_noise_chol()
    out = np.empty_like(prev)
    out[:, A] = prev[:, A] + math.sqrt(params.drive_var_intensity) * rng.standard_normal(count)
    ex = rng.standard_normal((count, 2)) @ lx.T
    ey = rng.standard_normal((count, 2)) @ ly.T
    out[:, S1] = prev[:, S1] + dt * prev[:, V1] + ex[:, 0]
    out[:, V1] = prev[:, V1] + ex[:, 1]
    out[:, S2] = prev[:, S2] + dt * prev[:, V2] + ey[:, 0]
    out[:, V2] = prev[:, V2] + ey[:, 1]
    return out


def _normalized(logw):
    total = logsumexp(logw)
    if not np.isfinite(total):
        return None
    return np.exp(logw - total)


def csmc_refresh(track, others, y, params, cfg, rng, cache=None):
    """Redraw one track's states by conditional SMC with ancestor sampling.

    Returns a track with the same birth frame, length and label.  With a
    single particle the reference path is the only path, so the input states
    come back unchanged.  If every particle weight underflows the reference
    is kept and a warning logged.
    """
    cfg = cfg or CsmcConfig()
    N = cfg.n_particles
    L = track.length
    ref = track.states
    bases = (cache.residual_without(track) if cache is not None
             else _residual_bases(track, others, y, params))

    particles = np.empty((L, N, 5))
    ancestors = np.empty((L, N), dtype=int)
    logw = np.empty(N)

    particles[0, 0] = ref[0]
    if N > 1:
        particles[0, 1:] = _initial_particles(N - 1, params, rng)
    sig2 = float(params.noise_var[track.tb])
    for j in range(N):
        logw[j] = _blob_loglik(bases[0], particles[0, j], params, sig2)

    for k in range(1, L):
        probs = _normalized(logw)
        if probs is None:
            log.warning("degenerate particle weights at offset %d; keeping reference", k)
            return Track(track.tb, ref.copy(), track.label)
        if cfg.ancestor_sampling:
            # ancestry of the reference is itself resampled, weighting each
            # particle by how well it explains the next reference state
            anc_logw = np.log(probs) + log_transition(particles[k - 1], ref[k], params)
            anc_probs = _normalized(anc_logw)
            ancestors[k, 0] = (0 if anc_probs is None
                               else int(rng.choice(N, p=anc_probs)))
        else:
            ancestors[k, 0] = 0
        if N > 1:
            ancestors[k, 1:] = rng.choice(N, size=N - 1, p=probs)
        particles[k, 0] = ref[k]
        if N > 1:
            particles[k, 1:] = _propagate(particles[k - 1, ancestors[k, 1:]], params, rng)
        sig2 = float(params.noise_var[track.tb + k])
        for j in range(N):
            logw[j] = _blob_loglik(bases[k], particles[k, j], params, sig2)

    probs = _normalized(logw)
    if probs is None:
        log.warning("degenerate particle weights at final frame; keeping reference")
        return Track(track.tb, ref.copy(), track.label)
    idx = int(rng.choice(N, p=probs))
    states = np.empty((L, 5))
    for k in range(L - 1, -1, -1):
        states[k] = particles[k, idx]
        if k > 0:
            idx = int(ancestors[k, idx])
    return Track(track.tb, states, track.label)
