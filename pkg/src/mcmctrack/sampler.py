"""Top-level sampler: configuration moves, per-track refreshes, parameter
updates, orchestrated into one chain with diagnostics.

One outer iteration = n1 configuration sweeps, then n2 rounds of per-track
conditional-SMC refreshes, then n3 parameter-update scans.  n3 = 0 freezes
the parameters (pure tracking); n2 = 0 skips the refreshes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .birth import ProposalConfig
from .chain import ChainState
from .model import alive_positions, canonical_order, log_prior_tracks
from .moves import sweep
from .params import (PriorConfig, update_discrete_params,
                     update_dynamics_params, update_observation_params)
from .pgibbs import CsmcConfig, csmc_refresh
from .representation import mtt_from_tracks

LEARN_BLOCKS = ("discrete", "dynamics", "observation")


@dataclass
class SamplerConfig:
    move_probs: tuple = (0.25, 0.25, 0.25, 0.25)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    csmc: CsmcConfig = field(default_factory=CsmcConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    burn_in: float = 0.25
    check_every: int = 1000         # sweeps between cache spot checks
    check_tol: float = 1e-6
    refresh_order: str = "fixed"    # fixed | random
    learn: tuple = LEARN_BLOCKS     # blocks updated by the parameter scan
    obs_tied: bool = False          # one (b, sigma^2) pair shared by frames
    obs_fit_background: bool = True

    def __post_init__(self):
        if not 0.0 <= self.burn_in < 1.0:
            raise ValueError("burn_in must lie in [0, 1)")
        if self.refresh_order not in ("fixed", "random"):
            raise ValueError("refresh_order must be 'fixed' or 'random'")
        unknown = set(self.learn) - set(LEARN_BLOCKS)
        if unknown:
            raise ValueError(f"unknown learn blocks: {sorted(unknown)}")


def init_chain(y, theta0, cfg: SamplerConfig | None = None, rng=None,
               tracks=()) -> ChainState:
    """Chain state with parameters as given; tracks start empty unless seeded.

    ``tracks`` accepts an initial configuration, typically the greedy
    baseline's output.  A seed matters when the parameters are learned:
    from an empty start the discrete conditionals see zero births and zero
    survivals, and under diffuse priors they can wander to values that veto
    every proposal for a long time.
    """
    theta0 = theta0.with_updates()      # re-runs validation
    if y.frames.shape != (theta0.n_frames, theta0.rows, theta0.cols):
        raise ValueError("image stack and parameter geometry disagree")
    rng = rng if rng is not None else np.random.default_rng()
    return ChainState.create(y, theta0, list(tracks), rng)


def _refresh_tracks(state, y, cfg, rng):
    """One Gibbs pass of conditional-SMC refreshes over every track."""
    order = list(range(len(state.tracks)))
    if cfg.refresh_order == "random":
        rng.shuffle(order)
    tracks = list(state.tracks)
    for k in order:
        old = tracks[k]
        new = csmc_refresh(old, None, y, state.params, cfg.csmc, rng,
                           cache=state.cache)
        state.cache.remove_track(old)
        state.cache.add_track(new)
        tracks[k] = new
    new_list = canonical_order(tracks)
    state.replace_tracks(new_list, log_prior_tracks(new_list, state.params))


def _update_params(state, y, cfg, rng):
    """One scan of conjugate parameter draws over the configured blocks."""
    updates = {}
    if "discrete" in cfg.learn:
        seq = mtt_from_tracks(state.tracks, state.params.n_frames)
        p_s, lam = update_discrete_params(seq, cfg.prior, rng)
        updates["survival_prob"] = p_s
        updates["birth_rate"] = lam
    if "dynamics" in cfg.learn:
        updates.update(update_dynamics_params(state.tracks, state.params,
                                              cfg.prior, rng))
    if "observation" in cfg.learn:
        b, var = update_observation_params(state.tracks, y, state.params,
                                           cfg.prior, rng, tied=cfg.obs_tied,
                                           fit_background=cfg.obs_fit_background)
        updates["background"] = b
        updates["noise_var"] = var
    if updates:
        state.set_params(state.params.with_updates(**updates))


def _diagnostics(state, it):
    acc = {}
    for fam in state.proposed:
        prop = state.proposed[fam]
        acc[fam] = (state.accepted[fam] / prop) if prop else 0.0
    # in-view target count per frame; K is the raw track count
    counts = [len(alive_positions(state.tracks, t, state.params))
              for t in range(state.params.n_frames)]
    return {"iter": it, "log_joint": float(state.log_joint),
            "K": len(state.tracks), "acc": acc, "frame_counts": counts}


def algorithm_iteration(state, y, loops, cfg, rng):
    """One outer iteration: moves, refreshes, parameter scans, in that order."""
    n1, n2, n3 = loops
    for _ in range(n1):
        sweep(state, y, state.params, rng, cfg.move_probs, cfg.proposal)
    for _ in range(n2):
        _refresh_tracks(state, y, cfg, rng)
    for _ in range(n3):
        _update_params(state, y, cfg, rng)


def run_chain(y, init: ChainState, loops, iters, cfg: SamplerConfig | None = None,
              rng=None):
    """Generate one posterior sample per outer iteration.

    Yields (tracks, params, log_joint, diagnostics) tuples; tracks are
    snapshots safe to keep.  The caller applies burn-in; cfg.burn_in is the
    conventional fraction used by the command-line driver.
    """
    cfg = cfg or SamplerConfig()
    rng = rng if rng is not None else init.rng
    state = init
    next_check = ((state.sweep // cfg.check_every) + 1) * cfg.check_every
    for it in range(iters):
        algorithm_iteration(state, y, loops, cfg, rng)
        if state.sweep >= next_check:
            state.spot_check(cfg.check_tol)
            next_check = ((state.sweep // cfg.check_every) + 1) * cfg.check_every
        yield ([tr.copy() for tr in state.tracks], state.params,
               float(state.log_joint), _diagnostics(state, it))


def burn_in_slice(iters, burn_in):
    """Index of the first retained sample for a given burn-in fraction."""
    return min(iters, int(np.ceil(burn_in * iters)))
