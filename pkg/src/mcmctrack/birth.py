"""Sequential data-driven proposals that create or extend tracks.

A proposal walks frame by frame.  Each step picks one candidate peak of the
matched-filtered residual uniformly at random, fits a local Gaussian of
(intensity, position) around it, and accepts the presence of a target there
with probability driven by the fit's evidence against a pure-noise
explanation of the same pixels.  An accepted step samples the new state from
the fitted Gaussian; a failed step ends the walk.  Velocities are filled in
last from their exact conditional given the walked positions.

The per-step proposal density is a sub-probability mixture over peaks: the
missing mass is the probability of stopping (or, on the very first step of a
birth, of aborting the move).  Evaluation and sampling share the same mixture
code so the two stay consistent to machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.stats import poisson

from .filtering import (ResidualFrame, candidate_peaks, gamma_threshold,
                        get_filtered, match_filter, search_window)
from .gaussmath import (LOG_2PI, VelocityConditional, first_velocity_moments,
                        last_velocity_moments)
from .model import (ResidualLikelihood, Track, log_track_states,
                    sample_initial_state, sample_transition)
from .representation import MttSequence, tracks_from_mtt


@dataclass
class ProposalConfig:
    """Tunables shared by birth and extension proposals.

    prior_weight is the mixture weight of the pure-prior branch inside the
    birth and extension proposals; it guarantees every configuration a
    positive reverse density, so removal moves stay available for tracks the
    data-driven walk would never construct (drifted off the image, say).
    """

    gamma_rule: str = "paper-min"
    h1_rule: str = "min"            # accept-H1 prob: "min" = min{1, rho}, "odds" = rho/(1+rho)
    window_halfwidth: int | None = None
    prior_weight: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.prior_weight <= 1.0:
            raise ValueError("prior_weight must lie in [0, 1]")


@dataclass
class GaussPrior3:
    """Independent Gaussian prior over (intensity, s1, s2)."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.var = np.asarray(self.var, dtype=float)

    def logpdf(self, x):
        d = np.asarray(x, dtype=float) - self.mean
        return float(-0.5 * np.sum(d * d / self.var + np.log(2.0 * np.pi * self.var)))


def initial_prior3(params) -> GaussPrior3:
    """Birth prior on (a, s1, s2), velocities marginalised out."""
    prior = getattr(params, "_init_prior3", None)
    if prior is None:
        prior = GaussPrior3(
            [params.birth_mean_intensity, params.birth_mean_x, params.birth_mean_y],
            [params.birth_var_intensity, params.birth_var_position,
             params.birth_var_position])
        params._init_prior3 = prior
    return prior


def forward_prior3(states, params) -> GaussPrior3:
    """Predictive law of (a, s1, s2) one frame after the given states.

    Velocities are integrated out: the position predictive uses the exact
    conditional moments of the final velocity given the walked positions.
    """
    states = np.asarray(states, dtype=float)
    dt = params.frame_dt
    (mx, px), (my, py) = last_velocity_moments(states[:, 1:3], params)
    mean = [states[-1, 0], states[-1, 1] + dt * mx, states[-1, 2] + dt * my]
    var = [params.drive_var_intensity,
           dt * dt * px + params.drive_var_x * dt**3 / 3.0,
           dt * dt * py + params.drive_var_y * dt**3 / 3.0]
    return GaussPrior3(mean, var)


def backward_prior3(states, params) -> GaussPrior3:
    """Mirror of forward_prior3 for the frame before the given states."""
    states = np.asarray(states, dtype=float)
    dt = params.frame_dt
    (mx, px), (my, py) = first_velocity_moments(states[:, 1:3], params)
    mean = [states[0, 0], states[0, 1] - dt * mx, states[0, 2] - dt * my]
    var = [params.drive_var_intensity,
           dt * dt * px + params.drive_var_x * dt**3 / 3.0,
           dt * dt * py + params.drive_var_y * dt**3 / 3.0]
    return GaussPrior3(mean, var)


def velocity_conditional(positions, params) -> VelocityConditional:
    """Exact Gaussian law of a track's velocities given its positions."""
    return VelocityConditional(positions, params)


# ---------------------------------------------------------------------------
# Laplace fits, batched over candidate peaks
# ---------------------------------------------------------------------------

@dataclass
class LaplaceFit:
    """Local Gaussian fit of (a, s1, s2) around one candidate peak."""

    center: np.ndarray            # (abar, sbar1, sbar2)
    precision: np.ndarray         # 3x3, negative Hessian of the log joint
    log_h1_evidence: float
    log_null: float
    valid: bool


@dataclass
class StepMixture:
    """One walk step's proposal: uniform peak pick x accept-H1 x Gaussian.

    All arrays are indexed by peak.  ``log_accept`` already folds the prior
    odds and the evidence ratio through the configured acceptance rule, so the
    proposal density of a state x is logsumexp(log_pick + log_accept +
    component_logpdf(x)), a sub-probability whose deficit is the stop mass.
    """

    peaks: np.ndarray             # (P, 2) int pixel coordinates
    means: np.ndarray             # (P, 3)
    chol: np.ndarray              # (P, 3, 3) lower Cholesky of the precisions
    precision: np.ndarray         # (P, 3, 3)
    log_det: np.ndarray           # (P,) log|D|
    log_rho: np.ndarray           # (P,) log test ratios, -inf for invalid fits
    log_accept: np.ndarray        # (P,) log accept-H1 probabilities
    log_evidence: np.ndarray      # (P,)
    log_null: np.ndarray          # (P,)
    valid: np.ndarray             # (P,) bool
    t: int

    @property
    def n_peaks(self):
        return len(self.peaks)

    @property
    def log_pick(self):
        return -math.log(self.n_peaks) if self.n_peaks else -np.inf

    @property
    def accept_mass(self):
        """Sum over peaks of pick x accept probability, in [0, 1]."""
        if not self.n_peaks:
            return 0.0
        return float(np.exp(self.log_accept, where=np.isfinite(self.log_accept),
                            out=np.zeros(self.n_peaks)).sum() / self.n_peaks)

    def component_logpdf(self, x):
        if not self.n_peaks:
            return np.empty(0)
        d = np.asarray(x, dtype=float) - self.means
        L = self.chol
        w0 = L[:, 0, 0] * d[:, 0] + L[:, 1, 0] * d[:, 1] + L[:, 2, 0] * d[:, 2]
        w1 = L[:, 1, 1] * d[:, 1] + L[:, 2, 1] * d[:, 2]
        w2 = L[:, 2, 2] * d[:, 2]
        quad = w0 * w0 + w1 * w1 + w2 * w2
        out = -1.5 * LOG_2PI + 0.5 * self.log_det - 0.5 * quad
        return np.where(self.valid, out, -np.inf)

    def logq(self, x):
        """Log proposal density of landing at state x on this step."""
        if not self.n_peaks:
            return -np.inf
        terms = self.log_pick + self.log_accept + self.component_logpdf(x)
        m = float(np.max(terms))
        if not math.isfinite(m):
            return -np.inf
        return m + math.log(float(np.exp(terms - m).sum()))

    def sample(self, rng):
        """Draw (state, peak index); state is None when the step fails."""
        if not self.n_peaks:
            return None, -1
        i = int(rng.integers(self.n_peaks))
        if rng.random() >= math.exp(self.log_accept[i]):
            return None, i
        z = rng.standard_normal(3)
        L = self.chol[i]
        x2 = z[2] / L[2, 2]
        x1 = (z[1] - L[2, 1] * x2) / L[1, 1]
        x0 = (z[0] - L[1, 0] * x1 - L[2, 0] * x2) / L[0, 0]
        return self.means[i] + np.array([x0, x1, x2]), i


def _empty_mixture(t):
    z = np.empty(0)
    return StepMixture(np.empty((0, 2), dtype=int), np.empty((0, 3)),
                       np.empty((0, 3, 3)), np.empty((0, 3, 3)),
                       z, z, z, z, z, np.empty(0, dtype=bool), t)


def _step_features(p):
    """Kernel-grid factor tensors shared by every peak fit; cached on params."""
    feats = getattr(p, "_step_feats", None)
    if feats is None:
        kern = p.psf_kernel()
        hw = (p.footprint - 1) // 2
        off = np.arange(-hw, hw + 1)
        u1 = np.broadcast_to((off * p.pixel_pitch / p.psf_width**2)[:, None], kern.shape)
        u2 = np.broadcast_to((off * p.pixel_pitch / p.psf_width**2)[None, :], kern.shape)
        inv_w2 = 1.0 / p.psf_width**2
        grad_feats = np.stack([kern * kern, kern * kern * u1, kern * kern * u2,
                               kern * kern * u1 * u1, kern * kern * u1 * u2,
                               kern * kern * u2 * u2])
        hess_feats = np.stack([kern * u1, kern * u2, kern * (u1 * u1 - inv_w2),
                               kern * u1 * u2, kern * (u2 * u2 - inv_w2)])
        feats = (kern, off, grad_feats, hess_feats)
        p._step_feats = feats
    return feats


def _peak_fit_stats(resid_values, filt_values, peaks, t, params):
    """Prior-independent statistics of each peak's local quadratic fit.

    Everything here depends only on the residual content, so step proposals
    memoise these tuples by residual fingerprint; the arrays are frozen
    because mixtures share them.
    """
    p = params
    kern, off, grad_feats, hess_feats = _step_features(p)
    rows_idx = peaks[:, 0, None, None] + off[None, :, None]
    cols_idx = peaks[:, 1, None, None] + off[None, None, :]
    mask = ((rows_idx >= 0) & (rows_idx < p.rows)
            & (cols_idx >= 0) & (cols_idx < p.cols)).astype(float)
    y = resid_values[np.clip(rows_idx, 0, p.rows - 1),
                     np.clip(cols_idx, 0, p.cols - 1)] * mask
    abar = filt_values[peaks[:, 0], peaks[:, 1]]
    means = np.column_stack([abar, peaks * p.pixel_pitch])
    e = (y - abar[:, None, None] * kern) * mask
    G = np.einsum("pij,kij->pk", mask, grad_feats)
    B = np.einsum("pij,kij->pk", e, hess_feats)
    n_in = mask.sum(axis=(1, 2))
    yy = np.einsum("pij,pij->p", y, y)
    ee = np.einsum("pij,pij->p", e, e)
    abar = np.ascontiguousarray(abar)
    for arr in (peaks, abar, means, G, B, n_in, yy, ee):
        arr.flags.writeable = False
    return peaks, abar, means, G, B, n_in, yy, ee


def _assemble_step_mixture(stats, prior: GaussPrior3, log_prior_odds, t,
                           params, h1_rule) -> StepMixture:
    peaks, abar, means, G, B, n_in, yy, ee = stats
    sig2 = float(params.noise_var[t])
    D = np.empty((len(peaks), 3, 3))
    D[:, 0, 0] = G[:, 0] / sig2 + 1.0 / prior.var[0]
    D[:, 0, 1] = D[:, 1, 0] = (abar * G[:, 1] - B[:, 0]) / sig2
    D[:, 0, 2] = D[:, 2, 0] = (abar * G[:, 2] - B[:, 1]) / sig2
    D[:, 1, 1] = (abar**2 * G[:, 3] - abar * B[:, 2]) / sig2 + 1.0 / prior.var[1]
    D[:, 1, 2] = D[:, 2, 1] = (abar**2 * G[:, 4] - abar * B[:, 3]) / sig2
    D[:, 2, 2] = (abar**2 * G[:, 5] - abar * B[:, 4]) / sig2 + 1.0 / prior.var[2]

    with np.errstate(invalid="ignore", divide="ignore"):
        L00 = np.sqrt(D[:, 0, 0])
        L10 = D[:, 1, 0] / L00
        L20 = D[:, 2, 0] / L00
        c1 = D[:, 1, 1] - L10 * L10
        L11 = np.sqrt(c1)
        L21 = (D[:, 2, 1] - L20 * L10) / L11
        c2 = D[:, 2, 2] - L20 * L20 - L21 * L21
        L22 = np.sqrt(c2)
        valid = (D[:, 0, 0] > 0) & (c1 > 0) & (c2 > 0)
        valid &= np.isfinite(L10) & np.isfinite(L21)
        log_det = 2.0 * (np.log(L00) + np.log(L11) + np.log(L22))
    chol = np.zeros_like(D)
    chol[:, 0, 0], chol[:, 1, 0], chol[:, 2, 0] = L00, L10, L20
    chol[:, 1, 1], chol[:, 2, 1], chol[:, 2, 2] = L11, L21, L22

    const = n_in * (LOG_2PI + math.log(sig2))
    log_null = -0.5 * (yy / sig2 + const)
    g_center = -0.5 * (ee / sig2 + const)
    dm = means - prior.mean
    log_prior_center = -0.5 * np.sum(dm * dm / prior.var
                                     + np.log(2.0 * np.pi * prior.var), axis=1)
    with np.errstate(invalid="ignore"):
        log_evidence = g_center + log_prior_center + 1.5 * LOG_2PI - 0.5 * log_det
        log_rho = np.where(valid, log_prior_odds + log_evidence - log_null, -np.inf)
    if h1_rule == "min":
        log_accept = np.minimum(0.0, log_rho)
    elif h1_rule == "odds":
        log_accept = -np.logaddexp(0.0, -log_rho)
    else:
        raise ValueError(f"unknown h1 rule: {h1_rule!r}")
    return StepMixture(peaks, means, chol, D, log_det, log_rho, log_accept,
                       log_evidence, np.where(valid, log_null, np.nan), valid, t)


def build_step_mixture(resid_values, filt_values, peaks, prior: GaussPrior3,
                       log_prior_odds, t, params, h1_rule="min") -> StepMixture:
    """Fit every candidate peak at once and assemble the step proposal.

    Each fit expands the log joint of (a, s1, s2) to second order around the
    peak's matched-filter estimate (filtered value, pixel position); the
    resulting Gaussian doubles as the H1 evidence approximation and as the
    sampling component.  Non positive-definite curvature marks a fit invalid,
    which zeroes that peak's acceptance probability.
    """
    peaks = np.array(peaks, dtype=int).reshape(-1, 2)
    if len(peaks) == 0:
        return _empty_mixture(t)
    stats = _peak_fit_stats(resid_values, filt_values, peaks, t, params)
    return _assemble_step_mixture(stats, prior, log_prior_odds, t, params, h1_rule)


def laplace_fit(res: ResidualFrame, peak, prior: GaussPrior3, params) -> LaplaceFit:
    """Single-peak fit (the batched path is build_step_mixture)."""
    filt = match_filter(res, params)
    mix = build_step_mixture(res.values, filt.values, [peak], prior, 0.0, res.t, params)
    return LaplaceFit(mix.means[0], mix.precision[0], float(mix.log_evidence[0]),
                      float(mix.log_null[0]), bool(mix.valid[0]))


def test_ratio(res: ResidualFrame, peak, p_h1, prior: GaussPrior3, params) -> float:
    """Evidence-weighted prior odds of a target versus pure noise at a peak."""
    if not 0.0 < p_h1 < 1.0:
        raise ValueError("p_h1 must lie strictly between 0 and 1")
    fit = laplace_fit(res, peak, prior, params)
    if not fit.valid:
        return 0.0
    log_rho = (math.log(p_h1) - math.log1p(-p_h1)
               + fit.log_h1_evidence - fit.log_null)
    return float(np.exp(log_rho))


# ---------------------------------------------------------------------------
# Birth walks: sampling and density evaluation
# ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    t: int
    peak: tuple | None
    accept_prob: float


@dataclass
class BirthProposalRecord:
    t_b: int
    track: Track | None
    log_density: float
    stop_reason: str              # beyond_n | empty_G | H1_rejected | not_survive
    steps: list = field(default_factory=list)


@lru_cache(maxsize=4096)
def _birth_log_odds(k_b, rate):
    """Log prior odds that the frame holds more than k_b newborn targets."""
    logp = poisson.logsf(k_b, rate)
    p = math.exp(logp)
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    return float(logp - math.log1p(-p))


def _survival_log_odds(params):
    ps = params.survival_prob
    if ps <= 0.0:
        return -np.inf
    if ps >= 1.0:
        return np.inf
    return math.log(ps) - math.log1p(-ps)


def _log(p):
    return math.log(p) if p > 0.0 else -np.inf


def _as_tracks(seq):
    if seq is None:
        return []
    if isinstance(seq, MttSequence):
        return tracks_from_mtt(seq)
    return list(seq)


def _ensure_cache(cache, tracks, y, params):
    if cache is not None:
        return cache
    return ResidualLikelihood(y, params, tracks)


def _cached_peak_stats(cache, t, params, cfg: ProposalConfig, region=None):
    """Peak fit statistics for a residual frame, memoised by content hash.

    Proposal densities re-walk configurations against residuals the sampler
    has visited before (rejections revert the cache byte for byte), so a
    small per-frame memo skips the peak search and patch statistics.
    """
    memo = getattr(cache, "step_memo", None)
    if memo is None:
        memo = cache.step_memo = {}
    key = (cache.fingerprint(t), cfg.gamma_rule, region)
    slot = memo.setdefault(t, {})
    hit = slot.get(key)
    if hit is None:
        filt = get_filtered(cache, t, params)
        thr = gamma_threshold(t, params, cfg.gamma_rule)
        peaks = candidate_peaks(filt, t, params, threshold=thr, region=region)
        if len(peaks) == 0:
            hit = None, t
        else:
            hit = _peak_fit_stats(cache.residual(t), filt.values, peaks,
                                  t, params), t
        if len(slot) >= 32:
            slot.pop(next(iter(slot)))
        slot[key] = hit
    return hit[0]


def first_step_mixture(cache, t, params, cfg: ProposalConfig, k_b) -> StepMixture:
    """Whole-frame mixture for the first state of a prospective track."""
    stats = _cached_peak_stats(cache, t, params, cfg)
    if stats is None:
        return _empty_mixture(t)
    return _assemble_step_mixture(stats, initial_prior3(params),
                                  _birth_log_odds(k_b, params.birth_rate),
                                  t, params, cfg.h1_rule)


def continuation_mixture(cache, t, params, cfg: ProposalConfig,
                         prior: GaussPrior3, center_position) -> StepMixture:
    """Windowed mixture for continuing a walk into frame t."""
    region = search_window(center_position, params, cfg.window_halfwidth)
    stats = _cached_peak_stats(cache, t, params, cfg, region=region)
    if stats is None:
        return _empty_mixture(t)
    return _assemble_step_mixture(stats, prior, _survival_log_odds(params),
                                  t, params, cfg.h1_rule)


def _log_stop(mixture: StepMixture, params):
    """Log probability that a walk halts at this step's frame."""
    q_cont = params.survival_prob * mixture.accept_mass
    return math.log1p(-q_cont) if q_cont < 1.0 else -np.inf


def _sample_data_birth(tracks, cache, params, rng, t_b,
                       cfg: ProposalConfig) -> BirthProposalRecord:
    """Data-driven branch of the birth proposal; log_density is branch-only.

    The walk continues forward while the survival coin, peak availability and
    the evidence test all pass, and finishes by sampling velocities from
    their conditional.  A first-step failure returns track=None.
    """
    n = params.n_frames
    k_b = sum(1 for tr in tracks if tr.tb == t_b)
    log_q = -math.log(n)
    steps: list[StepRecord] = []

    mix = first_step_mixture(cache, t_b, params, cfg, k_b)
    if mix.n_peaks == 0:
        return BirthProposalRecord(t_b, None, -np.inf, "empty_G", steps)
    x, i = mix.sample(rng)
    if x is None:
        steps.append(StepRecord(t_b, tuple(mix.peaks[i]), math.exp(mix.log_accept[i])))
        return BirthProposalRecord(t_b, None, -np.inf, "H1_rejected", steps)
    steps.append(StepRecord(t_b, tuple(mix.peaks[i]), math.exp(mix.log_accept[i])))
    log_q += mix.logq(x)
    states3 = [x]

    stop_reason = "beyond_n"
    for t in range(t_b + 1, n):
        survive = rng.random() < params.survival_prob
        prior = forward_prior3(np.asarray(states3), params)
        mix = continuation_mixture(cache, t, params, cfg, prior, states3[-1][1:3])
        if not survive:
            stop_reason = "not_survive"
            log_q += _log_stop(mix, params)
            break
        x, i = mix.sample(rng)
        if x is None:
            stop_reason = "empty_G" if mix.n_peaks == 0 else "H1_rejected"
            log_q += _log_stop(mix, params)
            break
        steps.append(StepRecord(t, tuple(mix.peaks[i]), math.exp(mix.log_accept[i])))
        log_q += _log(params.survival_prob) + mix.logq(x)
        states3.append(x)

    states3 = np.asarray(states3)
    vc = VelocityConditional(states3[:, 1:3], params)
    vel = vc.sample(rng)
    log_q += vc.logpdf(vel)
    track = Track(t_b, np.column_stack([states3, vel]))
    return BirthProposalRecord(t_b, track, float(log_q), stop_reason, steps)


def _data_birth_density(track: Track, tracks, cache, params,
                        cfg: ProposalConfig) -> float:
    """Log density of the data-driven branch producing exactly ``track``.

    Returns -inf when that branch could not reach the track (no peaks at its
    first frame, say).
    """
    n = params.n_frames
    k_b = sum(1 for tr in tracks if tr.tb == track.tb)
    log_q = -math.log(n)

    mix = first_step_mixture(cache, track.tb, params, cfg, k_b)
    log_q += mix.logq(track.states[0, :3])
    if not np.isfinite(log_q):
        return -np.inf
    for j in range(1, track.length):
        prior = forward_prior3(track.states[:j], params)
        mix = continuation_mixture(cache, track.tb + j, params, cfg, prior,
                                   track.states[j - 1, 1:3])
        log_q += _log(params.survival_prob) + mix.logq(track.states[j, :3])
        if not np.isfinite(log_q):
            return -np.inf
    if track.end < n:
        prior = forward_prior3(track.states, params)
        mix = continuation_mixture(cache, track.end, params, cfg, prior,
                                   track.states[-1, 1:3])
        log_q += _log_stop(mix, params)
    vc = VelocityConditional(track.states[:, 1:3], params)
    log_q += vc.logpdf(track.states[:, 3:5])
    return float(log_q)


def _mix_densities(log_q_prior, log_q_data, weight):
    if weight <= 0.0:
        return float(log_q_data)
    if weight >= 1.0:
        return float(log_q_prior)
    return float(np.logaddexp(math.log(weight) + log_q_prior,
                              math.log1p(-weight) + log_q_data))


def prior_birth_density(track: Track, params) -> float:
    """Log density of the prior branch: uniform frame, model dynamics walk."""
    n = params.n_frames
    p_s = params.survival_prob
    log_q = -math.log(n) + log_track_states(track, params)
    log_q += (track.length - 1) * _log(p_s)
    if track.end < n:
        log_q += _log(1.0 - p_s)
    return float(log_q)


def _sample_prior_birth(params, rng, t_b) -> Track:
    states = [sample_initial_state(params, rng)]
    t = t_b
    while t + 1 < params.n_frames and rng.random() < params.survival_prob:
        states.append(sample_transition(states[-1], params, rng))
        t += 1
    return Track(t_b, np.array(states))


def sample_birth_track(seq, y, params, rng, fixed_t_b=None,
                       cfg: ProposalConfig | None = None,
                       cache: ResidualLikelihood | None = None) -> BirthProposalRecord:
    """Propose one new track; the record's log_density is exact.

    The proposal is a two-component mixture.  With probability
    cfg.prior_weight the track is drawn from the model prior (uniform birth
    frame, dynamics walk), which gives every track a positive density and so
    keeps the matching death move able to remove tracks the data-driven
    branch cannot reach.  Otherwise the data-driven walk runs: peaks of the
    filtered residual gated by the evidence test, velocities from their exact
    conditional.  log_density is always the full mixture density; the frame
    factor 1/n is included even when fixed_t_b pins the frame.  A data-branch
    first-step failure returns track=None, signalling the move aborts.
    """
    cfg = cfg or ProposalConfig()
    tracks = _as_tracks(seq)
    cache = _ensure_cache(cache, tracks, y, params)
    n = params.n_frames
    t_b = int(rng.integers(n)) if fixed_t_b is None else int(fixed_t_b)
    w = cfg.prior_weight
    if w > 0.0 and rng.random() < w:
        track = _sample_prior_birth(params, rng, t_b)
        log_q = _mix_densities(prior_birth_density(track, params),
                               _data_birth_density(track, tracks, cache, params, cfg),
                               w)
        return BirthProposalRecord(t_b, track, log_q, "prior_branch", [])
    rec = _sample_data_birth(tracks, cache, params, rng, t_b, cfg)
    if rec.track is None:
        return rec
    log_q = _mix_densities(prior_birth_density(rec.track, params),
                           rec.log_density, w)
    return BirthProposalRecord(rec.t_b, rec.track, log_q, rec.stop_reason, rec.steps)


def birth_density(track: Track, seq, y, params,
                  cfg: ProposalConfig | None = None,
                  cache: ResidualLikelihood | None = None) -> float:
    """Log density under the full birth proposal of producing ``track``.

    ``seq`` (or ``cache``) describes the configuration the track would be
    born into, i.e. without the track itself.
    """
    cfg = cfg or ProposalConfig()
    tracks = _as_tracks(seq)
    cache = _ensure_cache(cache, tracks, y, params)
    w = cfg.prior_weight
    log_q_data = (_data_birth_density(track, tracks, cache, params, cfg)
                  if w < 1.0 else -np.inf)
    log_q_prior = prior_birth_density(track, params) if w > 0.0 else -np.inf
    return _mix_densities(log_q_prior, log_q_data, w)


# ---------------------------------------------------------------------------
# Multi-step extension segments (shared by the extension/reduction move)
# ---------------------------------------------------------------------------

def _sample_data_segment(track: Track, direction, cache, params, rng,
                         cfg: ProposalConfig):
    """Data-driven branch of the extension walk; log_q is branch-only.

    Returns (segment, log_q): ``segment`` is an (m, 3) array of new
    (a, s1, s2) states ordered by frame (possibly m=0), and ``log_q`` is the
    walk's exact log density including survival coins and the final stop
    factor.  Velocities are the caller's concern.
    """
    n = params.n_frames
    prefix = [np.asarray(s, dtype=float)[:3] for s in track.states]
    seg: list[np.ndarray] = []
    log_q = 0.0
    frames = (range(track.end, n) if direction == "forward"
              else range(track.tb - 1, -1, -1))
    for t in frames:
        arr = np.asarray(prefix)
        survive = rng.random() < params.survival_prob
        if direction == "forward":
            prior = forward_prior3(arr, params)
            center = arr[-1, 1:3]
        else:
            prior = backward_prior3(arr, params)
            center = arr[0, 1:3]
        mix = continuation_mixture(cache, t, params, cfg, prior, center)
        if not survive:
            log_q += _log_stop(mix, params)
            break
        x, _ = mix.sample(rng)
        if x is None:
            log_q += _log_stop(mix, params)
            break
        log_q += _log(params.survival_prob) + mix.logq(x)
        seg.append(x)
        prefix = prefix + [x] if direction == "forward" else [x] + prefix
    if direction == "backward":
        seg.reverse()
    return np.asarray(seg).reshape(-1, 3), float(log_q)


def _data_segment_density(new_track: Track, n_appended, direction, cache,
                          params, cfg: ProposalConfig) -> float:
    """Log density of the data-driven walk that appended the given segment."""
    n = params.n_frames
    states = new_track.states
    L = new_track.length
    log_q = 0.0
    for j in range(n_appended):
        if direction == "forward":
            k = L - n_appended + j
            prefix = states[:k]
            t = new_track.tb + k
            prior = forward_prior3(prefix, params)
            center = prefix[-1, 1:3]
        else:
            k = n_appended - 1 - j
            prefix = states[k + 1:]
            t = new_track.tb + k
            prior = backward_prior3(prefix, params)
            center = prefix[0, 1:3]
        mix = continuation_mixture(cache, t, params, cfg, prior, center)
        log_q += _log(params.survival_prob) + mix.logq(states[k, :3])
        if not np.isfinite(log_q):
            return -np.inf
    if direction == "forward" and new_track.end < n:
        prior = forward_prior3(states, params)
        mix = continuation_mixture(cache, new_track.end, params, cfg, prior,
                                   states[-1, 1:3])
        log_q += _log_stop(mix, params)
    elif direction == "backward" and new_track.tb > 0:
        prior = backward_prior3(states, params)
        mix = continuation_mixture(cache, new_track.tb - 1, params, cfg, prior,
                                   states[0, 1:3])
        log_q += _log_stop(mix, params)
    return float(log_q)


def _prior_walk_step(prefix3, direction, params):
    """Predictive (a, s1, s2) law one step beyond the prefix, either way."""
    return (forward_prior3(prefix3, params) if direction == "forward"
            else backward_prior3(prefix3, params))


def _prior_segment_density(new_track: Track, n_appended, direction,
                           params) -> float:
    """Log density of the prior branch of the extension walk."""
    n = params.n_frames
    states = new_track.states
    L = new_track.length
    p_s = params.survival_prob
    log_q = n_appended * _log(p_s)
    for j in range(n_appended):
        if direction == "forward":
            k = L - n_appended + j
            prefix = states[:k, :3]
        else:
            k = n_appended - 1 - j
            prefix = states[k + 1:, :3]
        log_q += _prior_walk_step(prefix, direction, params).logpdf(states[k, :3])
    at_boundary = (new_track.end >= n if direction == "forward"
                   else new_track.tb <= 0)
    if not at_boundary:
        log_q += _log(1.0 - p_s)
    return float(log_q)


def _sample_prior_segment(track: Track, direction, params, rng):
    """Prior-branch walk: survival coins and predictive Gaussian steps."""
    n = params.n_frames
    prefix = [np.asarray(s, dtype=float)[:3] for s in track.states]
    seg: list[np.ndarray] = []
    frames = (range(track.end, n) if direction == "forward"
              else range(track.tb - 1, -1, -1))
    for _ in frames:
        if rng.random() >= params.survival_prob:
            break
        law = _prior_walk_step(np.asarray(prefix), direction, params)
        x = law.mean + np.sqrt(law.var) * rng.standard_normal(3)
        seg.append(x)
        prefix = prefix + [x] if direction == "forward" else [x] + prefix
    if direction == "backward":
        seg.reverse()
    return np.asarray(seg).reshape(-1, 3)


def _segment_as_track(track, seg, direction):
    m = len(seg)
    seg5 = np.column_stack([seg, np.zeros((m, 2))])
    if direction == "forward":
        return Track(track.tb, np.vstack([track.states, seg5]))
    return Track(track.tb - m, np.vstack([seg5, track.states]))


def sample_extension_segment(track: Track, direction, cache, params, rng,
                             cfg: ProposalConfig | None = None):
    """Walk outward from one end of an existing track.

    Mixture proposal: with probability cfg.prior_weight the steps come from
    the predictive prior, otherwise from the data-driven walk.  Returns
    (segment, log_q) with ``segment`` an (m, 3) array of new (a, s1, s2)
    states in frame order (possibly m=0) and ``log_q`` the full mixture
    density of the segment.  Velocities are the caller's concern.
    """
    cfg = cfg or ProposalConfig()
    w = cfg.prior_weight
    if w > 0.0 and rng.random() < w:
        seg = _sample_prior_segment(track, direction, params, rng)
        if len(seg) == 0:
            return seg, -np.inf
    else:
        seg, log_q_data = _sample_data_segment(track, direction, cache,
                                               params, rng, cfg)
        if len(seg) == 0:
            return seg, float(log_q_data)
        if w <= 0.0:
            return seg, float(log_q_data)
    new_track = _segment_as_track(track, seg, direction)
    return seg, extension_density(new_track, len(seg), direction, cache,
                                  params, cfg)


def extension_density(new_track: Track, n_appended, direction, cache, params,
                      cfg: ProposalConfig | None = None) -> float:
    """Log mixture density of the walk that appended the given segment.

    ``new_track`` is the extended track; its first (backward) or last
    (forward) ``n_appended`` states form the segment.  The residual cache
    must describe the configuration without the segment's blobs.
    """
    cfg = cfg or ProposalConfig()
    w = cfg.prior_weight
    log_q_data = (_data_segment_density(new_track, n_appended, direction,
                                        cache, params, cfg)
                  if w < 1.0 else -np.inf)
    log_q_prior = (_prior_segment_density(new_track, n_appended, direction,
                                          params)
                   if w > 0.0 else -np.inf)
    return _mix_densities(log_q_prior, log_q_data, w)
