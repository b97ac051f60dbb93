"""Parameter learning: conjugate Gibbs draws, a random-walk MH fallback,
and the ground-truth surrogate maximum-likelihood estimate.

Every conditional here is exact.  Inverse-gamma draws are taken as
beta / Gamma(alpha, 1); normal means follow their conditional given the
freshly drawn variance, so each update is a correct Gibbs step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gaussmath import motion_matrices
from .model import (A, S1, S2, V1, V2, log_images, log_prior_tracks,
                    psf_patch)

VARIANCE_COMPONENTS = ("drive_var_intensity", "drive_var_x", "drive_var_y",
                       "birth_var_intensity", "birth_var_position",
                       "birth_var_velocity")
MEAN_COMPONENTS = ("birth_mean_intensity", "birth_mean_x", "birth_mean_y")


@dataclass
class ComponentPrior:
    alpha0: float
    beta0: float
    mu0: float
    n0: float


@dataclass
class PriorConfig:
    """Hyperparameters of the inverse-gamma / gamma / conditional-normal priors.

    alpha0/beta0 apply to every variance component and, unless overridden,
    to the birth rate; mu0/n0 parameterize the conditional-normal mean priors.
    Per-component overrides go in ``overrides[name]`` as partial dicts.  The
    survival probability has a flat prior on (0, 1).
    """

    alpha0: float = 0.01
    beta0: float = 0.01
    mu0: float = 0.0
    n0: float = 0.01
    overrides: dict = field(default_factory=lambda: {"birth_rate": {"beta0": 100.0}})

    def __post_init__(self):
        if self.alpha0 <= 0 or self.beta0 <= 0 or self.n0 <= 0:
            raise ValueError("alpha0, beta0 and n0 must be positive")

    def for_component(self, name) -> ComponentPrior:
        base = {"alpha0": self.alpha0, "beta0": self.beta0,
                "mu0": self.mu0, "n0": self.n0}
        base.update(self.overrides.get(name, {}))
        return ComponentPrior(**base)


# ceiling for conjugate variance draws: far beyond flat over any plausible
# image scale, yet small enough that the squares, determinants and
# conditioning cancellations downstream stay finite and positive definite
VARIANCE_CAP = 1e12


def _draw_inverse_gamma(alpha, beta, rng):
    # a vague prior with no sufficient statistics (shape ~0.01) routinely
    # returns astronomical draws; clamping keeps the chain computable and in
    # practice only touches conditionals no data term constrains
    g = rng.gamma(alpha)
    if g <= beta / VARIANCE_CAP:
        return VARIANCE_CAP
    return beta / g


# ---------------------------------------------------------------------------
# Discrete parameters
# ---------------------------------------------------------------------------

def update_discrete_params(seq, prior: PriorConfig, rng):
    """Conjugate draw of (survival probability, birth rate) given counts."""
    n = seq.n_frames
    surv = sum(seq.k_s(t) for t in range(1, n))
    deaths = sum(seq.k_x(t - 1) - seq.k_s(t) for t in range(1, n))
    births = sum(seq.k_b(t) for t in range(n))
    p_s = rng.beta(1.0 + surv, 1.0 + deaths)
    cp = prior.for_component("birth_rate")
    lam = rng.gamma(cp.alpha0 + births, 1.0 / (1.0 / cp.beta0 + n))
    return p_s, lam


# ---------------------------------------------------------------------------
# Observation parameters
# ---------------------------------------------------------------------------

def _blob_residuals(tracks, y, params):
    """Per-frame images minus every track's blob (background untouched)."""
    out = np.array(y.frames, dtype=float)
    for tr in tracks:
        for k in range(tr.length):
            patch = psf_patch(tr.states[k], params)
            if patch is not None:
                r0, r1, c0, c1, vals = patch
                out[tr.tb + k, r0:r1 + 1, c0:c1 + 1] -= vals
    return out


def _nig_draw(obs, cp: ComponentPrior, rng):
    """Normal-inverse-gamma conjugate draw -> (mean, variance)."""
    m = obs.size
    if m == 0:
        var = _draw_inverse_gamma(cp.alpha0, cp.beta0, rng)
        mean = cp.mu0 + math.sqrt(var / cp.n0) * rng.standard_normal()
        return mean, var
    xbar = float(np.mean(obs))
    ss = float(np.sum((obs - xbar) ** 2))
    n_post = cp.n0 + m
    mu_post = (cp.n0 * cp.mu0 + m * xbar) / n_post
    alpha_post = cp.alpha0 + 0.5 * m
    beta_post = cp.beta0 + 0.5 * (ss + cp.n0 * m * (xbar - cp.mu0) ** 2 / n_post)
    var = _draw_inverse_gamma(alpha_post, beta_post, rng)
    mean = mu_post + math.sqrt(var / n_post) * rng.standard_normal()
    return mean, var


def update_observation_params(tracks, y, params, prior: PriorConfig, rng,
                              tied=False, fit_background=True):
    """Draw per-frame (background, noise variance) given blob residuals.

    tied=True pools every frame into a single (b, sigma^2) pair, broadcast
    back over frames; fit_background=False conditions on b=0 and draws only
    the variance (plain inverse-gamma update).
    """
    resid = _blob_residuals(tracks, y, params)
    n = params.n_frames
    cp = prior.for_component("noise_var")
    groups = [resid.ravel()] if tied else [resid[t].ravel() for t in range(n)]
    b = np.empty(len(groups))
    var = np.empty(len(groups))
    for g, obs in enumerate(groups):
        if fit_background:
            b[g], var[g] = _nig_draw(obs, cp, rng)
        else:
            b[g] = 0.0
            alpha_post = cp.alpha0 + 0.5 * obs.size
            beta_post = cp.beta0 + 0.5 * float(np.sum(obs ** 2))
            var[g] = _draw_inverse_gamma(alpha_post, beta_post, rng)
    if tied:
        return np.full(n, b[0]), np.full(n, var[0])
    return b, var


# ---------------------------------------------------------------------------
# Dynamics parameters
# ---------------------------------------------------------------------------

def _dynamics_stats(tracks, dt):
    """Sufficient statistics of the initial-state and transition densities."""
    a0 = np.array([tr.states[0, A] for tr in tracks])
    s0 = np.array([[tr.states[0, S1], tr.states[0, S2]] for tr in tracks]).reshape(-1, 2)
    v0 = np.array([[tr.states[0, V1], tr.states[0, V2]] for tr in tracks]).reshape(-1, 2)
    _, sig = motion_matrices(dt)
    sig_inv = np.linalg.inv(sig)
    n_steps = 0
    ss_a = 0.0
    quad = np.zeros(2)     # per spatial axis
    for tr in tracks:
        if tr.length < 2:
            continue
        st = tr.states
        n_steps += tr.length - 1
        ss_a += float(np.sum((st[1:, A] - st[:-1, A]) ** 2))
        for axis, (si, vi) in enumerate(((S1, V1), (S2, V2))):
            e1 = st[1:, si] - st[:-1, si] - dt * st[:-1, vi]
            e2 = st[1:, vi] - st[:-1, vi]
            quad[axis] += float(sig_inv[0, 0] * np.sum(e1 * e1)
                                + 2.0 * sig_inv[0, 1] * np.sum(e1 * e2)
                                + sig_inv[1, 1] * np.sum(e2 * e2))
    return a0, s0, v0, n_steps, ss_a, quad


def update_dynamics_params(tracks, params, prior: PriorConfig, rng):
    """Conjugate draw of the dynamics block; returns a component dict.

    With zero tracks every conditional collapses to its prior, so the update
    stays valid for an empty configuration.
    """
    a0, s0, v0, n_steps, ss_a, quad = _dynamics_stats(tracks, params.frame_dt)
    out = {}

    cp = prior.for_component("drive_var_intensity")
    out["drive_var_intensity"] = _draw_inverse_gamma(
        cp.alpha0 + 0.5 * n_steps, cp.beta0 + 0.5 * ss_a, rng)
    for axis, name in enumerate(("drive_var_x", "drive_var_y")):
        cp = prior.for_component(name)
        # each 2-d innovation contributes a full unit to the shape
        out[name] = _draw_inverse_gamma(
            cp.alpha0 + n_steps, cp.beta0 + 0.5 * quad[axis], rng)

    cp = prior.for_component("birth_var_intensity")
    mean, var = _nig_draw(a0, cp, rng)
    out["birth_mean_intensity"] = mean
    out["birth_var_intensity"] = var

    # one position variance shared by both axes, two axis means
    cp = prior.for_component("birth_var_position")
    m = s0.shape[0]
    if m == 0:
        var = _draw_inverse_gamma(cp.alpha0, cp.beta0, rng)
        mx = cp.mu0 + math.sqrt(var / cp.n0) * rng.standard_normal()
        my = cp.mu0 + math.sqrt(var / cp.n0) * rng.standard_normal()
    else:
        n_post = cp.n0 + m
        beta_post = cp.beta0
        mu_posts = []
        for axis in range(2):
            xbar = float(np.mean(s0[:, axis]))
            ss = float(np.sum((s0[:, axis] - xbar) ** 2))
            beta_post += 0.5 * (ss + cp.n0 * m * (xbar - cp.mu0) ** 2 / n_post)
            mu_posts.append((cp.n0 * cp.mu0 + m * xbar) / n_post)
        var = _draw_inverse_gamma(cp.alpha0 + m, beta_post, rng)
        mx = mu_posts[0] + math.sqrt(var / n_post) * rng.standard_normal()
        my = mu_posts[1] + math.sqrt(var / n_post) * rng.standard_normal()
    out["birth_var_position"] = var
    out["birth_mean_x"] = mx
    out["birth_mean_y"] = my

    cp = prior.for_component("birth_var_velocity")
    out["birth_var_velocity"] = _draw_inverse_gamma(
        cp.alpha0 + v0.size / 2.0, cp.beta0 + 0.5 * float(np.sum(v0 ** 2)), rng)
    return out


# ---------------------------------------------------------------------------
# Surrogate maximum likelihood from ground truth
# ---------------------------------------------------------------------------

@dataclass
class SurrogateMle:
    values: dict
    undefined: set


def surrogate_mle(true_seq, true_tracks, y, params) -> SurrogateMle:
    """Closed-form ML estimates of every component from the simulation truth.

    Components whose sufficient statistics are empty come back as NaN and are
    listed in ``undefined``.
    """
    values = {}
    undefined = set()
    n = true_seq.n_frames

    surv = sum(true_seq.k_s(t) for t in range(1, n))
    at_risk = sum(true_seq.k_x(t - 1) for t in range(1, n))
    if at_risk > 0:
        values["survival_prob"] = surv / at_risk
    else:
        values["survival_prob"] = math.nan
        undefined.add("survival_prob")
    values["birth_rate"] = sum(true_seq.k_b(t) for t in range(n)) / n

    a0, s0, v0, n_steps, ss_a, quad = _dynamics_stats(true_tracks, params.frame_dt)
    if n_steps > 0:
        values["drive_var_intensity"] = ss_a / n_steps
        values["drive_var_x"] = quad[0] / (2.0 * n_steps)
        values["drive_var_y"] = quad[1] / (2.0 * n_steps)
    else:
        for name in ("drive_var_intensity", "drive_var_x", "drive_var_y"):
            values[name] = math.nan
            undefined.add(name)
    m = a0.size
    if m > 0:
        values["birth_mean_intensity"] = float(np.mean(a0))
        values["birth_var_intensity"] = float(np.var(a0))
        values["birth_mean_x"] = float(np.mean(s0[:, 0]))
        values["birth_mean_y"] = float(np.mean(s0[:, 1]))
        values["birth_var_position"] = float(
            (np.var(s0[:, 0]) + np.var(s0[:, 1])) / 2.0)
        values["birth_var_velocity"] = float(np.sum(v0 ** 2) / v0.size)
    else:
        for name in ("birth_mean_intensity", "birth_var_intensity",
                     "birth_mean_x", "birth_mean_y", "birth_var_position",
                     "birth_var_velocity"):
            values[name] = math.nan
            undefined.add(name)

    resid = _blob_residuals(true_tracks, y, params)
    values["background"] = resid.mean(axis=(1, 2))
    values["noise_var"] = resid.var(axis=(1, 2))
    values["noise_var_tied"] = float(resid.var())
    return SurrogateMle(values, undefined)


# ---------------------------------------------------------------------------
# Random-walk MH fallback
# ---------------------------------------------------------------------------

def _hyper_logpdf(name, value, prior: PriorConfig):
    cp = prior.for_component(name)
    if name == "survival_prob":
        return 0.0 if 0.0 < value < 1.0 else -np.inf
    if name == "birth_rate":
        if value <= 0:
            return -np.inf
        return (cp.alpha0 - 1.0) * math.log(value) - value / cp.beta0
    if name in MEAN_COMPONENTS:
        return 0.0
    if value <= 0:
        return -np.inf
    return -(cp.alpha0 + 1.0) * math.log(value) - cp.beta0 / value


def mh_update(params, tracks, y, scales, rng, prior: PriorConfig | None = None):
    """Random-walk MH scan over the named components of the parameter set.

    scales maps component name to a walk scale on the working scale: log for
    positive components, logit for the survival probability, identity for
    means.  Zero scale leaves the component untouched.  Returns the updated
    ModelParams.
    """
    prior = prior or PriorConfig()
    cur = params
    for name in sorted(scales):
        scale = scales[name]
        value = getattr(cur, name)
        if name == "noise_var" or name == "background":
            raise ValueError("per-frame observation components use the Gibbs update")
        if scale == 0.0:
            continue
        if name == "survival_prob":
            z = math.log(value / (1.0 - value)) + scale * rng.standard_normal()
            new_value = 1.0 / (1.0 + math.exp(-z))
            log_jac = (math.log(new_value * (1.0 - new_value))
                       - math.log(value * (1.0 - value)))
        elif name in MEAN_COMPONENTS:
            new_value = value + scale * rng.standard_normal()
            log_jac = 0.0
        else:
            new_value = value * math.exp(scale * rng.standard_normal())
            log_jac = math.log(new_value) - math.log(value)
        cand = cur.with_updates(**{name: new_value})
        cur_target = (_hyper_logpdf(name, value, prior)
                      + log_prior_tracks(tracks, cur) + log_images(tracks, cur, y))
        cand_target = (_hyper_logpdf(name, new_value, prior)
                       + log_prior_tracks(tracks, cand) + log_images(tracks, cand, y))
        log_ratio = cand_target - cur_target + log_jac
        if log_ratio >= 0 or (np.isfinite(log_ratio) and rng.random() < math.exp(log_ratio)):
            cur = cand
    return cur
