"""Independent reference computations backing the test suite.

Nothing in this module imports the package under test.  Blob values, Gaussian
chain marginals, marginal likelihood ratios, conjugate posteriors and the
assignment metric are all recomputed from their definitions with plain
numpy/scipy, so agreement between package and oracle is evidence rather than
tautology.

The centrepiece is a brute-force posterior over *binned* track
configurations for tiny scenes (1-2 frames, <= 8x8 pixels).  Per-track
intensity chains are jointly Gaussian given positions, so they integrate out
in closed form even when blobs overlap; velocities marginalize out of the
linear dynamics; what remains is a low-dimensional integral over positions
per track, evaluated by importance sampling with a defensive mixture
proposal.  The Monte Carlo error of the result is tracked and reported so a
test can certify the oracle is sharp enough for its tolerance.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Model mirror
# ---------------------------------------------------------------------------

@dataclass
class OracleModel:
    """Plain-number mirror of the generative model's parameters."""

    n_frames: int
    rows: int
    cols: int
    pitch: float = 1.0
    psf_width: float = 1.0
    dt: float = 1.0
    footprint: int = 5
    birth_mean_intensity: float = 30.0
    birth_mean_x: float = 0.0
    birth_mean_y: float = 0.0
    birth_var_intensity: float = 4.0
    birth_var_position: float = 25.0
    birth_var_velocity: float = 3.0
    drive_var_intensity: float = 0.5
    drive_var_x: float = 0.3
    drive_var_y: float = 0.7
    survival_prob: float = 0.95
    birth_rate: float = 0.3
    background: float | np.ndarray = 0.0
    noise_var: float | np.ndarray = 1.0

    def __post_init__(self):
        self.background = np.broadcast_to(
            np.asarray(self.background, dtype=float), (self.n_frames,)).copy()
        self.noise_var = np.broadcast_to(
            np.asarray(self.noise_var, dtype=float), (self.n_frames,)).copy()


# ---------------------------------------------------------------------------
# Point-spread blobs
# ---------------------------------------------------------------------------

def unit_blob_images(model, pos):
    """Unit-intensity blobs at positions ``pos`` (N, 2), as flat images.

    Each blob lives on the footprint-sized pixel square whose centre pixel is
    nearest (round-half-even) to the position; values falling outside the
    image are dropped.  Returns an (N, rows*cols) array.
    """
    pos = np.asarray(pos, dtype=float).reshape(-1, 2)
    n = pos.shape[0]
    half = (model.footprint - 1) // 2
    cr = np.rint(pos[:, 0] / model.pitch).astype(int)
    cc = np.rint(pos[:, 1] / model.pitch).astype(int)
    off = np.arange(-half, half + 1)
    rows = cr[:, None] + off
    cols = cc[:, None] + off
    dr = rows * model.pitch - pos[:, :1]
    dc = cols * model.pitch - pos[:, 1:2]
    peak = model.pitch ** 2 / (2.0 * np.pi * model.psf_width ** 2)
    gr = np.exp(-dr ** 2 / (2.0 * model.psf_width ** 2))
    gc = np.exp(-dc ** 2 / (2.0 * model.psf_width ** 2))
    vals = peak * gr[:, :, None] * gc[:, None, :]
    ok = ((rows >= 0) & (rows < model.rows))[:, :, None] \
        & ((cols >= 0) & (cols < model.cols))[:, None, :]
    n_pix = model.rows * model.cols
    # out-of-image entries are routed to a scratch column and sliced away
    idx = np.where(ok,
                   np.clip(rows, 0, model.rows - 1)[:, :, None] * model.cols
                   + np.clip(cols, 0, model.cols - 1)[:, None, :],
                   n_pix)
    flat = np.zeros((n, n_pix + 1))
    flat[np.arange(n)[:, None, None], idx] = np.where(ok, vals, 0.0)
    return flat[:, :n_pix]


# ---------------------------------------------------------------------------
# Exact Gaussian marginals of the single-track prior
# ---------------------------------------------------------------------------

def track_position_law(model, length):
    """Joint normal of a track's positions with velocities marginalized.

    Returns (mean, cov) for the stacked vector (s1_0, s2_0, s1_1, s2_1, ...)
    of size 2*length, assembled from the per-axis linear-Gaussian recursion
    z_{k+1} = F z_k + w_k started from the birth law.
    """
    means, covs = [], []
    for drive, mu in ((model.drive_var_x, model.birth_mean_x),
                      (model.drive_var_y, model.birth_mean_y)):
        dt = model.dt
        F = np.array([[1.0, dt], [0.0, 1.0]])
        Q = drive * np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0],
                              [dt ** 2 / 2.0, dt]])
        blocks = [np.diag([model.birth_var_position, model.birth_var_velocity])]
        for _ in range(length - 1):
            blocks.append(F @ blocks[-1] @ F.T + Q)
        C = np.zeros((2 * length, 2 * length))
        for j in range(length):
            C[2 * j:2 * j + 2, 2 * j:2 * j + 2] = blocks[j]
            M = blocks[j]
            for k in range(j + 1, length):
                M = M @ F.T
                C[2 * j:2 * j + 2, 2 * k:2 * k + 2] = M
                C[2 * k:2 * k + 2, 2 * j:2 * j + 2] = M.T
        pos_idx = np.arange(0, 2 * length, 2)
        covs.append(C[np.ix_(pos_idx, pos_idx)])
        means.append(np.full(length, mu))
    mean = np.empty(2 * length)
    cov = np.zeros((2 * length, 2 * length))
    even = np.arange(0, 2 * length, 2)
    odd = even + 1
    mean[even], mean[odd] = means[0], means[1]
    cov[np.ix_(even, even)] = covs[0]
    cov[np.ix_(odd, odd)] = covs[1]
    return mean, cov


def intensity_chain_precision(model, length):
    """Precision matrix and mean vector of a track's intensity chain prior."""
    P = np.zeros((length, length))
    P[0, 0] = 1.0 / model.birth_var_intensity
    q = 1.0 / model.drive_var_intensity
    for k in range(1, length):
        P[k - 1, k - 1] += q
        P[k, k] += q
        P[k, k - 1] -= q
        P[k - 1, k] -= q
    return P, np.full(length, model.birth_mean_intensity)


# ---------------------------------------------------------------------------
# Marginal likelihood ratio of a positioned configuration
# ---------------------------------------------------------------------------

def config_log_ratio(model, frames, shapes, positions, return_intensity_mean=False):
    """log p(y | config) - log p(y | empty scene), intensities integrated out.

    ``shapes`` lists (birth_frame, length) per track and ``positions`` the
    matching (N, length, 2) sampled paths.  Stacking every track's intensity
    chain gives a joint normal prior with block-tridiagonal precision P0; the
    image likelihood is Gaussian in the intensities with natural parameters
    (b, M) built from blob inner products (cross terms couple tracks sharing
    a frame), so the ratio is exp(m' Pp m / 2 - mu0' P0 mu0 / 2) times the
    prior-to-posterior determinant ratio, with Pp = P0 + M and
    m = Pp^{-1} (P0 mu0 + b).
    """
    n_samp = positions[0].shape[0]
    cols = [(i, k, tb + k) for i, (tb, length) in enumerate(shapes)
            for k in range(length)]
    d_tot = len(cols)
    P0 = np.zeros((d_tot, d_tot))
    mu0 = np.empty(d_tot)
    at = 0
    for tb, length in shapes:
        P, mean = intensity_chain_precision(model, length)
        P0[at:at + length, at:at + length] = P
        mu0[at:at + length] = mean
        at += length
    flat_resid = (np.asarray(frames, dtype=float)
                  - model.background[:, None, None]).reshape(model.n_frames, -1)
    U = np.empty((n_samp, d_tot, flat_resid.shape[1]))
    b = np.empty((n_samp, d_tot))
    for d, (i, k, t) in enumerate(cols):
        U[:, d, :] = unit_blob_images(model, positions[i][:, k])
        b[:, d] = U[:, d, :] @ flat_resid[t] / model.noise_var[t]
    M = np.zeros((n_samp, d_tot, d_tot))
    for d in range(d_tot):
        for d2 in range(d, d_tot):
            if cols[d][2] != cols[d2][2]:
                continue
            g = np.einsum("np,np->n", U[:, d, :], U[:, d2, :]) / model.noise_var[cols[d][2]]
            M[:, d, d2] = g
            if d2 != d:
                M[:, d2, d] = g
    Pp = P0[None] + M
    rhs = (P0 @ mu0)[None] + b
    m = np.linalg.solve(Pp, rhs[..., None])[..., 0]
    _, logdet0 = np.linalg.slogdet(P0)
    _, logdetp = np.linalg.slogdet(Pp)
    quad0 = float(mu0 @ P0 @ mu0)
    out = 0.5 * (logdet0 - logdetp) + 0.5 * (np.einsum("nd,nd->n", m, rhs) - quad0)
    if return_intensity_mean:
        return out, m
    return out


def structure_log_prior(model, shapes):
    """Configuration-structure log prior, up to a constant shared by every
    configuration: the Poisson normaliser drops and the per-frame birth
    factorials cancel against the ordered representation."""
    lp = 0.0
    for tb, length in shapes:
        lp += math.log(model.birth_rate) \
            + (length - 1) * math.log(model.survival_prob)
        if tb + length < model.n_frames:
            lp += math.log1p(-model.survival_prob)
    return lp


# ---------------------------------------------------------------------------
# Importance-sampling proposal over one track's positions
# ---------------------------------------------------------------------------

@dataclass
class PathProposal:
    """Defensive mixture over a track's position path: the exact prior chain
    plus isotropic bumps around focus paths.  Focus points only reduce
    variance; their densities enter the weights, so their placement cannot
    bias the estimate."""

    mean: np.ndarray
    cov: np.ndarray
    focus: list
    focus_sd: float
    weights: np.ndarray
    _law: object = field(default=None, repr=False)

    def __post_init__(self):
        self._law = stats.multivariate_normal(self.mean, self.cov)


def make_proposal(model, tb, length, focus_paths, focus_sd=1.0, prior_weight=0.5):
    mean, cov = track_position_law(model, length)
    focus = [np.asarray(f, dtype=float)[tb:tb + length].reshape(length * 2)
             for f in focus_paths]
    w = np.empty(1 + len(focus))
    w[0] = prior_weight if focus else 1.0
    if focus:
        w[1:] = (1.0 - w[0]) / len(focus)
    return PathProposal(mean, cov, focus, float(focus_sd), w)


def sample_proposal(q, n, rng):
    comp = rng.choice(q.weights.size, size=n, p=q.weights)
    dim = q.mean.size
    out = np.empty((n, dim))
    pick = comp == 0
    if pick.any():
        out[pick] = rng.multivariate_normal(q.mean, q.cov, size=int(pick.sum()))
    for j, f in enumerate(q.focus, start=1):
        pick = comp == j
        if pick.any():
            out[pick] = f[None] + q.focus_sd * rng.standard_normal((int(pick.sum()), dim))
    return out.reshape(n, dim // 2, 2)


def proposal_logpdf(q, paths):
    flat = paths.reshape(paths.shape[0], -1)
    terms = np.empty((q.weights.size, flat.shape[0]))
    terms[0] = math.log(q.weights[0]) + q._law.logpdf(flat)
    dim = flat.shape[1]
    norm = -0.5 * dim * (LOG_2PI + 2.0 * math.log(q.focus_sd))
    for j, f in enumerate(q.focus, start=1):
        d = flat - f[None]
        terms[j] = (math.log(q.weights[j]) + norm
                    - 0.5 * np.einsum("nd,nd->n", d, d) / q.focus_sd ** 2)
    return logsumexp(terms, axis=0)


def chain_logpdf(q, paths):
    """Exact prior density of position paths (component 0 of the mixture)."""
    return q._law.logpdf(paths.reshape(paths.shape[0], -1))


# ---------------------------------------------------------------------------
# Binned brute-force posterior for tiny scenes
# ---------------------------------------------------------------------------

def quadrant_codes(model, paths, tb, length):
    """Integer bin code of each sampled path: birth frame, length, and the
    image-quadrant sequence of the positions."""
    mid_r = model.pitch * (model.rows - 1) / 2.0
    mid_c = model.pitch * (model.cols - 1) / 2.0
    quad = (2 * (paths[:, :, 0] >= mid_r) + (paths[:, :, 1] >= mid_c)).astype(np.int64)
    code = np.full(paths.shape[0], tb * 16 + length, dtype=np.int64)
    for k in range(length):
        code = code * 4 + quad[:, k]
    return code


def decode_track_bin(model, code):
    """Inverse of quadrant_codes for a single track's bin code."""
    # lengths are <= n_frames, so peel quadrants until the head matches
    for length in range(1, model.n_frames + 1):
        head = code >> (2 * length)
        tb = (head - length) // 16
        if head == tb * 16 + length and 0 <= tb and tb + length <= model.n_frames:
            quads = []
            rest = code
            for _ in range(length):
                quads.append(int(rest & 3))
                rest >>= 2
            return (int(tb), int(length), tuple(reversed(quads)))
    raise ValueError(f"undecodable bin code {code}")


def track_bin_key(model, tb, states_pos):
    """Bin key of one concrete track: (birth frame, length, quadrant tuple)."""
    mid_r = model.pitch * (model.rows - 1) / 2.0
    mid_c = model.pitch * (model.cols - 1) / 2.0
    quads = tuple(int(2 * (p[0] >= mid_r) + (p[1] >= mid_c)) for p in states_pos)
    return (int(tb), len(states_pos), quads)


def config_bin_key(model, track_keys, max_targets=2):
    """Bin key of a configuration: sorted track keys, or 'rest' beyond the
    comparison's target-count cap."""
    if len(track_keys) > max_targets:
        return "rest"
    return tuple(sorted(track_keys))


@dataclass
class BinnedPosterior:
    probs: dict
    se_tv: float
    rest_prob: float
    tail_prob: float        # estimated mass of the largest K handled, for
                            # certifying that the truncated tail is negligible


def toy_bin_posterior(model, frames, focus_paths, rng,
                      n_k1=200_000, n_k2=100_000, n_k3=10_000, n_k4=4_000,
                      chunk=20_000, focus_sd=1.0, prior_weight=0.5):
    """Brute-force posterior over binned track configurations.

    Configurations with one or two tracks are binned by each track's
    (birth frame, length, quadrant path); three- and four-track
    configurations are pooled into a single 'rest' bucket.  All masses come
    from importance sampling with the analytic intensity marginalization, so
    the only error is Monte Carlo and is reported as an SE bound on the
    total variation distance.
    """
    n = model.n_frames
    shapes = [(tb, length) for tb in range(n) for length in range(1, n - tb + 1)]
    proposals = {(tb, length): make_proposal(model, tb, length, focus_paths,
                                             focus_sd, prior_weight)
                 for tb, length in shapes}

    sums = {(): 1.0}        # empty scene: ratio 1 by construction
    sumsq = {(): 0.0}

    def accumulate(shape_combo, n_total, multiplier, pool_rest):
        """IS pass over one ordered-by-sortorder combination of shapes."""
        struct = structure_log_prior(model, list(shape_combo))
        done = 0
        while done < n_total:
            m = min(chunk, n_total - done)
            done += m
            logw = np.full(m, struct)
            paths = []
            codes = []
            for tb, length in shape_combo:
                q = proposals[(tb, length)]
                p = sample_proposal(q, m, rng)
                paths.append(p)
                logw += chain_logpdf(q, p) - proposal_logpdf(q, p)
                codes.append(quadrant_codes(model, p, tb, length))
            logw += config_log_ratio(model, frames, list(shape_combo), paths)
            w = np.exp(logw) * (multiplier / n_total)
            if pool_rest:
                key_arr = None
            elif len(shape_combo) == 1:
                key_arr = codes[0]
            else:
                lo = np.minimum(codes[0], codes[1])
                hi = np.maximum(codes[0], codes[1])
                key_arr = lo * 100_000 + hi
            if key_arr is None:
                sums["rest"] = sums.get("rest", 0.0) + float(w.sum())
                sumsq["rest"] = sumsq.get("rest", 0.0) + float((w * w).sum())
            else:
                uniq, inv = np.unique(key_arr, return_inverse=True)
                add = np.bincount(inv, weights=w)
                add2 = np.bincount(inv, weights=w * w)
                for u, a, a2 in zip(uniq, add, add2):
                    if len(shape_combo) == 1:
                        key = (decode_track_bin(model, int(u)),)
                    else:
                        k1 = decode_track_bin(model, int(u) // 100_000)
                        k2 = decode_track_bin(model, int(u) % 100_000)
                        key = tuple(sorted((k1, k2)))
                    sums[key] = sums.get(key, 0.0) + float(a)
                    sumsq[key] = sumsq.get(key, 0.0) + float(a2)

    for shape in shapes:
        accumulate((shape,), n_k1, 1.0, pool_rest=False)
    for i, j in itertools.combinations_with_replacement(range(len(shapes)), 2):
        mult = 0.5 if i == j else 1.0       # ordered double-count over 2!
        accumulate((shapes[i], shapes[j]), n_k2, mult, pool_rest=False)
    for combo in itertools.combinations_with_replacement(shapes, 3):
        counts = [combo.count(s) for s in set(combo)]
        mult = math.factorial(3) / np.prod([math.factorial(c) for c in counts]) / 6.0
        accumulate(combo, n_k3, float(mult), pool_rest=True)
    tail = 0.0
    for combo in itertools.combinations_with_replacement(shapes, 4):
        counts = [combo.count(s) for s in set(combo)]
        mult = math.factorial(4) / np.prod([math.factorial(c) for c in counts]) / 24.0
        before = sums.get("rest", 0.0)
        accumulate(combo, n_k4, float(mult), pool_rest=True)
        tail += sums.get("rest", 0.0) - before

    total = sum(sums.values())
    probs = {k: v / total for k, v in sums.items()}
    # expected L1 Monte Carlo error of the TV distance: each bin contributes
    # E|e_i| ~ sqrt(2/pi) sd_i, so half their sum tracks E[TV error]
    se_tv = 0.5 * math.sqrt(2.0 / math.pi) * sum(
        math.sqrt(v) for v in sumsq.values()) / total
    return BinnedPosterior(probs, se_tv, probs.get("rest", 0.0), tail / total)


def total_variation(p, q):
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


# ---------------------------------------------------------------------------
# Posterior moments of a single fixed-shape track (smoothing oracle)
# ---------------------------------------------------------------------------

def posterior_track_moments(model, frames, tb, length, focus_paths, rng,
                            n_samples=200_000, chunk=20_000, focus_sd=1.0):
    """Importance-sampled posterior mean/sd of a single track's positions and
    posterior mean of its intensities, conditional on (birth frame, length).

    Also returns the relative effective sample size as a quality check.
    """
    q = make_proposal(model, tb, length, focus_paths, focus_sd)
    w_sum = 0.0
    w2_sum = 0.0
    pos_sum = np.zeros((length, 2))
    pos2_sum = np.zeros((length, 2))
    a_sum = np.zeros(length)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        done += m
        p = sample_proposal(q, m, rng)
        logw = chain_logpdf(q, p) - proposal_logpdf(q, p)
        ratio, a_mean = config_log_ratio(model, frames, [(tb, length)], [p],
                                         return_intensity_mean=True)
        w = np.exp(logw + ratio)
        w_sum += float(w.sum())
        w2_sum += float((w * w).sum())
        pos_sum += np.einsum("n,nkd->kd", w, p)
        pos2_sum += np.einsum("n,nkd->kd", w, p * p)
        a_sum += np.einsum("n,nk->k", w, a_mean)
    mean = pos_sum / w_sum
    var = pos2_sum / w_sum - mean ** 2
    ess = w_sum ** 2 / w2_sum
    return mean, np.sqrt(np.maximum(var, 0.0)), a_sum / w_sum, ess / n_samples


# ---------------------------------------------------------------------------
# Conjugate posterior hyperparameters
# ---------------------------------------------------------------------------

def discrete_posterior(kx, ks, kb, rate_alpha0, rate_beta0):
    """Posterior laws of (survival prob, birth rate) from per-frame counts.

    kx[t] targets alive at t, ks[t] survivors into t, kb[t] births at t.
    Returns (beta_a, beta_b, gamma_shape, gamma_scale).
    """
    n = len(kx)
    surv = sum(ks[1:])
    deaths = sum(kx[t - 1] - ks[t] for t in range(1, n))
    births = sum(kb)
    return (1.0 + surv, 1.0 + deaths,
            rate_alpha0 + births, 1.0 / (1.0 / rate_beta0 + n))


def nig_posterior(obs, alpha0, beta0, mu0, n0):
    """Normal-inverse-gamma posterior hyperparameters for i.i.d. normal data
    with unknown mean and variance: returns (mu_n, n_n, alpha_n, beta_n)."""
    obs = np.asarray(obs, dtype=float).ravel()
    m = obs.size
    if m == 0:
        return mu0, n0, alpha0, beta0
    xbar = float(np.mean(obs))
    ss = float(np.sum((obs - xbar) ** 2))
    n_n = n0 + m
    mu_n = (n0 * mu0 + m * xbar) / n_n
    alpha_n = alpha0 + 0.5 * m
    beta_n = beta0 + 0.5 * (ss + n0 * m * (xbar - mu0) ** 2 / n_n)
    return mu_n, n_n, alpha_n, beta_n


def nig_mean_marginal(mu_n, n_n, alpha_n, beta_n):
    """Student-t marginal of the NIG mean: (df, loc, scale)."""
    return 2.0 * alpha_n, mu_n, math.sqrt(beta_n / (alpha_n * n_n))


def step_innovations(states, dt):
    """Whitened quadratic form of one track's position/velocity transitions.

    states is the (L, 5) array (a, s1, s2, v1, v2).  Returns (n_steps,
    intensity sum of squares, per-axis quadratic form under the unit-drive
    kinematic covariance).
    """
    st = np.asarray(states, dtype=float)
    if st.shape[0] < 2:
        return 0, 0.0, np.zeros(2)
    sig = np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0], [dt ** 2 / 2.0, dt]])
    sig_inv = np.linalg.inv(sig)
    ss_a = float(np.sum((st[1:, 0] - st[:-1, 0]) ** 2))
    quad = np.zeros(2)
    for axis, (si, vi) in enumerate(((1, 3), (2, 4))):
        e = np.stack([st[1:, si] - st[:-1, si] - dt * st[:-1, vi],
                      st[1:, vi] - st[:-1, vi]], axis=1)
        quad[axis] = float(np.einsum("ni,ij,nj->", e, sig_inv, e))
    return st.shape[0] - 1, ss_a, quad


# ---------------------------------------------------------------------------
# Assignment metric, brute force
# ---------------------------------------------------------------------------

def ospa_bruteforce(est, truth, p=1.0, c=10.0):
    """Optimal subpattern assignment distance by explicit enumeration of all
    assignments of the smaller set into the larger one."""
    a = [np.asarray(e, dtype=float) for e in est]
    b = [np.asarray(t, dtype=float) for t in truth]
    if len(a) > len(b):
        a, b = b, a
    m, n = len(a), len(b)
    if n == 0:
        return 0.0
    if m == 0:
        return float(c)
    best = np.inf
    for perm in itertools.permutations(range(n), m):
        cost = sum(min(float(np.linalg.norm(a[i] - b[j])), c) ** p
                   for i, j in zip(range(m), perm))
        best = min(best, cost)
    return float(((best + (n - m) * c ** p) / n) ** (1.0 / p))


# ---------------------------------------------------------------------------
# Two-sample diagnostics for joint-distribution (Geweke-style) tests
# ---------------------------------------------------------------------------

def effective_sample_size(x):
    """ESS from the initial positive sequence of autocorrelations."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    denom = float(np.dot(x, x))
    if denom == 0.0:
        return float(n)
    acf = np.correlate(x, x, mode="full")[n - 1:] / denom
    tau = 1.0
    for k in range(1, n):
        pair = acf[k] + (acf[k + 1] if k + 1 < n else 0.0)
        if pair <= 0.0:
            break
        tau += 2.0 * acf[k]
    return float(n / max(tau, 1.0))


def two_sample_zscore(a, b, ess_a=None, ess_b=None):
    """z statistic and two-sided p-value comparing the means of two samples,
    with autocorrelation-deflated effective sample sizes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = ess_a if ess_a is not None else effective_sample_size(a)
    nb = ess_b if ess_b is not None else effective_sample_size(b)
    se = math.sqrt(a.var(ddof=1) / na + b.var(ddof=1) / nb)
    if se == 0.0:
        return 0.0, 1.0
    z = (a.mean() - b.mean()) / se
    return float(z), float(2.0 * stats.norm.sf(abs(z)))
