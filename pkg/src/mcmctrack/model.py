"""Observation and motion model for point targets on an image stack.

A target's state is the 5-vector x = (a, s1, s2, v1, v2): intensity, spatial
position (row/column coordinates) and velocity.  Pixel (r, c) sits at spatial
coordinate (pitch * r, pitch * c); frames are indexed 0..n_frames-1.  A target
contributes a truncated Gaussian point-spread blob

    h_i(x) = a * pitch^2 / (2 pi psf_width^2)
               * exp(-((pitch*r - s1)^2 + (pitch*c - s2)^2) / (2 psf_width^2))

on the footprint x footprint pixel square whose centre pixel is nearest to s,
and every pixel adds independent N(background_t, noise_var_t) noise.  Target
counts, births and deaths follow the Poisson-birth / geometric-survival prior;
states follow the linear-Gaussian birth and near-constant-velocity dynamics.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from . import gaussmath
from .gaussmath import LOG_2PI

# State vector layout.
A = 0
S1, S2 = 1, 2
V1, V2 = 3, 4


def default_footprint(psf_width, pixel_pitch):
    """Smallest odd truncation side covering ~4 psf widths."""
    side = 1 + math.ceil(4.0 * psf_width / pixel_pitch)
    return side if side % 2 == 1 else side + 1


@dataclass
class ModelParams:
    """Full model parameter set: geometry, dynamics, and noise.

    ``background`` and ``noise_var`` may be scalars (shared by all frames) or
    per-frame arrays of length ``n_frames``.
    """

    n_frames: int
    rows: int
    cols: int
    pixel_pitch: float = 1.0
    psf_width: float = 1.0
    frame_dt: float = 1.0
    footprint: int | None = None

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
        if self.n_frames < 1 or self.rows < 1 or self.cols < 1:
            raise ValueError("geometry must be positive")
        if self.pixel_pitch <= 0 or self.psf_width <= 0 or self.frame_dt <= 0:
            raise ValueError("pitch, psf width and frame interval must be positive")
        if self.footprint is None:
            self.footprint = default_footprint(self.psf_width, self.pixel_pitch)
        if self.footprint < 1 or self.footprint % 2 == 0:
            raise ValueError("footprint side must be an odd positive integer")
        for name in ("birth_var_intensity", "birth_var_position", "birth_var_velocity",
                     "drive_var_intensity", "drive_var_x", "drive_var_y"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.survival_prob <= 1.0:
            raise ValueError("survival_prob must lie in [0, 1]")
        if self.birth_rate < 0.0:
            raise ValueError("birth_rate must be nonnegative")
        self.background = np.broadcast_to(
            np.asarray(self.background, dtype=float), (self.n_frames,)).copy()
        self.noise_var = np.broadcast_to(
            np.asarray(self.noise_var, dtype=float), (self.n_frames,)).copy()
        if np.any(self.noise_var <= 0):
            raise ValueError("noise_var must be positive")

    # -- derived quantities -------------------------------------------------

    @property
    def n_pixels(self):
        return self.rows * self.cols

    @property
    def psf_peak(self):
        """Blob amplitude per unit intensity at the target position."""
        return self.pixel_pitch**2 / (2.0 * math.pi * self.psf_width**2)

    def psf_kernel(self):
        """(footprint, footprint) values of the unit-intensity blob centred
        exactly on a pixel; offsets run -w..w in both directions."""
        kern = getattr(self, "_kernel_cache", None)
        if kern is None:
            w = (self.footprint - 1) // 2
            d = np.arange(-w, w + 1) * self.pixel_pitch
            g = np.exp(-(d**2) / (2.0 * self.psf_width**2))
            kern = self.psf_peak * np.outer(g, g)
            self._kernel_cache = kern
        return kern

    def spatial_noise_chol(self):
        """Cholesky factors of the per-axis transition covariances."""
        chols = getattr(self, "_chol_cache", None)
        if chols is None:
            _, sig = gaussmath.motion_matrices(self.frame_dt)
            chols = (np.linalg.cholesky(self.drive_var_x * sig),
                     np.linalg.cholesky(self.drive_var_y * sig))
            self._chol_cache = chols
        return chols

    def with_updates(self, **kw):
        return replace(self, **kw)


@dataclass
class TargetState:
    """Convenience view of one 5-vector state."""

    a: float
    s: np.ndarray
    v: np.ndarray

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(a=float(x[A]), s=x[S1:S2 + 1].copy(), v=x[V1:V2 + 1].copy())

    def to_array(self):
        return np.array([self.a, self.s[0], self.s[1], self.v[0], self.v[1]])


def _as_state_array(x):
    if isinstance(x, TargetState):
        return x.to_array()
    x = np.asarray(x, dtype=float)
    if x.shape != (5,):
        raise ValueError("state must be a 5-vector (a, s1, s2, v1, v2)")
    return x


@dataclass
class Track:
    """One target: birth frame plus an (L, 5) array of consecutive states."""

    tb: int
    states: np.ndarray
    label: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 5 or self.states.shape[0] < 1:
            raise ValueError("states must have shape (L, 5) with L >= 1")
        if self.tb < 0:
            raise ValueError("birth frame must be >= 0")

    @property
    def length(self):
        return self.states.shape[0]

    @property
    def end(self):
        """One past the last alive frame."""
        return self.tb + self.length

    def alive_at(self, t):
        return self.tb <= t < self.end

    def state_at(self, t):
        return self.states[t - self.tb]

    def copy(self):
        return Track(self.tb, self.states.copy(), self.label)


def canonical_order(tracks):
    """Canonically sorted and relabelled copy of a track list.

    Order: birth frame, then initial intensity, position row, position column
    (the newborn ordering rule; later keys only break probability-zero ties).
    Labels are reassigned 1..K.
    """
    def key(tr):
        x0 = tr.states[0]
        return (tr.tb, x0[A], x0[S1], x0[S2])

    out = [Track(tr.tb, tr.states, 0) for tr in sorted(tracks, key=key)]
    for i, tr in enumerate(out):
        tr.label = i + 1
    return out


def alive_positions(tracks, t, params=None):
    """(k, 2) array of the positions of every track alive at frame t.

    With params given, positions outside the imaged region (the hull of the
    pixel centres) are dropped: a track that has wandered out of view is not
    counted as a target in that frame.
    """
    pos = [tr.state_at(t)[[S1, S2]] for tr in tracks if tr.alive_at(t)]
    arr = np.array(pos, dtype=float) if pos else np.empty((0, 2))
    if params is not None and len(arr):
        hi_r = (params.rows - 1) * params.pixel_pitch
        hi_c = (params.cols - 1) * params.pixel_pitch
        keep = ((arr[:, 0] >= 0.0) & (arr[:, 0] <= hi_r)
                & (arr[:, 1] >= 0.0) & (arr[:, 1] <= hi_c))
        arr = arr[keep]
    return arr


@dataclass
class ImageStack:
    """n_frames x rows x cols stack of pixel intensities."""

    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3:
            raise ValueError("frames must be a 3-d array (n, rows, cols)")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def rows(self):
        return self.frames.shape[1]

    @property
    def cols(self):
        return self.frames.shape[2]


# ---------------------------------------------------------------------------
# Point-spread function
# ---------------------------------------------------------------------------

def center_pixel(s1, s2, params):
    """Pixel whose coordinate is nearest to the position (rint ties-to-even)."""
    return (int(np.rint(s1 / params.pixel_pitch)),
            int(np.rint(s2 / params.pixel_pitch)))


def psf_value(x, pixel, params):
    """Blob value of state ``x`` at ``pixel`` = (r, c); 0 outside the footprint."""
    x = _as_state_array(x)
    r, c = pixel
    cr, cc = center_pixel(x[S1], x[S2], params)
    w = (params.footprint - 1) // 2
    if abs(r - cr) > w or abs(c - cc) > w:
        return 0.0
    dr = params.pixel_pitch * r - x[S1]
    dc = params.pixel_pitch * c - x[S2]
    return float(x[A] * params.psf_peak
                 * math.exp(-(dr * dr + dc * dc) / (2.0 * params.psf_width**2)))


def _build_patch(x, params):
    cr, cc = center_pixel(x[S1], x[S2], params)
    w = (params.footprint - 1) // 2
    r0, r1 = max(cr - w, 0), min(cr + w, params.rows - 1)
    c0, c1 = max(cc - w, 0), min(cc + w, params.cols - 1)
    if r0 > r1 or c0 > c1:
        return None, 0.0
    coords = getattr(params, "_px_coords", None)
    if coords is None:
        coords = np.arange(max(params.rows, params.cols)) * params.pixel_pitch
        coords.flags.writeable = False
        params._px_coords = coords
    half_inv = -0.5 / params.psf_width**2
    gr = np.exp(half_inv * (coords[r0:r1 + 1] - x[S1]) ** 2)
    gc = np.exp(half_inv * (coords[c0:c1 + 1] - x[S2]) ** 2)
    vals = (x[A] * params.psf_peak) * np.outer(gr, gc)
    vals.flags.writeable = False
    return (r0, r1, c0, c1, vals), float(np.einsum("ij,ij->", vals, vals))


def _patch_entry(x, params):
    """((r0, r1, c0, c1, values) or None, sum of values^2), content-memoised."""
    memo = getattr(params, "_patch_memo", None)
    if memo is None:
        memo = params._patch_memo = {}
    key = (x[A], x[S1], x[S2])
    hit = memo.get(key)
    if hit is None:
        hit = _build_patch(x, params)
        if len(memo) >= 8192:
            memo.pop(next(iter(memo)))
        memo[key] = hit
    return hit


def psf_patch(x, params):
    """In-bounds footprint of state ``x``: (r0, r1, c0, c1, values).

    Bounds are inclusive; ``values`` has shape (r1-r0+1, c1-c0+1) and is
    read-only (patches are shared through a cache).  Returns None when the
    footprint misses the image entirely.
    """
    return _patch_entry(_as_state_array(x), params)[0]


def render_frame(targets, t, params):
    """Noise-free frame t: background plus every target's blob."""
    img = np.full((params.rows, params.cols), params.background[t], dtype=float)
    for x in targets:
        patch = psf_patch(x, params)
        if patch is not None:
            r0, r1, c0, c1, vals = patch
            img[r0:r1 + 1, c0:c1 + 1] += vals
    return img


def snr(a, t, params):
    """Peak signal-to-noise ratio, in dB, of intensity ``a`` in frame t."""
    sd = math.sqrt(params.noise_var[t])
    if a <= 0 or sd <= 0:
        raise ValueError("snr requires positive intensity and noise level")
    return 20.0 * math.log10(a * params.psf_peak / sd)


# ---------------------------------------------------------------------------
# Prior sampling
# ---------------------------------------------------------------------------

def sample_initial_state(params, rng):
    return np.array([
        params.birth_mean_intensity + math.sqrt(params.birth_var_intensity) * rng.standard_normal(),
        params.birth_mean_x + math.sqrt(params.birth_var_position) * rng.standard_normal(),
        params.birth_mean_y + math.sqrt(params.birth_var_position) * rng.standard_normal(),
        math.sqrt(params.birth_var_velocity) * rng.standard_normal(),
        math.sqrt(params.birth_var_velocity) * rng.standard_normal(),
    ])


def sample_transition(x, params, rng):
    dt = params.frame_dt
    lx, ly = params.spatial_noise_chol()
    out = np.empty(5)
    out[A] = x[A] + math.sqrt(params.drive_var_intensity) * rng.standard_normal()
    ex = lx @ rng.standard_normal(2)
    ey = ly @ rng.standard_normal(2)
    out[S1] = x[S1] + dt * x[V1] + ex[0]
    out[V1] = x[V1] + ex[1]
    out[S2] = x[S2] + dt * x[V2] + ey[0]
    out[V2] = x[V2] + ey[1]
    return out


def sample_prior_tracks(params, rng):
    """Draw a full track configuration from the prior; canonically labelled."""
    tracks = []
    for t in range(params.n_frames):
        births = rng.poisson(params.birth_rate)
        for _ in range(births):
            states = [sample_initial_state(params, rng)]
            u = t
            while u + 1 < params.n_frames and rng.random() < params.survival_prob:
                states.append(sample_transition(states[-1], params, rng))
                u += 1
            tracks.append(Track(t, np.array(states)))
    return canonical_order(tracks)


def sample_images(tracks, params, rng):
    """Render every frame and add pixel noise."""
    frames = np.empty((params.n_frames, params.rows, params.cols))
    for t in range(params.n_frames):
        targets = [tr.state_at(t) for tr in tracks if tr.alive_at(t)]
        frames[t] = render_frame(targets, t, params)
        frames[t] += math.sqrt(params.noise_var[t]) * rng.standard_normal(frames[t].shape)
    return ImageStack(frames)


# ---------------------------------------------------------------------------
# Log-densities
# ---------------------------------------------------------------------------

def log_initial_state(x, params):
    x = np.asarray(x, dtype=float)
    return float(
        gaussmath.norm_logpdf(x[..., A], params.birth_mean_intensity, params.birth_var_intensity)
        + gaussmath.norm_logpdf(x[..., S1], params.birth_mean_x, params.birth_var_position)
        + gaussmath.norm_logpdf(x[..., S2], params.birth_mean_y, params.birth_var_position)
        + gaussmath.norm_logpdf(x[..., V1], 0.0, params.birth_var_velocity)
        + gaussmath.norm_logpdf(x[..., V2], 0.0, params.birth_var_velocity)
    )


def _axis_transition_logpdf(sp, vp, s, v, drive_var, dt):
    # Residual of [s, v] against F [sp, vp], whitened by (drive_var * SIG)^-1.
    e1 = s - sp - dt * vp
    e2 = v - vp
    det = drive_var**2 * dt**4 / 12.0
    # SIG^{-1} = (12/dt^4) [[dt, -dt^2/2], [-dt^2/2, dt^3/3]]
    quad = (12.0 / dt**4) * (dt * e1 * e1 - dt**2 * e1 * e2 + (dt**3 / 3.0) * e2 * e2)
    return -LOG_2PI - 0.5 * np.log(det) - 0.5 * quad / drive_var


def log_transition(x_prev, x_next, params):
    xp = np.asarray(x_prev, dtype=float)
    xn = np.asarray(x_next, dtype=float)
    dt = params.frame_dt
    out = gaussmath.norm_logpdf(xn[..., A], xp[..., A], params.drive_var_intensity)
    out = out + _axis_transition_logpdf(xp[..., S1], xp[..., V1], xn[..., S1], xn[..., V1],
                                        params.drive_var_x, dt)
    out = out + _axis_transition_logpdf(xp[..., S2], xp[..., V2], xn[..., S2], xn[..., V2],
                                        params.drive_var_y, dt)
    return out


def log_track_states(track, params):
    """Prior log-density of one track's state sequence.

    Memoised per (track, params) pair; states are treated as immutable once a
    track has been scored.
    """
    hit = getattr(track, "_states_logdens", None)
    if hit is not None and hit[0] is params:
        return hit[1]
    total = log_initial_state(track.states[0], params)
    if track.length > 1:
        total += float(np.sum(log_transition(track.states[:-1], track.states[1:], params)))
    track._states_logdens = (params, total)
    return total


def poisson_logpmf(k, rate):
    if rate == 0.0:
        return 0.0 if k == 0 else -np.inf
    return float(k * math.log(rate) - rate - gammaln(k + 1))


def log_prior_tracks(tracks, params):
    """log p(z) + log p(x | z) of a track configuration.

    The newborn-permutation factor k_b! is included; it cancels the Poisson
    pmf's 1/k_b! exactly, so each birth contributes log(birth_rate) and each
    frame -birth_rate.  The ordering indicator is 1 for every relabelling of
    the same track set, so track lists need not be canonical here.
    """
    n = params.n_frames
    p_s = params.survival_prob
    rate = params.birth_rate
    if tracks and rate == 0.0:
        return -np.inf
    log_rate = math.log(rate) if rate > 0.0 else 0.0
    log_ps = math.log(p_s) if p_s > 0.0 else -np.inf
    log_qs = math.log1p(-p_s) if p_s < 1.0 else -np.inf
    total = -n * rate
    for tr in tracks:
        if tr.end > n:
            raise ValueError("track extends past the final frame")
        total += log_rate + log_track_states(tr, params)
        if tr.length > 1:
            if p_s == 0.0:
                return -np.inf
            total += (tr.length - 1) * log_ps
        if tr.end < n:
            if p_s == 1.0:
                return -np.inf
            total += log_qs
    return total


def log_images(tracks, params, y):
    total = 0.0
    for t in range(params.n_frames):
        targets = [tr.state_at(t) for tr in tracks if tr.alive_at(t)]
        mean = render_frame(targets, t, params)
        var = params.noise_var[t]
        resid = y.frames[t] - mean
        total += float(-0.5 * resid.size * (LOG_2PI + math.log(var))
                       - np.sum(resid**2) / (2.0 * var))
    return total


def log_joint(obj, params, y):
    """log p(z, x, y) for a track list or an MttSequence.

    Sequence input that violates the newborn ordering rule scores -inf.
    """
    from . import representation

    if isinstance(obj, representation.MttSequence):
        if not obj.ordering_ok():
            return -np.inf
        tracks = representation.tracks_from_mtt(obj)
    else:
        tracks = list(obj)
    if (y.n_frames, y.rows, y.cols) != (params.n_frames, params.rows, params.cols):
        raise ValueError("image stack does not match the model geometry")
    return log_prior_tracks(tracks, params) + log_images(tracks, params, y)


# ---------------------------------------------------------------------------
# Incremental image likelihood
# ---------------------------------------------------------------------------

class ResidualLikelihood:
    """Per-frame residual images with O(footprint^2) likelihood updates.

    Maintains R_t = y_t - background_t - (sum of target blobs) and the sums of
    squares needed for the image log-likelihood, so that adding or removing
    one target state touches only its footprint.  Mutations return the
    log-likelihood change; callers undo a rejected proposal by applying the
    inverse mutation (float drift is bounded by the sampler's periodic
    recompute check).
    """

    def __init__(self, y: ImageStack, params: ModelParams, tracks=()):
        self.y = y
        self.params = params
        self.rebuild(tracks)

    # -- bookkeeping ---------------------------------------------------------

    def rebuild(self, tracks, params=None):
        if params is not None:
            self.params = params
        p = self.params
        if (self.y.n_frames, self.y.rows, self.y.cols) != (p.n_frames, p.rows, p.cols):
            raise ValueError("image stack does not match the model geometry")
        self.resid = self.y.frames - p.background[:, None, None]
        for tr in tracks:
            for k in range(tr.length):
                patch = psf_patch(tr.states[k], p)
                if patch is not None:
                    r0, r1, c0, c1, vals = patch
                    self.resid[tr.tb + k, r0:r1 + 1, c0:c1 + 1] -= vals
        self.ss = np.einsum("tij,tij->t", self.resid, self.resid)
        self._version = np.zeros(p.n_frames, dtype=np.int64)
        self._digest_version = np.full(p.n_frames, -1, dtype=np.int64)
        self._digests = [b""] * p.n_frames
        self.filter_memo = {}
        self.step_memo = {}
        self._lock = threading.Lock()

    @property
    def log_lik_total(self):
        p = self.params
        const = -0.5 * p.n_pixels * (LOG_2PI + np.log(p.noise_var))
        return float(np.sum(const - self.ss / (2.0 * p.noise_var)))

    def frame_log_lik(self, t):
        p = self.params
        return float(-0.5 * p.n_pixels * (LOG_2PI + math.log(p.noise_var[t]))
                     - self.ss[t] / (2.0 * p.noise_var[t]))

    def residual(self, t):
        """Current residual of frame t (do not mutate)."""
        return self.resid[t]

    def fingerprint(self, t):
        """Content hash of frame t's residual, for filter memoisation."""
        if self._digest_version[t] != self._version[t]:
            self._digests[t] = hashlib.blake2b(self.resid[t].tobytes(), digest_size=16).digest()
            self._digest_version[t] = self._version[t]
        return self._digests[t]

    # -- mutations ------------------------------------------------------------

    def _apply(self, t, state, sign):
        patch, v2 = _patch_entry(_as_state_array(state), self.params)
        if patch is None:
            return 0.0
        r0, r1, c0, c1, vals = patch
        block = self.resid[t, r0:r1 + 1, c0:c1 + 1]
        # d(ss) = sum((b - sign v)^2) - sum(b^2) with sign^2 = 1.
        d_ss = v2 - 2.0 * sign * float(np.einsum("ij,ij->", block, vals))
        block -= sign * vals
        self.ss[t] += d_ss
        self._version[t] += 1
        return -d_ss / (2.0 * self.params.noise_var[t])

    def add_state(self, t, state):
        """Insert one target state into frame t; returns delta log-lik."""
        return self._apply(t, state, +1.0)

    def remove_state(self, t, state):
        return self._apply(t, state, -1.0)

    def add_track(self, track):
        return sum(self.add_state(track.tb + k, track.states[k]) for k in range(track.length))

    def remove_track(self, track):
        return sum(self.remove_state(track.tb + k, track.states[k]) for k in range(track.length))

    def residual_without(self, track):
        """Copies of the lifetime's residual frames with ``track`` added back."""
        out = []
        for k in range(track.length):
            t = track.tb + k
            frame = self.resid[t].copy()
            patch = psf_patch(track.states[k], self.params)
            if patch is not None:
                r0, r1, c0, c1, vals = patch
                frame[r0:r1 + 1, c0:c1 + 1] += vals
            out.append(frame)
        return out
