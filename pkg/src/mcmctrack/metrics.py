"""Evaluation helpers: OSPA set distance, a greedy baseline, chain reports.

The OSPA defaults (order 1, cutoff 10 pixels) are package conventions and can
be overridden through OspaParams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .filtering import candidate_peaks, match_filter, residual_frame
from .model import (ImageStack, ModelParams, Track, alive_positions,
                    canonical_order)
from .sampler import burn_in_slice

__all__ = ["OspaParams", "ospa_frame", "alive_positions", "greedy_nn_tracker",
           "PARAM_COLUMNS", "param_row", "ChainSummary", "summarize_chain"]


@dataclass(frozen=True)
class OspaParams:
    """Order p >= 1 and cutoff c > 0 of the assignment metric."""

    p: float = 1.0
    c: float = 10.0

    def __post_init__(self):
        if self.p < 1.0:
            raise ValueError("order p must be >= 1")
        if self.c <= 0.0:
            raise ValueError("cutoff c must be positive")


def _as_points(points):
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return arr.reshape(0, 2)
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("expected an (n, 2) array of planar positions")
    return arr


def ospa_frame(est, truth, q: OspaParams | None = None) -> float:
    """Cut-off optimal-assignment distance between two planar point sets.

    min(|est|, |truth|) pairs are matched optimally with distances clipped at
    c, each unmatched point costs c, and the p-th powers are averaged over the
    larger cardinality.  Empty vs empty is 0; empty vs non-empty is c.
    """
    if q is None:
        q = OspaParams()
    a = _as_points(est)
    b = _as_points(truth)
    n = max(len(a), len(b))
    if n == 0:
        return 0.0
    m = min(len(a), len(b))
    if m == 0:
        return float(q.c)
    d = np.hypot(a[:, 0, None] - b[None, :, 0], a[:, 1, None] - b[None, :, 1])
    cost = np.minimum(d, q.c) ** q.p
    rows, cols = linear_sum_assignment(cost)
    total = cost[rows, cols].sum() + q.c**q.p * (n - m)
    return float((total / n) ** (1.0 / q.p))


def _finite_diff_track(tb, positions, values, params, label):
    pos = np.asarray(positions, dtype=float)
    states = np.zeros((len(pos), 5))
    states[:, 0] = values
    states[:, 1:3] = pos
    if len(pos) > 1:
        vel = np.diff(pos, axis=0) / params.frame_dt
        states[:-1, 3:5] = vel
        states[-1, 3:5] = vel[-1]
    return Track(tb, states, label)


def greedy_nn_tracker(y: ImageStack, params: ModelParams, detect_threshold=None,
                      gate_radius=None) -> list[Track]:
    """Detection-then-linking baseline, deliberately naive.

    Each frame is matched-filtered and thresholded; local peaks become
    detections with the filtered value as intensity.  Detections are linked
    to the nearest active track within the gate (closest pairs first); the
    rest start new tracks, and a track that misses a frame is closed.
    Velocities are forward finite differences with the last one repeated.
    """
    if gate_radius is None:
        gate_radius = 3.0 * params.psf_width
    open_tracks: list[dict] = []
    closed: list[dict] = []
    for t in range(y.n_frames):
        res = residual_frame(y.frames[t], (), t, params)
        filt = match_filter(res, params)
        peaks = candidate_peaks(filt, t, params, threshold=detect_threshold)
        det_pos = peaks.astype(float) * params.pixel_pitch
        det_val = filt.values[peaks[:, 0], peaks[:, 1]] if len(peaks) else np.empty(0)

        taken_tr: set[int] = set()
        taken_det: set[int] = set()
        if open_tracks and len(det_pos):
            last = np.array([tr["pos"][-1] for tr in open_tracks])
            dist = np.hypot(last[:, 0, None] - det_pos[None, :, 0],
                            last[:, 1, None] - det_pos[None, :, 1])
            for flat in np.argsort(dist, axis=None):
                i, j = divmod(int(flat), len(det_pos))
                if dist[i, j] > gate_radius:
                    break
                if i in taken_tr or j in taken_det:
                    continue
                taken_tr.add(i)
                taken_det.add(j)
                open_tracks[i]["pos"].append(det_pos[j])
                open_tracks[i]["val"].append(det_val[j])
        still_open = []
        for i, tr in enumerate(open_tracks):
            (still_open if i in taken_tr else closed).append(tr)
        open_tracks = still_open
        for j in range(len(det_pos)):
            if j not in taken_det:
                open_tracks.append({"tb": t, "pos": [det_pos[j]], "val": [det_val[j]]})
    closed.extend(open_tracks)
    tracks = [_finite_diff_track(tr["tb"], tr["pos"], tr["val"], params, i + 1)
              for i, tr in enumerate(closed)]
    return canonical_order(tracks)


# -- chain reports ----------------------------------------------------------

_SCALAR_FIELDS = ("survival_prob", "birth_rate",
                  "birth_mean_intensity", "birth_mean_x", "birth_mean_y",
                  "birth_var_intensity", "birth_var_position", "birth_var_velocity",
                  "drive_var_intensity", "drive_var_x", "drive_var_y")


def param_row(params: ModelParams):
    row = [getattr(params, name) for name in _SCALAR_FIELDS]
    row.append(float(np.mean(params.background)))
    row.append(float(np.mean(params.noise_var)))
    return row


PARAM_COLUMNS = _SCALAR_FIELDS + ("background_mean", "noise_var_mean")


@dataclass
class ChainSummary:
    """Tabular view of a finished chain.

    param_draws holds one row per recorded iteration (columns PARAM_COLUMNS);
    means, stds and histograms are over the post-burn-in rows only.  Counts
    and OSPA use the in-view convention: only tracks positioned inside the
    imaged region contribute to a frame.  frame_count_hist[t, k] is the
    number of retained samples with k in-view tracks at frame t.  ospa is
    the per-frame mean OSPA of the retained samples against the supplied
    truth, or None when no truth was given.
    """

    iters: np.ndarray
    log_joint: np.ndarray
    n_tracks: np.ndarray
    param_names: tuple
    param_draws: np.ndarray
    first_kept: int
    param_mean: dict
    param_std: dict
    param_hist: dict
    frame_count_hist: np.ndarray
    frame_count_mode: np.ndarray
    ospa: np.ndarray | None


def summarize_chain(samples, truth=None, q: OspaParams | None = None,
                    burn_in: float = 0.25, bins: int = 40) -> ChainSummary:
    """Reduce a sample stream to traces, moments, histograms and OSPA.

    samples is a sequence of (tracks, params, log_joint, diagnostics) tuples
    as produced by the chain runner; truth, when given, is a track list.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty sample stream")
    log_joint = np.array([s[2] for s in samples])
    n_tracks = np.array([len(s[0]) for s in samples], dtype=int)
    draws = np.array([param_row(s[1]) for s in samples])
    first_kept = burn_in_slice(len(samples), burn_in)
    first_kept = min(first_kept, len(samples) - 1)     # keep at least one row
    kept = draws[first_kept:]

    mean = {}
    std = {}
    hist = {}
    for k, name in enumerate(PARAM_COLUMNS):
        col = kept[:, k]
        mean[name] = float(col.mean())
        std[name] = float(col.std())
        counts, edges = np.histogram(col, bins=bins)
        hist[name] = (counts, edges)

    n_frames = samples[0][1].n_frames
    count_hist = np.zeros((n_frames, int(n_tracks.max()) + 1), dtype=int)
    ospa = np.zeros(n_frames) if truth is not None else None
    for tracks, th, _, _ in samples[first_kept:]:
        for t in range(n_frames):
            est = alive_positions(tracks, t, th)
            count_hist[t, len(est)] += 1
            if ospa is not None:
                ospa[t] += ospa_frame(est, alive_positions(truth, t, th), q)
    if ospa is not None:
        ospa /= len(samples) - first_kept

    return ChainSummary(
        iters=np.arange(len(samples)),
        log_joint=log_joint,
        n_tracks=n_tracks,
        param_names=PARAM_COLUMNS,
        param_draws=draws,
        first_kept=first_kept,
        param_mean=mean,
        param_std=std,
        param_hist=hist,
        frame_count_hist=count_hist,
        frame_count_mode=count_hist.argmax(axis=1),
        ospa=ospa,
    )
