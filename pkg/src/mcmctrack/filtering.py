"""Residual images, matched filtering and candidate peak extraction.

The matched filter correlates a residual frame with the unit-intensity blob
kernel and divides by the kernel's energy, so a clean blob of intensity ``a``
centred on a pixel filters to exactly ``a`` at that pixel.  Peaks of the
filtered image above a detection threshold seed the data-driven birth and
extension proposals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate

from .model import ImageStack, ModelParams, center_pixel, psf_patch


@dataclass
class ResidualFrame:
    values: np.ndarray
    t: int


@dataclass
class FilteredFrame:
    values: np.ndarray
    energy: float
    t: int


def filter_energy(params: ModelParams) -> float:
    """Sum of squared kernel values (the matched filter's normaliser)."""
    energy = getattr(params, "_filter_energy", None)
    if energy is None:
        kern = params.psf_kernel()
        energy = float(np.sum(kern * kern))
        params._filter_energy = energy
    return energy


def residual_frame(frame, targets, t, params) -> ResidualFrame:
    """Frame minus background minus every listed target's blob."""
    out = np.asarray(frame, dtype=float) - params.background[t]
    for x in targets:
        patch = psf_patch(x, params)
        if patch is not None:
            r0, r1, c0, c1, vals = patch
            out[r0:r1 + 1, c0:c1 + 1] -= vals
    return ResidualFrame(out, t)


def match_filter(res, params) -> FilteredFrame:
    """Matched-filter a residual frame.

    Out-of-bounds kernel taps contribute zero, i.e. edge pixels correlate the
    in-bounds subset of their footprint against the full-energy normaliser.
    """
    values = res.values if isinstance(res, ResidualFrame) else np.asarray(res, dtype=float)
    t = res.t if isinstance(res, ResidualFrame) else -1
    energy = filter_energy(params)
    filt = correlate(values, params.psf_kernel(), mode="constant", cval=0.0) / energy
    return FilteredFrame(filt, energy, t)


def matched_filter_stack(y: ImageStack, params) -> list[FilteredFrame]:
    """Filter every frame of a raw stack (background removed, no targets)."""
    return [match_filter(residual_frame(y.frames[t], (), t, params), params)
            for t in range(y.n_frames)]


def gamma_threshold(t, params, rule="paper-min") -> float:
    """Detection threshold for frame t.

    The default combines the dimmest plausible newborn intensity with a
    3-sigma bound on filtered noise via a ``min``; ``rule`` may flip that to
    ``max`` or pin a fixed value with ``fixed:<value>``.
    """
    lo_intensity = params.birth_mean_intensity - 3.0 * math.sqrt(params.birth_var_intensity)
    noise_floor = 3.0 * math.sqrt(params.noise_var[t]) / math.sqrt(filter_energy(params))
    if rule == "paper-min":
        return min(lo_intensity, noise_floor)
    if rule == "max":
        return max(lo_intensity, noise_floor)
    if rule.startswith("fixed:"):
        return float(rule.split(":", 1)[1])
    raise ValueError(f"unknown gamma rule: {rule!r}")


_NEIGHBOR_SHIFTS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def candidate_peaks(filt, t, params, threshold=None, region=None, exclude=None):
    """Strict 8-neighbourhood local maxima at or above the threshold.

    Exact-equal plateaus keep only the lexicographically first pixel.  Pixels
    outside ``region`` (inclusive (r0, r1, c0, c1)) or listed in ``exclude``
    are dropped.  Returns an (P, 2) int array in (row, col) order.
    """
    values = filt.values if isinstance(filt, FilteredFrame) else np.asarray(filt, dtype=float)
    if threshold is None:
        threshold = gamma_threshold(t, params)
    rows, cols = values.shape
    padded = np.full((rows + 2, cols + 2), -np.inf)
    padded[1:-1, 1:-1] = values
    ok = values >= threshold
    for dr, dc in _NEIGHBOR_SHIFTS:
        nb = padded[1 + dr:rows + 1 + dr, 1 + dc:cols + 1 + dc]
        if (dr, dc) < (0, 0):
            ok &= values > nb          # must strictly beat lex-earlier pixels
        else:
            ok &= values >= nb
    if region is not None:
        r0, r1, c0, c1 = region
        mask = np.zeros_like(ok)
        mask[max(r0, 0):r1 + 1, max(c0, 0):c1 + 1] = True
        ok &= mask
    if exclude is not None:
        for r, c in np.atleast_2d(np.asarray(exclude, dtype=int)):
            if 0 <= r < rows and 0 <= c < cols:
                ok[r, c] = False
    return np.argwhere(ok)


def search_window(position, params, halfwidth=None):
    """Pixel rectangle around a previous position for extension peaks.

    Default half-width covers a 3-sigma birth-velocity displacement plus a
    3-sigma blob radius.
    """
    if halfwidth is None:
        halfwidth = math.ceil((3.0 * math.sqrt(params.birth_var_velocity) * params.frame_dt
                               + 3.0 * params.psf_width) / params.pixel_pitch)
    cr, cc = center_pixel(position[0], position[1], params)
    return (max(cr - halfwidth, 0), min(cr + halfwidth, params.rows - 1),
            max(cc - halfwidth, 0), min(cc + halfwidth, params.cols - 1))


def get_filtered(cache, t, params) -> FilteredFrame:
    """Matched-filtered view of a residual cache frame, memoised by content.

    The memo key is the residual's content hash, so reverted proposals reuse
    earlier work; a handful of variants per frame are kept.
    """
    digest = cache.fingerprint(t)
    with cache._lock:
        slot = cache.filter_memo.setdefault(t, {})
        hit = slot.get(digest)
        if hit is not None:
            return hit
    out = match_filter(ResidualFrame(cache.residual(t).copy(), t), params)
    with cache._lock:
        if len(slot) >= 4:
            slot.pop(next(iter(slot)))
        slot[digest] = out
    return out
