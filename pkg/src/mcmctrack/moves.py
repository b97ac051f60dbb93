"""Trans- and intra-dimensional MCMC moves over track configurations.

Every move mutates the chain state's residual cache while constructing its
proposal, computes an exact log acceptance ratio (proposal densities evaluated
by the same code that sampled them), and reverts the cache if rejected.  The
track prior is cheap relative to the image term, so each proposal recomputes
it in full; the image term changes incrementally through the cache.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .birth import (ProposalConfig, birth_density, extension_density,
                    sample_birth_track, sample_extension_segment)
from .gaussmath import LOG_2PI, Mvn, VelocityConditional, motion_matrices, norm_logpdf
from .model import (Track, canonical_order, log_prior_tracks, log_transition,
                    psf_patch, sample_transition)


@dataclass
class MoveOutcome:
    family: str             # bd | ms | os | ss
    kind: str
    log_ratio: float
    accepted: bool
    info: dict = field(default_factory=dict)


def _accept(rng, log_ratio):
    if log_ratio >= 0.0:
        return True
    if not np.isfinite(log_ratio):
        return False
    return rng.random() < math.exp(log_ratio)


def _noop(family, kind, **info):
    info["noop"] = True
    return MoveOutcome(family, kind, -np.inf, False, info)


# ---------------------------------------------------------------------------
# Birth / death
# ---------------------------------------------------------------------------

def birth_death_move(state, y, params, rng, cfg: ProposalConfig | None = None) -> MoveOutcome:
    """Create a new track from the data-driven sampler, or delete one."""
    cfg = cfg or ProposalConfig()
    state.proposed["bd"] += 1
    out = (_birth(state, y, params, rng, cfg) if rng.random() < 0.5
           else _death(state, y, params, rng, cfg))
    if out.accepted:
        state.accepted["bd"] += 1
    return out


def _birth(state, y, params, rng, cfg):
    rec = sample_birth_track(state.tracks, y, params, rng, cfg=cfg, cache=state.cache)
    if rec.track is None:
        return MoveOutcome("bd", "birth", -np.inf, False, {"stop": rec.stop_reason})
    K = len(state.tracks)
    dll = state.cache.add_track(rec.track)
    new_tracks = canonical_order(state.tracks + [rec.track])
    new_prior = log_prior_tracks(new_tracks, params)
    log_ratio = ((new_prior - state.log_prior) + dll
                 - math.log(K + 1) - rec.log_density)
    info = {"t_b": rec.t_b, "length": rec.track.length}
    if _accept(rng, log_ratio):
        state.replace_tracks(new_tracks, new_prior)
        return MoveOutcome("bd", "birth", log_ratio, True, info)
    state.cache.remove_track(rec.track)
    return MoveOutcome("bd", "birth", log_ratio, False, info)


def _death(state, y, params, rng, cfg):
    K = len(state.tracks)
    if K == 0:
        return _noop("bd", "death")
    k = int(rng.integers(K))
    tr = state.tracks[k]
    dll = state.cache.remove_track(tr)
    others = [x for j, x in enumerate(state.tracks) if j != k]
    log_qb = birth_density(tr, others, y, params, cfg=cfg, cache=state.cache)
    new_prior = log_prior_tracks(others, params)
    log_ratio = (new_prior - state.log_prior) + dll + log_qb + math.log(K)
    info = {"t_b": tr.tb, "length": tr.length}
    if _accept(rng, log_ratio):
        state.replace_tracks(canonical_order(others), new_prior)
        return MoveOutcome("bd", "death", log_ratio, True, info)
    state.cache.add_track(tr)
    return MoveOutcome("bd", "death", log_ratio, False, info)


# ---------------------------------------------------------------------------
# Multi-step extension / reduction
# ---------------------------------------------------------------------------

def multistep_extension_reduction_move(state, y, params, rng,
                                       cfg: ProposalConfig | None = None) -> MoveOutcome:
    """Grow one track by a data-driven walk, or cut it at a random point."""
    cfg = cfg or ProposalConfig()
    state.proposed["ms"] += 1
    out = (_ms_extend(state, y, params, rng, cfg) if rng.random() < 0.5
           else _ms_reduce(state, y, params, rng, cfg))
    if out.accepted:
        state.accepted["ms"] += 1
    return out


def _directions(tr, n):
    return ((["forward"] if tr.end < n else [])
            + (["backward"] if tr.tb > 0 else []))


def _ms_extend(state, y, params, rng, cfg):
    n = params.n_frames
    elig = [k for k, tr in enumerate(state.tracks) if tr.length < n]
    if not elig:
        return _noop("ms", "extend")
    k = elig[int(rng.integers(len(elig)))]
    tr = state.tracks[k]
    dirs = _directions(tr, n)
    d = dirs[int(rng.integers(len(dirs)))]
    seg, log_steps = sample_extension_segment(tr, d, state.cache, params, rng, cfg)
    m = len(seg)
    if m == 0:
        return _noop("ms", "extend", direction=d)
    L_old = tr.length
    if d == "forward":
        pos_all = np.vstack([tr.states[:, 1:3], seg[:, 1:3]])
        pins = [(i, tr.states[i, 3], tr.states[i, 4]) for i in range(L_old)]
        targets = list(range(L_old, L_old + m))
        frames = range(tr.end, tr.end + m)
    else:
        pos_all = np.vstack([seg[:, 1:3], tr.states[:, 1:3]])
        pins = [(m + i, tr.states[i, 3], tr.states[i, 4]) for i in range(L_old)]
        targets = list(range(m))
        frames = range(tr.tb - m, tr.tb)
    vc = VelocityConditional(pos_all, params, extra_obs=pins, targets=targets)
    vel = vc.sample(rng)
    log_qv = vc.logpdf(vel)
    seg_full = np.column_stack([seg, vel])
    new_tr = (Track(tr.tb, np.vstack([tr.states, seg_full]), tr.label)
              if d == "forward"
              else Track(tr.tb - m, np.vstack([seg_full, tr.states]), tr.label))

    dll = sum(state.cache.add_state(t, seg_full[i]) for i, t in enumerate(frames))
    new_list = [new_tr if j == k else x for j, x in enumerate(state.tracks)]
    new_prior = log_prior_tracks(new_list, params)
    n_red = sum(1 for x in new_list if x.length > 1)
    log_q_r = -math.log(2.0) - math.log(n_red) - math.log(2.0) - math.log(new_tr.length - 1)
    log_q_e = (-math.log(2.0) - math.log(len(elig)) - math.log(len(dirs))
               + log_steps + log_qv)
    log_ratio = (new_prior - state.log_prior) + dll + log_q_r - log_q_e
    info = {"direction": d, "added": m, "label": tr.label}
    if _accept(rng, log_ratio):
        state.replace_tracks(canonical_order(new_list), new_prior)
        return MoveOutcome("ms", "extend", log_ratio, True, info)
    for i, t in enumerate(frames):
        state.cache.remove_state(t, seg_full[i])
    return MoveOutcome("ms", "extend", log_ratio, False, info)


def _ms_reduce(state, y, params, rng, cfg):
    n = params.n_frames
    elig = [k for k, tr in enumerate(state.tracks) if tr.length > 1]
    if not elig:
        return _noop("ms", "reduce")
    k = elig[int(rng.integers(len(elig)))]
    tr = state.tracks[k]
    d = ("forward", "backward")[int(rng.integers(2))]
    L = tr.length
    c = 1 + int(rng.integers(L - 1))
    if d == "forward":
        # keep the head states[:c], drop the tail
        kept = Track(tr.tb, tr.states[:c].copy(), tr.label)
        seg_full = tr.states[c:]
        frames = range(tr.tb + c, tr.end)
        m = L - c
        pins = [(i, tr.states[i, 3], tr.states[i, 4]) for i in range(c)]
        targets = list(range(c, L))
    else:
        # keep the tail states[c:], drop the head
        kept = Track(tr.tb + c, tr.states[c:].copy(), tr.label)
        seg_full = tr.states[:c]
        frames = range(tr.tb, tr.tb + c)
        m = c
        pins = [(i, tr.states[i, 3], tr.states[i, 4]) for i in range(c, L)]
        targets = list(range(c))

    dll = sum(state.cache.remove_state(t, seg_full[i]) for i, t in enumerate(frames))
    new_list = [kept if j == k else x for j, x in enumerate(state.tracks)]
    new_prior = log_prior_tracks(new_list, params)
    log_steps = extension_density(tr, m, d, state.cache, params, cfg)
    vc = VelocityConditional(tr.states[:, 1:3], params, extra_obs=pins, targets=targets)
    log_qv = vc.logpdf(tr.states[targets, 3:5])
    n_ext = sum(1 for x in new_list if x.length < n)
    log_q_e = (-math.log(2.0) - math.log(n_ext) - math.log(len(_directions(kept, n)))
               + log_steps + log_qv)
    log_q_r = -math.log(2.0) - math.log(len(elig)) - math.log(2.0) - math.log(L - 1)
    log_ratio = (new_prior - state.log_prior) + dll + log_q_e - log_q_r
    info = {"direction": d, "removed": m, "label": tr.label}
    if _accept(rng, log_ratio):
        state.replace_tracks(canonical_order(new_list), new_prior)
        return MoveOutcome("ms", "reduce", log_ratio, True, info)
    for i, t in enumerate(frames):
        state.cache.add_state(t, seg_full[i])
    return MoveOutcome("ms", "reduce", log_ratio, False, info)


# ---------------------------------------------------------------------------
# One-step extension / reduction
# ---------------------------------------------------------------------------

def _os_backward_plan(params):
    """Per-axis constants of the backward one-step law; cached on params.

    The conditional mean is affine in the observed (position, velocity), so
    each axis needs only (offset, gain, cov, chol, chol_inv, logdet).
    """
    plan = getattr(params, "_os_back_plan", None)
    if plan is None:
        F, SIG = motion_matrices(params.frame_dt)
        p0_inv = np.diag([1.0 / params.birth_var_position,
                          1.0 / params.birth_var_velocity])
        plan = []
        for drive, mu in ((params.drive_var_x, params.birth_mean_x),
                          (params.drive_var_y, params.birth_mean_y)):
            q_inv = np.linalg.inv(drive * SIG)
            prec = p0_inv + F.T @ q_inv @ F
            cov = np.linalg.inv(prec)
            cov = 0.5 * (cov + cov.T)
            offset = cov @ (p0_inv @ np.array([mu, 0.0]))
            gain = cov @ (F.T @ q_inv)
            chol = np.linalg.cholesky(cov)
            chol_inv = np.linalg.inv(chol)
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
            plan.append((offset, gain, cov, chol, chol_inv, logdet))
        plan = tuple(plan)
        params._os_back_plan = plan
    return plan


class OneStepBackwardLaw:
    """Conditional law of a pre-initial state given the track's first state.

    Proportional to birth-prior(x) times transition-density(x_first | x);
    Gaussian per block (intensity scalar, each spatial axis a 2-vector).
    """

    def __init__(self, x_first, params):
        x_first = np.asarray(x_first, dtype=float)
        prec_a = 1.0 / params.birth_var_intensity + 1.0 / params.drive_var_intensity
        mean_a = (params.birth_mean_intensity / params.birth_var_intensity
                  + x_first[0] / params.drive_var_intensity) / prec_a
        self._a = (mean_a, 1.0 / prec_a)
        self._axes = []
        for axis, (offset, gain, cov, chol, chol_inv, logdet) in enumerate(
                _os_backward_plan(params)):
            obs = np.array([x_first[1 + axis], x_first[3 + axis]])
            self._axes.append(Mvn.from_factor(offset + gain @ obs, cov,
                                              chol, chol_inv, logdet))

    def sample(self, rng):
        a = self._a[0] + math.sqrt(self._a[1]) * rng.standard_normal()
        u = self._axes[0].sample(rng)
        v = self._axes[1].sample(rng)
        return np.array([a, u[0], v[0], u[1], v[1]])

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return (float(norm_logpdf(x[0], self._a[0], self._a[1]))
                + self._axes[0].logpdf([x[1], x[3]])
                + self._axes[1].logpdf([x[2], x[4]]))


def onestep_backward_normalizer(x_first, params):
    """log of the integral of birth-prior(x) x transition(x_first | x) dx."""
    x_first = np.asarray(x_first, dtype=float)
    out = float(norm_logpdf(x_first[0], params.birth_mean_intensity,
                            params.birth_var_intensity + params.drive_var_intensity))
    laws = getattr(params, "_os_norm_laws", None)
    if laws is None:
        F, SIG = motion_matrices(params.frame_dt)
        p0 = np.diag([params.birth_var_position, params.birth_var_velocity])
        laws = tuple(Mvn(F @ np.array([mu, 0.0]), F @ p0 @ F.T + drive * SIG)
                     for drive, mu in ((params.drive_var_x, params.birth_mean_x),
                                       (params.drive_var_y, params.birth_mean_y)))
        params._os_norm_laws = laws
    return (out + laws[0].logpdf([x_first[1], x_first[3]])
            + laws[1].logpdf([x_first[2], x_first[4]]))


def onestep_extension_reduction_move(state, y, params, rng,
                                     cfg: ProposalConfig | None = None) -> MoveOutcome:
    """Lengthen or shorten one track by exactly one frame.

    Selection is uniform over all K tracks and a coin-flip direction, so an
    infeasible choice (boundary hit, or length-1 reduction) is a no-op; the
    1/(2K) selection factors cancel between the move and its reverse.
    """
    state.proposed["os"] += 1
    out = (_os_extend(state, y, params, rng) if rng.random() < 0.5
           else _os_reduce(state, y, params, rng))
    if out.accepted:
        state.accepted["os"] += 1
    return out


def _os_extend(state, y, params, rng):
    K = len(state.tracks)
    n = params.n_frames
    if K == 0:
        return _noop("os", "extend")
    k = int(rng.integers(K))
    tr = state.tracks[k]
    d = ("forward", "backward")[int(rng.integers(2))]
    if d == "forward":
        if tr.end >= n:
            return _noop("os", "extend", direction=d)
        x_new = sample_transition(tr.states[-1], params, rng)
        log_q_x = float(log_transition(tr.states[-1], x_new, params))
        new_tr = Track(tr.tb, np.vstack([tr.states, x_new[None, :]]), tr.label)
        t_new = tr.end
    else:
        if tr.tb == 0:
            return _noop("os", "extend", direction=d)
        law = OneStepBackwardLaw(tr.states[0], params)
        x_new = law.sample(rng)
        log_q_x = law.logpdf(x_new)
        new_tr = Track(tr.tb - 1, np.vstack([x_new[None, :], tr.states]), tr.label)
        t_new = tr.tb - 1
    dll = state.cache.add_state(t_new, x_new)
    new_list = [new_tr if j == k else x for j, x in enumerate(state.tracks)]
    new_prior = log_prior_tracks(new_list, params)
    log_ratio = (new_prior - state.log_prior) + dll - log_q_x
    info = {"direction": d, "label": tr.label}
    if _accept(rng, log_ratio):
        state.replace_tracks(canonical_order(new_list), new_prior)
        return MoveOutcome("os", "extend", log_ratio, True, info)
    state.cache.remove_state(t_new, x_new)
    return MoveOutcome("os", "extend", log_ratio, False, info)


def _os_reduce(state, y, params, rng):
    K = len(state.tracks)
    if K == 0:
        return _noop("os", "reduce")
    k = int(rng.integers(K))
    tr = state.tracks[k]
    d = ("forward", "backward")[int(rng.integers(2))]
    if tr.length == 1:
        return _noop("os", "reduce", direction=d)
    if d == "forward":
        removed = tr.states[-1]
        kept = Track(tr.tb, tr.states[:-1].copy(), tr.label)
        t_rm = tr.end - 1
        log_q_rev = float(log_transition(kept.states[-1], removed, params))
    else:
        removed = tr.states[0]
        kept = Track(tr.tb + 1, tr.states[1:].copy(), tr.label)
        t_rm = tr.tb
        log_q_rev = OneStepBackwardLaw(kept.states[0], params).logpdf(removed)
    dll = state.cache.remove_state(t_rm, removed)
    new_list = [kept if j == k else x for j, x in enumerate(state.tracks)]
    new_prior = log_prior_tracks(new_list, params)
    log_ratio = (new_prior - state.log_prior) + dll + log_q_rev
    info = {"direction": d, "label": tr.label}
    if _accept(rng, log_ratio):
        state.replace_tracks(canonical_order(new_list), new_prior)
        return MoveOutcome("os", "reduce", log_ratio, True, info)
    state.cache.add_state(t_rm, removed)
    return MoveOutcome("os", "reduce", log_ratio, False, info)


# ---------------------------------------------------------------------------
# State swap
# ---------------------------------------------------------------------------

class IntensityPosterior:
    """Joint Gaussian conditional of some tracks' intensity chains.

    Positions are fixed and the likelihood is linear in the intensities, so
    given residual frames with these tracks' blobs absent, the stacked
    intensity vector is exactly Gaussian: chain-prior precision (tridiagonal
    per track) plus unit-blob Gram terms, including cross terms where
    footprints overlap within a frame.
    """

    def __init__(self, tracks, cache, params):
        self.tracks = list(tracks)
        self.offsets = np.cumsum([0] + [tr.length for tr in self.tracks])
        M = int(self.offsets[-1])
        P = np.zeros((M, M))
        h = np.zeros(M)
        tau = params.drive_var_intensity
        for u, tr in enumerate(self.tracks):
            o = self.offsets[u]
            P[o, o] += 1.0 / params.birth_var_intensity
            h[o] += params.birth_mean_intensity / params.birth_var_intensity
            for j in range(tr.length - 1):
                P[o + j, o + j] += 1.0 / tau
                P[o + j + 1, o + j + 1] += 1.0 / tau
                P[o + j, o + j + 1] -= 1.0 / tau
                P[o + j + 1, o + j] -= 1.0 / tau
        per_frame = {}
        for u, tr in enumerate(self.tracks):
            for j in range(tr.length):
                st = tr.states[j].copy()
                st[0] = 1.0
                patch = psf_patch(st, params)
                if patch is not None:
                    per_frame.setdefault(tr.tb + j, []).append((self.offsets[u] + j, patch))
        for t, items in per_frame.items():
            sig2 = float(params.noise_var[t])
            resid = cache.residual(t)
            for gi, (r0, r1, c0, c1, vals) in items:
                h[gi] += float(np.sum(vals * resid[r0:r1 + 1, c0:c1 + 1])) / sig2
                P[gi, gi] += float(np.sum(vals * vals)) / sig2
            for a in range(len(items)):
                for b in range(a + 1, len(items)):
                    gi, pa = items[a]
                    gj, pb = items[b]
                    s = _patch_overlap(pa, pb)
                    if s != 0.0:
                        P[gi, gj] += s / sig2
                        P[gj, gi] += s / sig2
        # Precision form: one Cholesky of P serves mean, sampling and density.
        chol_p = np.linalg.cholesky(P)
        inv_chol = np.linalg.inv(chol_p)
        self._chol_p = chol_p
        self._inv_chol_t = np.ascontiguousarray(inv_chol.T)
        self._logdet_p = 2.0 * float(np.sum(np.log(np.diag(chol_p))))
        self.mean = self._inv_chol_t @ (inv_chol @ h)

    def sample(self, rng):
        z = rng.standard_normal(self.mean.size)
        return np.atleast_1d(self.mean + self._inv_chol_t @ z)

    def logpdf(self, intensities):
        d = np.asarray(intensities, dtype=float) - self.mean
        w = self._chol_p.T @ d
        return float(-0.5 * (d.size * LOG_2PI - self._logdet_p + w @ w))

    def split(self, flat):
        return [np.asarray(flat)[self.offsets[u]:self.offsets[u + 1]]
                for u in range(len(self.tracks))]


def _patch_overlap(pa, pb):
    r0a, r1a, c0a, c1a, va = pa
    r0b, r1b, c0b, c1b, vb = pb
    r0, r1 = max(r0a, r0b), min(r1a, r1b)
    c0, c1 = max(c0a, c0b), min(c1a, c1b)
    if r0 > r1 or c0 > c1:
        return 0.0
    sa = va[r0 - r0a:r1 - r0a + 1, c0 - c0a:c1 - c0a + 1]
    sb = vb[r0 - r0b:r1 - r0b + 1, c0 - c0b:c1 - c0b + 1]
    return float(np.sum(sa * sb))


def _swap_pieces(u: Track, v: Track, t):
    """(tb, states) pieces from crossing u's head (<= t) with v's tail (> t).

    u must be alive at t and v at t+1.  u is v encodes the split; an empty
    second piece encodes the merge.
    """
    if u is v:
        cut = t + 1 - u.tb
        return [(u.tb, u.states[:cut]), (t + 1, u.states[cut:])]
    head_u = u.states[:t + 1 - u.tb]
    tail_v = v.states[t + 1 - v.tb:]
    pieces = [(u.tb, np.vstack([head_u, tail_v]))]
    head_v = v.states[:t + 1 - v.tb] if v.tb <= t else np.empty((0, 5))
    tail_u = u.states[t + 1 - u.tb:] if u.end > t + 1 else np.empty((0, 5))
    if len(head_v) and len(tail_u):
        pieces.append((v.tb, np.vstack([head_v, tail_u])))
    elif len(head_v):
        pieces.append((v.tb, head_v))
    elif len(tail_u):
        pieces.append((t + 1, tail_u))
    return pieces


def _position_key(pieces):
    """Order-free identity of a configuration fragment, positions only."""
    return tuple(sorted((tb, s.shape[0], np.ascontiguousarray(s[:, 1:3]).tobytes())
                        for tb, s in pieces))


def _inverse_distance_weights(source_pos, tracks_alive_next, t):
    w = np.array([1.0 / (1.0 + math.hypot(*(source_pos - q.state_at(t + 1)[1:3])))
                  for q in tracks_alive_next])
    return w


def _pair_selection_logprob(tracks, t, pairs):
    """Total log probability of drawing any of the given ordered pairs.

    First element uniform among tracks alive at t, second among tracks alive
    at t+1 with inverse-distance weights.
    """
    alive_t = [tr for tr in tracks if tr.alive_at(t)]
    alive_t1 = [tr for tr in tracks if tr.alive_at(t + 1)]
    if not alive_t or not alive_t1:
        return -np.inf
    total = 0.0
    for u, v in pairs:
        w = _inverse_distance_weights(u.state_at(t)[1:3], alive_t1, t)
        kv = next(idx for idx, q in enumerate(alive_t1) if q is v)
        total += (1.0 / len(alive_t)) * w[kv] / w.sum()
    return math.log(total) if total > 0.0 else -np.inf


def _matching_pairs(affected, t, target_key):
    """Ordered pairs over the affected tracks whose swap yields target_key."""
    out = []
    for u in affected:
        if not u.alive_at(t):
            continue
        for v in affected:
            if not v.alive_at(t + 1):
                continue
            if _position_key(_swap_pieces(u, v, t)) == target_key:
                out.append((u, v))
    return out


def state_swap_move(state, y, params, rng, cfg: ProposalConfig | None = None) -> MoveOutcome:
    """Cross two tracks' trajectories at a frame boundary (merge/split too).

    Positions are rearranged deterministically; the affected tracks'
    velocities are refreshed from their exact conditional given positions and
    their intensities from the joint Gaussian conditional given the images,
    which keeps the acceptance rate healthy when tails are exchanged.
    """
    state.proposed["ss"] += 1
    n = params.n_frames
    if n < 2:
        return _noop("ss", "swap")
    t = int(rng.integers(n - 1))
    alive_t = [tr for tr in state.tracks if tr.alive_at(t)]
    alive_t1 = [tr for tr in state.tracks if tr.alive_at(t + 1)]
    if not alive_t or not alive_t1:
        return _noop("ss", "swap", t=t)
    i_tr = alive_t[int(rng.integers(len(alive_t)))]
    w = _inverse_distance_weights(i_tr.state_at(t)[1:3], alive_t1, t)
    j_tr = alive_t1[int(rng.choice(len(alive_t1), p=w / w.sum()))]

    originals = [i_tr] if i_tr is j_tr else [i_tr, j_tr]
    pieces = _swap_pieces(i_tr, j_tr, t)
    if i_tr is j_tr:
        kind = "split"
    elif len(pieces) == 1:
        kind = "merge"
    else:
        kind = "swap"
    news = [Track(tb, s.copy()) for tb, s in pieces]

    dll = 0.0
    for tr in originals:
        dll += state.cache.remove_track(tr)

    # forward refresh of velocities and intensities on the new pieces
    log_q_refresh_fwd = 0.0
    for tr in news:
        vc = VelocityConditional(tr.states[:, 1:3], params)
        vel = vc.sample(rng)
        log_q_refresh_fwd += vc.logpdf(vel)
        tr.states[:, 3:5] = vel
    ipost = IntensityPosterior(news, state.cache, params)
    a_flat = ipost.sample(rng)
    log_q_refresh_fwd += ipost.logpdf(a_flat)
    for tr, a in zip(news, ipost.split(a_flat)):
        tr.states[:, 0] = a

    # reverse refresh density at the original velocities and intensities
    log_q_refresh_rev = 0.0
    for tr in originals:
        vc = VelocityConditional(tr.states[:, 1:3], params)
        log_q_refresh_rev += vc.logpdf(tr.states[:, 3:5])
    ipost_rev = IntensityPosterior(originals, state.cache, params)
    log_q_refresh_rev += ipost_rev.logpdf(
        np.concatenate([tr.states[:, 0] for tr in originals]))

    for tr in news:
        dll += state.cache.add_track(tr)

    keep = [x for x in state.tracks if all(x is not o for o in originals)]
    new_list = keep + news
    new_prior = log_prior_tracks(new_list, params)

    pairs_fwd = _matching_pairs(originals, t, _position_key(pieces))
    pairs_rev = _matching_pairs(news, t, _position_key(
        [(tr.tb, tr.states) for tr in originals]))
    log_sel_fwd = _pair_selection_logprob(state.tracks, t, pairs_fwd)
    log_sel_rev = _pair_selection_logprob(new_list, t, pairs_rev)

    log_ratio = ((new_prior - state.log_prior) + dll
                 + log_sel_rev + log_q_refresh_rev
                 - log_sel_fwd - log_q_refresh_fwd)
    info = {"t": t, "kind": kind, "labels": [tr.label for tr in originals]}
    if _accept(rng, log_ratio):
        state.accepted["ss"] += 1
        state.replace_tracks(canonical_order(new_list), new_prior)
        return MoveOutcome("ss", kind, log_ratio, True, info)
    for tr in news:
        state.cache.remove_track(tr)
    for tr in originals:
        state.cache.add_track(tr)
    return MoveOutcome("ss", kind, log_ratio, False, info)


# ---------------------------------------------------------------------------
# Sweep dispatch
# ---------------------------------------------------------------------------

_FAMILY_FUNCS = (("bd", birth_death_move),
                 ("ms", multistep_extension_reduction_move),
                 ("os", onestep_extension_reduction_move),
                 ("ss", state_swap_move))


def sweep(state, y, params, rng, move_probs=(0.25, 0.25, 0.25, 0.25),
          cfg: ProposalConfig | None = None) -> MoveOutcome:
    """Draw one move family and run it; one sweep = one proposal."""
    probs = np.asarray(move_probs, dtype=float)
    if probs.shape != (4,) or np.any(probs < 0) or probs.sum() <= 0:
        raise ValueError("move_probs must be 4 non-negative weights")
    probs = probs / probs.sum()
    u = rng.random()
    acc = 0.0
    fam_func = _FAMILY_FUNCS[-1][1]
    for (name, func), p in zip(_FAMILY_FUNCS, probs):
        acc += p
        if u < acc:
            fam_func = func
            break
    out = fam_func(state, y, params, rng, cfg)
    state.sweep += 1
    return out
