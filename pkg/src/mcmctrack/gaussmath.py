"""Dense-Gaussian helpers for the linear-Gaussian target model.

Positions and velocities of one target evolve, per spatial axis, as a
near-constant-velocity chain

    [s_k, v_k] = F [s_{k-1}, v_{k-1}] + w_k,   w_k ~ N(0, q * SIG),

with F = [[1, dt], [0, 1]] and SIG = [[dt^3/3, dt^2/2], [dt^2/2, dt]].
The initial state is N((mu_pos, 0), diag(var_pos, var_vel)).  Everything in
this module builds or conditions the exact joint Gaussian of such chains.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def _freeze(*arrays):
    for a in arrays:
        a.flags.writeable = False


def norm_logpdf(x, mean, var):
    """Elementwise scalar Gaussian log-density."""
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var)) - (x - mean) ** 2 / (2.0 * var)


def motion_matrices(dt: float):
    """Transition matrix F and unit-noise covariance SIG for one axis."""
    f = np.array([[1.0, dt], [0.0, 1.0]])
    sig = np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    return f, sig


def chain_joint(length, dt, var_pos, var_vel, drive_var, mu_pos=0.0):
    """Exact joint Gaussian of (s_0..s_{L-1}, v_0..v_{L-1}) for one axis.

    Returns (mean, cov) with positions first, then velocities.  The arrays
    are cached and read-only; copy before mutating.
    """
    return _chain_joint_cached(int(length), float(dt), float(var_pos),
                               float(var_vel), float(drive_var), float(mu_pos))


@lru_cache(maxsize=4096)
def _chain_joint_cached(length, dt, var_pos, var_vel, drive_var, mu_pos):
    f, sig = motion_matrices(dt)
    q = drive_var * sig
    L = length
    # Interleaved (s_k, v_k) block covariance via the forward recursion,
    # then reordered to [positions..., velocities...].
    blocks = np.zeros((L, L, 2, 2))
    var = np.array([[var_pos, 0.0], [0.0, var_vel]])
    blocks[0, 0] = var
    for k in range(1, L):
        var = f @ var @ f.T + q
        blocks[k, k] = var
    for j in range(L):
        for k in range(j + 1, L):
            blocks[k, j] = f @ blocks[k - 1, j]
            blocks[j, k] = blocks[k, j].T
    cov = np.zeros((2 * L, 2 * L))
    for j in range(L):
        for k in range(L):
            b = blocks[j, k]
            cov[j, k] = b[0, 0]
            cov[j, L + k] = b[0, 1]
            cov[L + j, k] = b[1, 0]
            cov[L + j, L + k] = b[1, 1]
    mean = np.concatenate([np.full(L, mu_pos), np.zeros(L)])
    _freeze(mean, cov)
    return mean, cov


def condition(mean, cov, obs_idx, obs_val, tgt_idx):
    """Condition a joint Gaussian on ``x[obs_idx] = obs_val``.

    Returns (mean, cov) of x[tgt_idx] given the observation.
    """
    obs_idx = np.asarray(obs_idx, dtype=int)
    tgt_idx = np.asarray(tgt_idx, dtype=int)
    obs_val = np.asarray(obs_val, dtype=float)
    c_oo = cov[np.ix_(obs_idx, obs_idx)]
    c_to = cov[np.ix_(tgt_idx, obs_idx)]
    c_tt = cov[np.ix_(tgt_idx, tgt_idx)]
    solve = np.linalg.solve(c_oo, np.column_stack([obs_val - mean[obs_idx], c_to.T]))
    gain_mean = c_to @ solve[:, 0]
    gain_cov = c_to @ solve[:, 1:]
    return mean[tgt_idx] + gain_mean, c_tt - gain_cov


class Mvn:
    """Small dense multivariate normal with cached Cholesky factor."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        # Symmetrize: conditioning leaves ~1e-16 asymmetry behind.
        self.cov = 0.5 * (cov + cov.T)
        self._chol = np.linalg.cholesky(self.cov) if self.mean.size else np.zeros((0, 0))
        self._chol_inv = None
        self._logdet = None

    @classmethod
    def from_factor(cls, mean, cov, chol, chol_inv=None, logdet=None):
        """Wrap a precomputed (cov, chol) pair without refactorizing."""
        law = cls.__new__(cls)
        law.mean = np.asarray(mean, dtype=float)
        law.cov = cov
        law._chol = chol
        law._chol_inv = chol_inv
        law._logdet = logdet
        return law

    @property
    def dim(self):
        return self.mean.size

    def sample(self, rng):
        z = rng.standard_normal(self.dim)
        return self.mean + self._chol @ z

    def logpdf(self, x):
        if self.dim == 0:
            return 0.0
        d = np.asarray(x, dtype=float) - self.mean
        if self._chol_inv is not None:
            w = self._chol_inv @ d
        else:
            w = np.linalg.solve(self._chol, d)
        if self._logdet is None:
            self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        return float(-0.5 * (self.dim * LOG_2PI + self._logdet + w @ w))


def _axis_joint(params, axis, length):
    drive = params.drive_var_x if axis == 0 else params.drive_var_y
    mu = params.birth_mean_x if axis == 0 else params.birth_mean_y
    return chain_joint(length, params.frame_dt, params.birth_var_position,
                       params.birth_var_velocity, drive, mu_pos=mu)


@lru_cache(maxsize=16384)
def _axis_plan(length, dt, var_pos, var_vel, drive_var, mu_pos, obs_idx, tgt_idx):
    """Precomputed conditioning of a chain joint on fixed index patterns.

    The gain matrix and conditional covariance depend only on the structure,
    not on the observed values, so one plan serves every evaluation with the
    same (length, params, indices) signature.
    """
    mean, cov = _chain_joint_cached(length, dt, var_pos, var_vel, drive_var, mu_pos)
    o = list(obs_idx)
    tg = list(tgt_idx)
    c_oo = cov[np.ix_(o, o)]
    c_to = cov[np.ix_(tg, o)]
    c_tt = cov[np.ix_(tg, tg)]
    gain = np.linalg.solve(c_oo, c_to.T).T
    ccov = c_tt - gain @ c_to.T
    ccov = 0.5 * (ccov + ccov.T)
    if tg:
        chol = np.linalg.cholesky(ccov)
        chol_inv = np.linalg.inv(chol)
    else:
        chol = np.zeros((0, 0))
        chol_inv = np.zeros((0, 0))
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol)))) if tg else 0.0
    mean_o = mean[o].copy()
    mean_t = mean[tg].copy()
    _freeze(mean_o, mean_t, gain, ccov, chol, chol_inv)
    return mean_o, mean_t, gain, ccov, chol, chol_inv, logdet


def axis_conditional(params, axis, length, obs_idx, obs_val, tgt_idx) -> Mvn:
    """Law of chain entries ``tgt_idx`` given ``x[obs_idx] = obs_val``.

    One spatial axis; indices address the [positions..., velocities...]
    layout of chain_joint.
    """
    drive = params.drive_var_x if axis == 0 else params.drive_var_y
    mu = params.birth_mean_x if axis == 0 else params.birth_mean_y
    mean_o, mean_t, gain, ccov, chol, chol_inv, logdet = _axis_plan(
        int(length), float(params.frame_dt), float(params.birth_var_position),
        float(params.birth_var_velocity), float(drive), float(mu),
        tuple(obs_idx), tuple(tgt_idx))
    m = mean_t + gain @ (np.asarray(obs_val, dtype=float) - mean_o)
    return Mvn.from_factor(m, ccov, chol, chol_inv, logdet)


class VelocityConditional:
    """Exact law of a track's velocities given all of its positions.

    The two spatial axes are independent; each conditional is computed from
    the dense joint Gaussian of that axis' position/velocity chain.
    ``extra_obs`` optionally pins a subset of velocities as well (used when a
    move appends states to a track whose old velocities are kept): entries are
    (velocity_index, value_x, value_y) and the law then covers only the
    velocity indices in ``targets``.
    """

    def __init__(self, positions, params, extra_obs=(), targets=None):
        positions = np.asarray(positions, dtype=float)
        L = positions.shape[0]
        if targets is None:
            targets = list(range(L))
        self.targets = list(targets)
        obs_idx = list(range(L)) + [L + k for k, _, _ in extra_obs]
        tgt_idx = [L + k for k in self.targets]
        self._laws = []
        for axis in (0, 1):
            obs_val = list(positions[:, axis])
            obs_val.extend(v[1 + axis] for v in extra_obs)
            self._laws.append(axis_conditional(params, axis, L,
                                               obs_idx, obs_val, tgt_idx))

    def sample(self, rng):
        """Velocities as an array of shape (len(targets), 2)."""
        vx = self._laws[0].sample(rng)
        vy = self._laws[1].sample(rng)
        return np.column_stack([vx, vy])

    def logpdf(self, velocities):
        velocities = np.asarray(velocities, dtype=float)
        return self._laws[0].logpdf(velocities[:, 0]) + self._laws[1].logpdf(velocities[:, 1])


def last_velocity_moments(positions, params):
    """Per-axis mean/variance of the final velocity given the positions."""
    positions = np.asarray(positions, dtype=float)
    L = positions.shape[0]
    obs = list(range(L))
    out = []
    for axis in (0, 1):
        law = axis_conditional(params, axis, L, obs, positions[:, axis], [2 * L - 1])
        out.append((float(law.mean[0]), float(law.cov[0, 0])))
    return out


def first_velocity_moments(positions, params):
    """Per-axis mean/variance of the initial velocity given the positions."""
    positions = np.asarray(positions, dtype=float)
    L = positions.shape[0]
    obs = list(range(L))
    out = []
    for axis in (0, 1):
        law = axis_conditional(params, axis, L, obs, positions[:, axis], [L])
        out.append((float(law.mean[0]), float(law.cov[0, 0])))
    return out
