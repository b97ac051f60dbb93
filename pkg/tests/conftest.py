"""Shared fixtures: two frozen scenes and the chains run on them.

The two-frame 8x8 scene is small enough for an enumeration-style reference
posterior; the 64x64 crossing scene exercises tracking and learning at a
scale where only relative checks (baseline comparisons, surrogate MLE) are
available.  Chains are expensive, so they run once per session and every
test shares the sample lists.
"""

import time

import numpy as np
import pytest

import oracles
from mcmctrack import ModelParams, Track, init_chain, run_chain, sample_images
from mcmctrack.sampler import SamplerConfig

# -- enumerable two-frame scene ------------------------------------------------

TOY_THETA = dict(
    n_frames=2, rows=8, cols=8, pixel_pitch=1.0, psf_width=1.0, frame_dt=1.0,
    footprint=5,
    birth_mean_intensity=8.0, birth_mean_x=3.5, birth_mean_y=3.5,
    birth_var_intensity=4.0, birth_var_position=4.0, birth_var_velocity=1.0,
    drive_var_intensity=0.5, drive_var_x=0.3, drive_var_y=0.7,
    survival_prob=0.6, birth_rate=0.3, background=0.0, noise_var=1.0)

TOY_DATA_SEED = 42


def oracle_model_of(params: ModelParams) -> oracles.OracleModel:
    """Mirror ModelParams into the plain-number oracle form."""
    return oracles.OracleModel(
        n_frames=params.n_frames, rows=params.rows, cols=params.cols,
        pitch=params.pixel_pitch, psf_width=params.psf_width,
        dt=params.frame_dt, footprint=params.footprint,
        birth_mean_intensity=params.birth_mean_intensity,
        birth_mean_x=params.birth_mean_x, birth_mean_y=params.birth_mean_y,
        birth_var_intensity=params.birth_var_intensity,
        birth_var_position=params.birth_var_position,
        birth_var_velocity=params.birth_var_velocity,
        drive_var_intensity=params.drive_var_intensity,
        drive_var_x=params.drive_var_x, drive_var_y=params.drive_var_y,
        survival_prob=params.survival_prob, birth_rate=params.birth_rate,
        background=np.asarray(params.background, dtype=float),
        noise_var=np.asarray(params.noise_var, dtype=float))


@pytest.fixture(scope="session")
def toy_params():
    return ModelParams(**TOY_THETA)


@pytest.fixture(scope="session")
def toy_truth():
    return [Track(0, np.array([[8.0, 3.1, 3.3, 0.5, 0.5],
                               [7.8, 3.6, 3.8, 0.5, 0.5]]))]


@pytest.fixture(scope="session")
def toy_y(toy_truth, toy_params):
    return sample_images(toy_truth, toy_params, np.random.default_rng(TOY_DATA_SEED))


@pytest.fixture(scope="session")
def toy_oracle(toy_params):
    return oracle_model_of(toy_params)


# -- 64x64 crossing scene --------------------------------------------------------

SCENARIO_THETA = dict(
    n_frames=20, rows=64, cols=64, pixel_pitch=1.0, psf_width=1.0,
    frame_dt=1.0, footprint=5,
    birth_mean_intensity=30.0, birth_mean_x=0.0, birth_mean_y=0.0,
    birth_var_intensity=4.0, birth_var_position=25.0, birth_var_velocity=3.0,
    drive_var_intensity=0.5, drive_var_x=0.3, drive_var_y=0.7,
    survival_prob=0.95, birth_rate=0.25, background=0.0, noise_var=1.0)

# five targets; the first two cross near frame 9 (min distance 0.83 px
# under truth seed 771, found by search over in-view rollouts)
SCENARIO_INITS = [([30.0, 8.0, 6.0, 2.2, 2.4], 0, 20),
                  ([31.0, 5.0, 12.0, 2.4, 1.2], 0, 20),
                  ([29.0, 12.0, 2.0, 1.4, 2.6], 2, 18),
                  ([30.5, 2.0, 12.0, 2.6, 1.4], 2, 18),
                  ([30.0, 10.0, 10.0, 1.4, 2.0], 5, 11)]
SCENARIO_TRUTH_SEED = 771
SCENARIO_DATA_SEED = 99
SCENARIO_CHAIN_SEED = 5
SCENARIO_ITERS = 400
SCENARIO_LOOPS = (30, 1, 0)


def rollout_track(params, init, tb, length, rng):
    """One dynamics-model rollout from a fixed initial state."""
    F = np.array([[1.0, params.frame_dt], [0.0, 1.0]])
    dt = params.frame_dt
    sig = np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    states = [np.asarray(init, dtype=float)]
    for _ in range(length - 1):
        x = states[-1].copy()
        x[0] += np.sqrt(params.drive_var_intensity) * rng.standard_normal()
        for axis, drive in ((0, params.drive_var_x), (1, params.drive_var_y)):
            z = np.array([x[1 + axis], x[3 + axis]])
            z = F @ z + rng.multivariate_normal(np.zeros(2), drive * sig)
            x[1 + axis], x[3 + axis] = z
        states.append(x)
    return Track(tb, np.array(states))


@pytest.fixture(scope="session")
def scenario_params():
    return ModelParams(**SCENARIO_THETA)


@pytest.fixture(scope="session")
def scenario_truth(scenario_params):
    rng = np.random.default_rng(SCENARIO_TRUTH_SEED)
    return [rollout_track(scenario_params, init, tb, length, rng)
            for init, tb, length in SCENARIO_INITS]


@pytest.fixture(scope="session")
def scenario_y(scenario_truth, scenario_params):
    return sample_images(scenario_truth, scenario_params,
                         np.random.default_rng(SCENARIO_DATA_SEED))


@pytest.fixture(scope="session")
def known_theta_chain(scenario_y, scenario_params):
    """Post-burn-in aside, the full sample list of the known-theta chain.

    Returns {"samples": [(tracks, params, log_joint, diag), ...],
             "burn": first retained index, "elapsed": wall seconds}.
    """
    cfg = SamplerConfig()
    state = init_chain(scenario_y, scenario_params, cfg,
                       rng=np.random.default_rng(SCENARIO_CHAIN_SEED))
    start = time.perf_counter()
    samples = list(run_chain(scenario_y, state, SCENARIO_LOOPS, SCENARIO_ITERS,
                             cfg, np.random.default_rng(SCENARIO_CHAIN_SEED)))
    elapsed = time.perf_counter() - start
    return {"samples": samples, "burn": SCENARIO_ITERS // 4, "elapsed": elapsed}
