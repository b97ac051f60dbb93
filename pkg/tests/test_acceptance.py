"""End-to-end acceptance battery.

Each test here checks one externally stated guarantee of the sampler at its
stated tolerance: exactness of the move kernel against an enumeration-style
reference posterior, prior-data consistency of the full sampler and of the
track refresh kernel on their own, conjugate parameter updates against
closed-form laws, tracking quality against a detection-then-linking baseline,
parameter recovery from a wrong starting point, and the matched-filter
normalisation identities.  Wall-clock budgets are asserted where the
guarantee includes one.
"""

import math
import time
from collections import Counter

import numpy as np
import pytest
from scipy import stats

import oracles as orc
from conftest import TOY_THETA
from mcmctrack import (ChainState, ImageStack, ModelParams, Track,
                       alive_positions, greedy_nn_tracker, init_chain,
                       match_filter, mtt_from_tracks, ospa_frame, render_frame,
                       run_chain, sample_images, sample_prior_tracks,
                       summarize_chain, surrogate_mle, sweep, OspaParams)
from mcmctrack.filtering import filter_energy
from mcmctrack.metrics import PARAM_COLUMNS
from mcmctrack.model import sample_initial_state, sample_transition
from mcmctrack.params import (PriorConfig, update_discrete_params,
                              update_dynamics_params, update_observation_params)
from mcmctrack.pgibbs import CsmcConfig, csmc_refresh
from mcmctrack.sampler import SamplerConfig, algorithm_iteration

# ---------------------------------------------------------------------------
# Configuration-move kernel vs brute-force posterior on the enumerable scene
# ---------------------------------------------------------------------------

def test_toy_scene_posterior_matches_enumeration(toy_y, toy_params, toy_oracle,
                                                 toy_truth):
    focus = [tr.states[:, 1:3] for tr in toy_truth]
    post = orc.toy_bin_posterior(toy_oracle, toy_y.frames, focus,
                                 np.random.default_rng(11))
    # the reference itself must be tight enough to resolve the tolerance
    assert post.se_tv < 0.01
    assert post.tail_prob < 0.01

    rng = np.random.default_rng(7)
    state = ChainState.create(toy_y, toy_params, [], rng)
    n_sweeps = 1_000_000
    burn = n_sweeps // 5
    counts = Counter()
    key = orc.config_bin_key(toy_oracle, ())
    start = time.perf_counter()
    for i in range(n_sweeps):
        out = sweep(state, toy_y, toy_params, rng)
        if out.accepted:
            key = orc.config_bin_key(
                toy_oracle,
                [orc.track_bin_key(toy_oracle, tr.tb, tr.states[:, 1:3])
                 for tr in state.tracks])
        if i >= burn:
            counts[key] += 1
    elapsed = time.perf_counter() - start

    kept = n_sweeps - burn
    empirical = {k: c / kept for k, c in counts.items()}
    tv = orc.total_variation(post.probs, empirical)
    assert tv < 0.05
    assert elapsed < 300.0


# ---------------------------------------------------------------------------
# Prior-data consistency of the full sampler (moves, refreshes, learning)
# ---------------------------------------------------------------------------

GEWEKE_GEOM = dict(n_frames=3, rows=8, cols=8, pixel_pitch=1.0, psf_width=1.0,
                   frame_dt=1.0, footprint=5)

# hyperparameters with enough moments for z-tests and scales echoing the
# toy scene, so the drawn models stay in a numerically ordinary regime
GEWEKE_PRIOR = PriorConfig(
    alpha0=6.0, beta0=5.0, mu0=0.0, n0=25.0,
    overrides={"birth_rate": {"alpha0": 3.0, "beta0": 0.1},
               "drive_var_intensity": {"beta0": 2.5},
               "drive_var_x": {"beta0": 1.5},
               "drive_var_y": {"beta0": 3.5},
               "birth_var_intensity": {"beta0": 20.0, "mu0": 8.0, "n0": 4.0},
               "birth_var_position": {"beta0": 20.0, "mu0": 3.5, "n0": 4.0},
               "birth_var_velocity": {"beta0": 5.0}})


def _draw_model(prior, rng):
    """One model draw from the prior implied by the conjugate updates."""
    def ig(name):
        cp = prior.for_component(name)
        return cp.beta0 / rng.gamma(cp.alpha0)

    def mean_given(var, cp):
        return cp.mu0 + math.sqrt(var / cp.n0) * rng.standard_normal()

    cp_int = prior.for_component("birth_var_intensity")
    cp_pos = prior.for_component("birth_var_position")
    cp_rate = prior.for_component("birth_rate")
    cp_obs = prior.for_component("noise_var")
    bvi = ig("birth_var_intensity")
    bvp = ig("birth_var_position")
    n = GEWEKE_GEOM["n_frames"]
    noise_var = cp_obs.beta0 / rng.gamma(cp_obs.alpha0, size=n)
    background = cp_obs.mu0 + np.sqrt(noise_var / cp_obs.n0) * rng.standard_normal(n)
    return ModelParams(
        **GEWEKE_GEOM,
        survival_prob=rng.beta(1.0, 1.0),
        birth_rate=rng.gamma(cp_rate.alpha0, cp_rate.beta0),
        drive_var_intensity=ig("drive_var_intensity"),
        drive_var_x=ig("drive_var_x"),
        drive_var_y=ig("drive_var_y"),
        birth_var_intensity=bvi,
        birth_mean_intensity=mean_given(bvi, cp_int),
        birth_var_position=bvp,
        birth_mean_x=mean_given(bvp, cp_pos),
        birth_mean_y=mean_given(bvp, cp_pos),
        birth_var_velocity=ig("birth_var_velocity"),
        background=background,
        noise_var=noise_var)


def _scene_stats(tracks, params):
    if tracks:
        mean_a = float(np.mean(np.concatenate([tr.states[:, 0]
                                               for tr in tracks])))
    else:
        mean_a = 0.0
    return (len(tracks), params.survival_prob, params.birth_rate, mean_a)


def test_joint_sampler_prior_data_consistency():
    start = time.perf_counter()

    rng = np.random.default_rng(201)
    fwd = np.array([_scene_stats(sample_prior_tracks(p, rng), p)
                    for p in (_draw_model(GEWEKE_PRIOR, rng)
                              for _ in range(6000))])

    # successive-conditional replica: one full sampler iteration, then the
    # images are redrawn given the new scene; marginally the scene must keep
    # following the prior exactly
    rng = np.random.default_rng(202)
    cfg = SamplerConfig(prior=GEWEKE_PRIOR)
    params = _draw_model(GEWEKE_PRIOR, rng)
    tracks = sample_prior_tracks(params, rng)
    y = sample_images(tracks, params, rng)
    succ = np.empty((4000, 4))
    for i in range(len(succ)):
        state = ChainState.create(y, params, tracks, rng)
        algorithm_iteration(state, y, (10, 1, 1), cfg, rng)
        tracks, params = state.tracks, state.params
        y = sample_images(tracks, params, rng)
        succ[i] = _scene_stats(tracks, params)

    pvals = [orc.two_sample_zscore(fwd[:, k], succ[:, k], ess_a=len(fwd))[1]
             for k in range(4)]
    assert min(pvals) > 0.01 / len(pvals)
    assert time.perf_counter() - start < 600.0


# ---------------------------------------------------------------------------
# Conjugate updates vs closed-form posterior laws at high draw counts
# ---------------------------------------------------------------------------

def test_conjugate_updates_match_posterior_laws(toy_y, toy_params):
    n_draws = 100_000
    ks_p = 0.01
    params3 = ModelParams(**{**TOY_THETA, "n_frames": 3})
    tracks3 = [Track(0, np.array([[8.0, 3.0, 3.0, 0.5, 0.25],
                                  [7.5, 3.5, 3.25, 0.4, 0.3],
                                  [7.0, 3.9, 3.5, 0.45, 0.2]])),
               Track(0, np.array([[9.0, 2.0, 5.0, -0.3, 0.1],
                                  [8.6, 1.8, 5.2, -0.2, 0.2]])),
               Track(1, np.array([[7.2, 5.0, 2.0, 0.1, -0.2]]))]

    def ks_ig(x, alpha, beta):
        return stats.kstest(x, stats.invgamma(alpha, scale=beta).cdf).pvalue

    # discrete block
    seq = mtt_from_tracks(tracks3, n_frames=3)
    prior = PriorConfig()
    a_s, b_s, a_b, scale_b = orc.discrete_posterior(
        [2, 3, 1], [0, 2, 1], [2, 1, 0], prior.alpha0,
        prior.for_component("birth_rate").beta0)
    rng = np.random.default_rng(221)
    draws = np.array([update_discrete_params(seq, prior, rng)
                      for _ in range(n_draws)])
    assert stats.kstest(draws[:, 0], stats.beta(a_s, b_s).cdf).pvalue > ks_p
    assert stats.kstest(draws[:, 1],
                        stats.gamma(a_b, scale=scale_b).cdf).pvalue > ks_p

    # observation block, per-frame normal-inverse-gamma laws
    prior = PriorConfig()
    cp = prior.for_component("noise_var")
    rng = np.random.default_rng(223)
    obs_draws = [update_observation_params([], toy_y, toy_params, prior, rng)
                 for _ in range(n_draws)]
    b = np.array([d[0] for d in obs_draws])
    var = np.array([d[1] for d in obs_draws])
    for t in range(2):
        mu_n, n_n, alpha_n, beta_n = orc.nig_posterior(
            toy_y.frames[t], cp.alpha0, cp.beta0, cp.mu0, cp.n0)
        assert ks_ig(var[:, t], alpha_n, beta_n) > ks_p
        df, loc, scale = orc.nig_mean_marginal(mu_n, n_n, alpha_n, beta_n)
        assert stats.kstest(b[:, t], stats.t(df, loc, scale).cdf).pvalue > ks_p

    # dynamics block
    prior = PriorConfig(alpha0=2.0, beta0=1.5, mu0=1.0, n0=2.0, overrides={})
    rng = np.random.default_rng(225)
    dyn = [update_dynamics_params(tracks3, params3, prior, rng)
           for _ in range(n_draws)]
    col = lambda name: np.array([d[name] for d in dyn])
    n_steps, ss_a, quad = 0, 0.0, np.zeros(2)
    for tr in tracks3:
        k, s, q = orc.step_innovations(tr.states, params3.frame_dt)
        n_steps += k
        ss_a += s
        quad += q
    assert ks_ig(col("drive_var_intensity"),
                 2.0 + 0.5 * n_steps, 1.5 + 0.5 * ss_a) > ks_p
    assert ks_ig(col("drive_var_x"), 2.0 + n_steps, 1.5 + 0.5 * quad[0]) > ks_p
    assert ks_ig(col("drive_var_y"), 2.0 + n_steps, 1.5 + 0.5 * quad[1]) > ks_p

    a0 = np.array([8.0, 9.0, 7.2])
    mu_n, n_n, alpha_n, beta_n = orc.nig_posterior(a0, 2.0, 1.5, 1.0, 2.0)
    assert ks_ig(col("birth_var_intensity"), alpha_n, beta_n) > ks_p
    df, loc, scale = orc.nig_mean_marginal(mu_n, n_n, alpha_n, beta_n)
    assert stats.kstest(col("birth_mean_intensity"),
                        stats.t(df, loc, scale).cdf).pvalue > ks_p

    # one position variance pooled over the axes, one mean per axis
    s0 = np.array([[3.0, 3.0], [2.0, 5.0], [5.0, 2.0]])
    m = 3
    n_post = 2.0 + m
    beta_post = 1.5
    mu_posts = []
    for axis in range(2):
        xbar = s0[:, axis].mean()
        ss = np.sum((s0[:, axis] - xbar) ** 2)
        beta_post += 0.5 * (ss + 2.0 * m * (xbar - 1.0) ** 2 / n_post)
        mu_posts.append((2.0 * 1.0 + m * xbar) / n_post)
    assert ks_ig(col("birth_var_position"), 2.0 + m, beta_post) > ks_p
    for name, mu_post in zip(("birth_mean_x", "birth_mean_y"), mu_posts):
        df, loc, scale = orc.nig_mean_marginal(mu_post, n_post, 2.0 + m,
                                               beta_post)
        assert stats.kstest(col(name),
                            stats.t(df, loc, scale).cdf).pvalue > ks_p

    v0 = np.array([[0.5, 0.25], [-0.3, 0.1], [0.1, -0.2]])
    assert ks_ig(col("birth_var_velocity"),
                 2.0 + v0.size / 2.0, 1.5 + 0.5 * np.sum(v0 ** 2)) > ks_p


# ---------------------------------------------------------------------------
# Crossing scene: fixed-parameter tracking vs the greedy baseline
# ---------------------------------------------------------------------------

def test_crossing_scene_tracking_beats_greedy_baseline(known_theta_chain,
                                                       scenario_y,
                                                       scenario_params,
                                                       scenario_truth):
    samples = known_theta_chain["samples"]
    q = OspaParams(p=1.0, c=10.0)
    summary = summarize_chain(samples, truth=scenario_truth, q=q, burn_in=0.25)
    assert summary.first_kept == known_theta_chain["burn"]

    n = scenario_params.n_frames
    baseline = greedy_nn_tracker(scenario_y, scenario_params)
    base_ospa = np.mean([
        ospa_frame(alive_positions(baseline, t, scenario_params),
                   alive_positions(scenario_truth, t, scenario_params), q)
        for t in range(n)])
    assert summary.ospa.mean() < base_ospa

    true_counts = np.array([len(alive_positions(scenario_truth, t,
                                                scenario_params))
                            for t in range(n)])
    assert np.mean(summary.frame_count_mode == true_counts) >= 0.80
    assert known_theta_chain["elapsed"] < 900.0


# ---------------------------------------------------------------------------
# Parameter learning from a deliberately wrong starting point
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def learning_chain(scenario_y, scenario_params):
    # every component starts well off the generating value: means shifted,
    # variances inflated 2-6x, survival and birth rate far off, noise
    # variance 16x too large, background set to a crude image statistic
    wrong = scenario_params.with_updates(
        birth_mean_intensity=45.0, birth_mean_x=10.0, birth_mean_y=5.0,
        birth_var_intensity=8.0, birth_var_position=50.0,
        birth_var_velocity=6.0, drive_var_intensity=3.0, drive_var_x=1.0,
        drive_var_y=1.5, survival_prob=0.6, birth_rate=1.0,
        background=float(scenario_y.frames.mean()), noise_var=16.0)
    cfg = SamplerConfig()
    # the latent tracks are seeded from the naive detection baseline (run
    # at the generating parameters, standing in for any external detector);
    # the chain itself only ever sees the wrong parameter set
    seed_tracks = greedy_nn_tracker(scenario_y, scenario_params)
    state = init_chain(scenario_y, wrong, cfg,
                       rng=np.random.default_rng(17), tracks=seed_tracks)
    samples = list(run_chain(scenario_y, state, (30, 1, 1), 400, cfg,
                             np.random.default_rng(17)))
    return samples


def test_learned_parameters_match_surrogate_estimates(learning_chain,
                                                      known_theta_chain,
                                                      scenario_y,
                                                      scenario_params,
                                                      scenario_truth):
    summary = summarize_chain(learning_chain, burn_in=0.25)
    mle = surrogate_mle(mtt_from_tracks(scenario_truth,
                                        scenario_params.n_frames),
                        scenario_truth, scenario_y, scenario_params)
    assert mle.undefined == set()
    targets = dict(mle.values)
    targets["background_mean"] = float(np.mean(mle.values["background"]))
    targets["noise_var_mean"] = float(np.mean(mle.values["noise_var"]))

    for name in PARAM_COLUMNS:
        counts, edges = summary.param_hist[name]
        k = int(np.argmax(counts))
        mode = 0.5 * (edges[k] + edges[k + 1])
        sd = summary.param_std[name]
        assert abs(mode - targets[name]) <= 2.0 * sd, name

    # the learned chain must reach the log-density band of the chain that
    # was started at, and never moved off, the generating parameters
    burn = known_theta_chain["burn"]
    known_lj = np.array([s[2] for s in known_theta_chain["samples"][burn:]])
    learned_lj = summary.log_joint[summary.first_kept:]
    assert abs(learned_lj.mean() - known_lj.mean()) <= 2.0 * known_lj.std()


# ---------------------------------------------------------------------------
# Matched-filter identities
# ---------------------------------------------------------------------------

def test_matched_filter_identities():
    params = ModelParams(n_frames=1, rows=15, cols=15, pixel_pitch=1.0,
                         psf_width=1.0, frame_dt=1.0, footprint=5,
                         birth_mean_intensity=8.0, birth_mean_x=7.0,
                         birth_mean_y=7.0, birth_var_intensity=4.0,
                         birth_var_position=4.0, birth_var_velocity=1.0,
                         drive_var_intensity=0.5, drive_var_x=0.3,
                         drive_var_y=0.7, survival_prob=0.6, birth_rate=0.3,
                         background=0.0, noise_var=1.0)
    a = 7.25
    frame = render_frame([np.array([a, 7.0, 7.0, 0.0, 0.0])], 0, params)
    filt = match_filter(frame, params)
    # a pixel-centred target in a noiseless frame is recovered exactly
    assert abs(filt.values[7, 7] - a) < 1e-9
    assert filter_energy(params) == pytest.approx(0.07958, abs=1e-5)


# ---------------------------------------------------------------------------
# Prior-data consistency of the track refresh kernel on its own
# ---------------------------------------------------------------------------

def test_track_refresh_prior_data_consistency():
    params = ModelParams(**{**TOY_THETA, "n_frames": 3})
    length = 3

    def draw_track(rng):
        states = [sample_initial_state(params, rng)]
        for _ in range(length - 1):
            states.append(sample_transition(states[-1], params, rng))
        return Track(0, np.array(states))

    def path_stats(track):
        st = track.states
        return (st[:, 0].mean(), st[:, 1].mean(), st[:, 3].mean(), st[0, 0])

    rng = np.random.default_rng(211)
    fwd = np.array([path_stats(draw_track(rng)) for _ in range(6000)])

    rng = np.random.default_rng(212)
    cfg = CsmcConfig()
    track = draw_track(rng)
    y = sample_images([track], params, rng)
    succ = np.empty((4000, 4))
    for i in range(len(succ)):
        track = csmc_refresh(track, [], y, params, cfg, rng)
        y = sample_images([track], params, rng)
        succ[i] = path_stats(track)

    pvals = [orc.two_sample_zscore(fwd[:, k], succ[:, k], ess_a=len(fwd))[1]
             for k in range(4)]
    assert min(pvals) > 0.01 / len(pvals)

    # a single-particle refresh must reproduce its reference bit for bit
    kept = csmc_refresh(track, [], y, params, CsmcConfig(n_particles=1),
                        np.random.default_rng(213))
    assert np.array_equal(kept.states, track.states)
    assert kept.tb == track.tb
