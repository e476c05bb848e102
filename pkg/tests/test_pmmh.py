import json
import math

import numpy as np
import pytest

from nmsmc.fom import THETA_STAR, gen_prbs, simulate
from nmsmc.pmmh import (Chain, PmmhConfig, Prior, battery_builder, conditional_acceptance_rate,
                        pmmh_run, prior_logdensity, select_num_particles, table_prior,
                        tune_and_run)

from oracles import conditional_acceptance_mc, metropolis_hastings

TS = 5e-4


def test_uniform_prior_examples():
    prior = table_prior()
    inside = prior_logdensity(prior, THETA_STAR.to_array())
    assert np.isfinite(inside)
    assert inside == pytest.approx(-np.sum(np.log(prior.hi - prior.lo)))
    outside = THETA_STAR.to_array()
    outside[0] = 0.2
    assert prior_logdensity(prior, outside) == -np.inf
    assert prior.marginal_density(0, [0.01])[0] == pytest.approx(1 / 0.095)


def test_box_bounds():
    prior = table_prior()
    np.testing.assert_allclose(prior.lo, [0.005, 0.05, 1.0, 300.0, 0.4, 0.4])
    np.testing.assert_allclose(prior.hi, [0.10, 0.5, 5.0, 500.0, 1.0, 1.0])
    assert prior.in_support(prior.hi) and prior.in_support(prior.lo)


def test_truncated_gaussian_prior():
    prior = table_prior("truncated_gaussian")
    np.testing.assert_allclose(prior.mean, (prior.lo + prior.hi) / 2)
    np.testing.assert_allclose(prior.sd, (prior.hi - prior.lo) / 4)
    assert prior.logdensity(prior.mean) == 0.0
    assert prior.logdensity(prior.hi + 1) == -np.inf
    rng = np.random.default_rng(0)
    draws = np.array([prior.sample(rng) for _ in range(4000)])
    assert np.all((draws >= prior.lo) & (draws <= prior.hi))
    # truncation at +-2 sd leaves the sd at about 0.88 of the untruncated value
    np.testing.assert_allclose(draws.std(0) / prior.sd, 0.880, atol=0.03)
    grid = np.linspace(prior.lo[3], prior.hi[3], 4001)
    assert np.trapezoid(prior.marginal_density(3, grid), grid) == pytest.approx(1.0, abs=1e-6)


def test_prior_rejects_bad_bounds():
    with pytest.raises(ValueError):
        Prior(lo=[1.0], hi=[1.0])
    with pytest.raises(ValueError):
        Prior(lo=[0.0], hi=[1.0], kind="beta")


def test_config_validation():
    with pytest.raises(ValueError):
        PmmhConfig(10, np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        PmmhConfig(10, -np.eye(2))
    with pytest.raises(ValueError):
        PmmhConfig(0, np.eye(2))


def _toy_prior():
    return Prior(lo=[-10.0], hi=[10.0], names=("mu",))


def test_flat_target_always_accepts():
    cfg = PmmhConfig(200, np.eye(1) * 0.01, seed=0, init=[0.0])
    chain = pmmh_run(_toy_prior(), None, None, cfg, log_likelihood=lambda theta, seed: 0.0)
    assert chain.accepted.all()


def test_outside_candidates_skip_likelihood():
    calls = []

    def loglik(theta, seed):
        calls.append(theta.copy())
        assert _toy_prior().in_support(theta)
        return 0.0

    cfg = PmmhConfig(300, np.eye(1) * 400.0, seed=1, init=[9.5])
    chain = pmmh_run(_toy_prior(), None, None, cfg, log_likelihood=loglik)
    outside = np.abs(chain.samples[:, 0]) > 10
    assert not outside.any()
    # initial evaluation plus one per in-support candidate
    assert 1 < len(calls) < 301


def test_rejections_copy_previous_state():
    y = np.random.default_rng(0).normal(1.0, 1.0, 20)

    def loglik(theta, seed):
        return float(-0.5 * np.sum((y - theta[0]) ** 2))

    chain = pmmh_run(_toy_prior(), None, None, PmmhConfig(500, np.eye(1), seed=2, init=[0.0]),
                     log_likelihood=loglik)
    prev_s, prev_l = np.r_[chain.theta0], chain.loglik0
    for s, ll, acc in zip(chain.samples, chain.loglik, chain.accepted):
        if not acc:
            np.testing.assert_array_equal(s, prev_s)
            assert ll == prev_l
        prev_s, prev_l = s, ll
    assert 0.1 < chain.acceptance_rate < 0.9


def _gaussian_toy(n=20, seed=0):
    y = np.random.default_rng(seed).normal(1.3, 1.0, n)
    return y, lambda mu: float(-0.5 * np.sum((y - mu) ** 2))


def exact_mh_comparison(iterations=10_000, n_chains=5):
    """Per-chain posterior means from pmmh_run with an exact likelihood and from the oracle."""
    y, logpost = _gaussian_toy()
    prior = _toy_prior()
    ours, theirs = [], []
    for c in range(n_chains):
        cfg = PmmhConfig(iterations, np.eye(1) * 0.25, seed=100 + c, init=[0.0])
        chain = pmmh_run(prior, None, None, cfg, log_likelihood=lambda t, s: logpost(t[0]))
        ours.append(chain.samples[1000:, 0])
        ref = metropolis_hastings(logpost, 0.0, 0.5, iterations, np.random.default_rng(200 + c))
        theirs.append(ref[1000:])
    return y, np.array(ours), np.array(theirs)


def test_exact_likelihood_matches_textbook_mh():
    y, ours, theirs = exact_mh_comparison()
    m1, m2 = ours.mean(1), theirs.mean(1)
    se = math.sqrt(m1.var(ddof=1) / len(m1) + m2.var(ddof=1) / len(m2))
    assert abs(m1.mean() - m2.mean()) <= 3 * se
    # both should also sit on the conjugate answer, N(ybar, 1/n)
    assert ours.mean() == pytest.approx(y.mean(), abs=0.05)
    assert ours.var() == pytest.approx(1 / len(y), rel=0.15)
    q = [0.1, 0.5, 0.9]
    np.testing.assert_allclose(np.quantile(ours, q), np.quantile(theirs, q), atol=0.05)


def test_standard_error_shrinks_with_chain_length():
    _, logpost = _gaussian_toy()
    prior = _toy_prior()

    def chain_means(M, n_chains=30):
        out = []
        for c in range(n_chains):
            cfg = PmmhConfig(M, np.eye(1) * 0.25, seed=M * 1000 + c, init=[1.3])
            out.append(pmmh_run(prior, None, None, cfg,
                                log_likelihood=lambda t, s: logpost(t[0])).samples[:, 0].mean())
        return np.std(out, ddof=1)

    ratio = chain_means(1000) / chain_means(2000)
    # standard error scales as M^(-1/2)
    assert math.sqrt(2) / 1.5 <= ratio <= math.sqrt(2) * 1.5


def test_pmmh_deterministic():
    _, logpost = _gaussian_toy()
    cfg = PmmhConfig(100, np.eye(1) * 0.25, seed=9)
    a = pmmh_run(_toy_prior(), None, None, cfg, log_likelihood=lambda t, s: logpost(t[0]))
    b = pmmh_run(_toy_prior(), None, None, cfg, log_likelihood=lambda t, s: logpost(t[0]))
    np.testing.assert_array_equal(a.samples, b.samples)


def test_pilot_covariance_entry():
    prior = table_prior()
    assert prior.marginal_sd()[0] ** 2 == pytest.approx((0.095 / math.sqrt(12)) ** 2, rel=1e-14)


def test_stuck_pilot_gives_jitter_covariance():
    # the likelihood forbids every move, so the pilot never accepts
    prior = table_prior()
    theta = THETA_STAR.to_array()

    def loglik(t, seed):
        return 0.0 if np.array_equal(t, theta) else -np.inf

    cfg = PmmhConfig(50, np.eye(6), seed=0, init=theta)
    chain = tune_and_run(prior, None, None, cfg, pilot_iterations=100, log_likelihood=loglik)
    sigma_hat = np.array(chain.tuning_meta["stage2"]["proposal_cov"])
    np.testing.assert_allclose(sigma_hat, 1e-10 * np.diag(prior.width ** 2), rtol=1e-12, atol=1e-25)
    assert chain.tuning_meta["stage1"]["acceptance_rate"] == 0.0
    assert len(chain) == 50


def test_tuning_starts_from_pilot_end():
    _, logpost = _gaussian_toy()
    prior = _toy_prior()
    cfg = PmmhConfig(300, np.eye(1), seed=4)
    chain = tune_and_run(prior, None, None, cfg, pilot_iterations=400,
                         log_likelihood=lambda t, s: logpost(t[0]))
    meta = chain.tuning_meta
    assert meta["stage1"]["iterations"] == 400 and meta["stage1"]["discarded"] == 200
    assert {"stage1", "stage2", "jitter"} <= set(meta)
    assert meta["stage2"]["acceptance_rate"] == chain.acceptance_rate


def test_chain_csv_roundtrip(tmp_path):
    _, logpost = _gaussian_toy()
    chain = pmmh_run(_toy_prior(), None, None, PmmhConfig(30, np.eye(1), seed=1),
                     log_likelihood=lambda t, s: logpost(t[0]))
    path = tmp_path / "chain.csv"
    chain.to_csv(path)
    assert path.read_text().splitlines()[0] == "iter,mu,loglik,accepted"
    back = Chain.from_csv(path)
    np.testing.assert_array_equal(back.samples, chain.samples)
    np.testing.assert_array_equal(back.accepted, chain.accepted)
    assert json.loads(path.with_suffix(".json").read_text())["acceptance_rate"] == chain.acceptance_rate



def test_conditional_acceptance_endpoints():
    rng = np.random.default_rng(0)
    assert conditional_acceptance_rate(np.full(100, -3.2), rng) == 1.0
    assert conditional_acceptance_rate([0.0] + [-np.inf] * 99, rng) == 0.0
    with pytest.raises(ValueError):
        conditional_acceptance_rate([1.0], rng)


def test_conditional_acceptance_lognormal():
    rng = np.random.default_rng(1)
    ours, ref = [], []
    for _ in range(400):
        log_z = rng.standard_normal(100)
        ours.append(conditional_acceptance_rate(log_z, rng))
        ref.append(conditional_acceptance_mc(log_z, rng))
    ours, ref = np.array(ours), np.array(ref)
    se = math.sqrt(ours.var(ddof=1) / len(ours) + ref.var(ddof=1) / len(ref))
    assert abs(ours.mean() - ref.mean()) <= 3 * se


def test_select_rejects_bad_arguments():
    prior = table_prior()
    with pytest.raises(ValueError):
        select_num_particles(prior, None, None, candidate_Ns=())
    with pytest.raises(ValueError):
        select_num_particles(prior, None, None, n_reps=1)


def test_acceptance_non_decreasing_in_particles():
    T = 930
    builder = battery_builder(TS, T, 0.002, 0.02)
    data = simulate(builder(THETA_STAR.to_array()), gen_prbs(T + 1, 1.0, TS, 1), seed=1)
    chosen, report = select_num_particles(table_prior(), builder, data, n_reps=100,
                                          candidate_Ns=(16, 64, 128), threshold=0.1, seed=3)
    means = [report["candidates"][N]["mean"] for N in (16, 64, 128)]
    inversions = sum(b < a for a, b in zip(means, means[1:]))
    assert inversions <= 1
    assert chosen is None or report["candidates"][chosen]["mean"] >= 0.1
    assert len(report["thetas"]) == 3


def test_tuned_stage_accepts_more_often(base_run):
    # three independently seeded chains on the base scenario
    rates = base_run["summary_data"].extra["acceptance"]
    assert len(rates) == 3
    assert all(r["stage2"] > r["stage1"] for r in rates)
