"""Acceptance criteria, one test per criterion.

Each test prints a ``CRITERION <n> PASS|FAIL`` line with the measured values
before asserting, so the verdicts show up in ``pytest -v`` output.  Run
``python tests/test_acceptance.py`` for the same report outside pytest.
"""

import math
import time

import numpy as np
import pytest

from nmsmc.fom import THETA_STAR, BatteryTheta, build_model, gen_prbs, impedance, linear_model, simulate
from nmsmc.pmmh import PmmhConfig, Prior, conditional_acceptance_rate, pmmh_run
from nmsmc.scenarios import BUILTIN_SCENARIOS, run_scenario
from nmsmc.smc import FilterConfig, draw_randomness, run_filter, systematic_resample

from oracles import (conditional_acceptance_mc, dense_filter, impedance_reference, kalman_loglik,
                     metropolis_hastings)

TS = 5e-4


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        line = f"CRITERION {number} {'PASS' if ok else 'FAIL'}: {detail}"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def _base_data(T=930, seed=1):
    model = build_model(THETA_STAR, TS, T, 0.002, 0.02)
    return model, simulate(model, gen_prbs(T + 1, 1.0, TS, seed), seed=seed)


def test_c01_tree_matches_dense_filter(report):
    start = time.perf_counter()
    N, T = 64, 200
    model, data = _base_data(T)
    normals, uniforms = draw_randomness(2024, T, N, 2, "systematic")
    out = run_filter(model, data, FilterConfig(N, "locally_optimal", "systematic", seed=2024))
    ll, paths = dense_filter(model, data, normals, uniforms)
    ll_err = abs(out.log_likelihood - ll)
    path_err = max(np.max(np.abs(out.final_tree.extract_path(i) - paths[i])) for i in range(N))
    elapsed = time.perf_counter() - start
    report(1, ll_err <= 1e-10 and path_err <= 1e-12 and elapsed < 5,
           f"|dlogp|={ll_err:.2e} (<=1e-10), max path err={path_err:.2e} (<=1e-12), {elapsed:.2f}s (<5s)")


def test_c02_unbiased_against_kalman(report):
    start = time.perf_counter()
    T, a, sx, sy = 50, 0.8, 0.5, 0.4
    coeff = np.zeros((1, T + 1))
    coeff[0, 0] = a
    model = linear_model(coeff, [0.0], [1.0], 0.0, sx, sy, T)
    data = simulate(model, np.zeros(T + 1), seed=0)
    exact = kalman_loglik(a, sx, sy, data.y)
    ratios = np.array([math.exp(run_filter(model, data, FilterConfig(512, "bootstrap", seed=s)).log_likelihood
                                - exact) for s in range(200)])
    se = ratios.std(ddof=1) / math.sqrt(len(ratios))
    elapsed = time.perf_counter() - start
    report(2, abs(ratios.mean() - 1) <= 3 * se and elapsed < 30,
           f"mean ratio={ratios.mean():.4f}, 3*stderr={3 * se:.4f}, {elapsed:.1f}s (<30s)")


def test_c03_systematic_resampling(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    N = 128
    bad_counts = 0
    for _ in range(1000):
        w = rng.dirichlet(np.full(N, rng.uniform(0.05, 5)))
        counts = np.bincount(systematic_resample(w, rng.random()), minlength=N)
        target = N * w
        bad_counts += int(np.any((counts < np.floor(target - 1e-9)) | (counts > np.ceil(target + 1e-9))))
    worst = 0.0
    n_vec, n_idx = 10, 10
    for _ in range(n_vec):
        w = rng.dirichlet(np.ones(n_idx))
        counts = np.array([np.bincount(systematic_resample(w, u), minlength=n_idx)
                           for u in rng.random(10_000)])
        se = counts.std(axis=0, ddof=1) / math.sqrt(len(counts))
        dev = np.abs(counts.mean(axis=0) - n_idx * w)
        # a zero stderr means the count is deterministic and must be exact
        z = np.where(se > 0, dev / np.where(se > 0, se, 1), np.where(dev < 1e-9, 0.0, np.inf))
        worst = max(worst, float(z.max()))
    elapsed = time.perf_counter() - start
    report(3, bad_counts == 0 and worst <= 3 and elapsed < 10,
           f"vectors with out-of-range counts={bad_counts}/1000, worst |dev|/stderr={worst:.2f} (<=3), "
           f"{elapsed:.1f}s (<10s)")


def test_c04_variance_ordering(report):
    start = time.perf_counter()
    model, data = _base_data()
    var = {}
    for proposal in ("locally_optimal", "bootstrap"):
        ll = [run_filter(model, data, FilterConfig(128, proposal, seed=s)).log_likelihood
              for s in range(100)]
        var[proposal] = np.var(ll, ddof=1)
    elapsed = time.perf_counter() - start
    report(4, var["locally_optimal"] < var["bootstrap"] and elapsed < 300,
           f"var locally optimal={var['locally_optimal']:.3f} < bootstrap={var['bootstrap']:.3f}, "
           f"{elapsed:.1f}s (<300s)")


def test_c05_tree_growth_bound(report):
    start = time.perf_counter()
    model, data = _base_data()
    bound = 930 + 12 * 128 * math.log(128)
    finals = [int(run_filter(model, data, FilterConfig(128, "locally_optimal", "multinomial", seed=s))
                  .node_count_trace[-1]) for s in range(20)]
    elapsed = time.perf_counter() - start
    report(5, max(finals) <= bound and elapsed < 120,
           f"max final node count={max(finals)} (<= {bound:.0f}), mean={np.mean(finals):.0f}, "
           f"{elapsed:.1f}s (<120s)")


def test_c06_base_identifiability(report, base_run):
    summary = base_run["summary_data"]
    names = list(summary.names)
    i_r, i_a1 = names.index("R_inf"), names.index("alpha1")
    mean_r = summary["R_inf"]["mean"]
    ov_c2, ov_r = summary["C2"]["overlap"], summary["R_inf"]["overlap"]
    rho = summary.correlation[i_r, i_a1]
    checks = {
        "a": 0.007 <= mean_r <= 0.015,
        "b": ov_c2 >= 0.7 and ov_r <= 0.3,
        "c": abs(rho) > 0.5,
    }
    report(6, all(checks.values()),
           f"(a) mean R_inf={mean_r:.5f} in [0.007, 0.015] {'ok' if checks['a'] else 'no'}; "
           f"(b) overlap C2={ov_c2:.3f} (>=0.7), R_inf={ov_r:.3f} (<=0.3) {'ok' if checks['b'] else 'no'}; "
           f"(c) corr(R_inf, alpha1)={rho:+.3f} (|.|>0.5) {'ok' if checks['c'] else 'no'}")


def test_c07_data_length_effect(report, tmp_path):
    start = time.perf_counter()
    sd = {}
    for name in ("tlen_635", "tlen_1890"):
        run = run_scenario(BUILTIN_SCENARIOS[name], tmp_path / name, seed=1)
        sd[name] = run["summary_data"]["R_inf"]["sd"]
    elapsed = time.perf_counter() - start
    report(7, sd["tlen_1890"] < sd["tlen_635"] and elapsed <= 3600,
           f"sd(R_inf) T=1890: {sd['tlen_1890']:.3g} < T=635: {sd['tlen_635']:.3g}, {elapsed / 60:.1f} min (<=60)")


def test_c08_exact_likelihood_mh(report):
    start = time.perf_counter()
    y = np.random.default_rng(8).normal(0.7, 1.0, 25)

    def logpost(mu):
        return float(-0.5 * np.sum((y - mu) ** 2))

    prior = Prior(lo=[-10.0], hi=[10.0], names=("mu",))
    ours, theirs = [], []
    for c in range(5):
        cfg = PmmhConfig(10_000, np.eye(1) * 0.16, seed=c, init=[0.0])
        ours.append(pmmh_run(prior, None, None, cfg, log_likelihood=lambda t, s: logpost(t[0]))
                    .samples[1000:, 0].mean())
        theirs.append(metropolis_hastings(logpost, 0.0, 0.4, 10_000,
                                          np.random.default_rng(50 + c))[1000:].mean())
    ours, theirs = np.array(ours), np.array(theirs)
    se = math.sqrt(ours.var(ddof=1) / 5 + theirs.var(ddof=1) / 5)
    diff = abs(ours.mean() - theirs.mean())
    elapsed = time.perf_counter() - start
    report(8, diff <= 3 * se and elapsed < 60,
           f"posterior mean {ours.mean():.4f} vs oracle {theirs.mean():.4f}, |diff|={diff:.4f} "
           f"(<= 3*stderr={3 * se:.4f}), {elapsed:.1f}s (<60s)")


def test_c09_conditional_acceptance(report):
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    perfect = conditional_acceptance_rate(np.full(100, -1234.5), rng)
    degenerate = conditional_acceptance_rate([0.0] + [-np.inf] * 99, rng)
    ours = np.array([conditional_acceptance_rate(z, rng) for z in rng.standard_normal((500, 100))])
    ref = np.array([conditional_acceptance_mc(z, rng) for z in rng.standard_normal((500, 100))])
    se = math.sqrt(ours.var(ddof=1) / len(ours) + ref.var(ddof=1) / len(ref))
    diff = abs(ours.mean() - ref.mean())
    elapsed = time.perf_counter() - start
    report(9, perfect == 1.0 and degenerate == 0.0 and diff <= 3 * se and elapsed < 60,
           f"equal estimates={perfect:.0%}, degenerate={degenerate:.0%}, log-normal "
           f"{ours.mean():.4f} vs direct MC {ref.mean():.4f} (|diff|={diff:.4f} <= {3 * se:.4f}), "
           f"{elapsed:.2f}s (<60s)")


def test_c10_impedance(report):
    start = time.perf_counter()
    mag_2k = abs(impedance(THETA_STAR, 2 * np.pi * 2000))
    ok_mag = abs(mag_2k - 0.01) <= 0.05 * 0.01
    # computed values agree with the polar-form oracle down to 0.1 mHz
    freqs = np.logspace(-4, np.log10(2000), 60)
    ours = impedance(THETA_STAR, 2 * np.pi * freqs)
    ref = np.array([impedance_reference(*THETA_STAR.to_array(), 2 * np.pi * f) for f in freqs])
    ok_oracle = np.max(np.abs(ours - ref) / np.abs(ref)) <= 1e-12
    # the low-frequency phase heads to the Warburg value -45 deg * alpha2 / 0.5
    limits = []
    for a2 in (0.5, 0.6, 0.8):
        theta = BatteryTheta(0.01, 0.2, 3.0, 400.0, 0.8, a2)
        phases = np.degrees(np.angle(impedance(theta, 2 * np.pi * np.logspace(-4, -16, 13))))
        target = -45.0 * a2 / 0.5
        limits.append((a2, phases[0], phases[-1], target,
                       abs(phases[-1] - target) <= 0.5 and np.all(np.diff(np.abs(phases - target)) <= 1e-9)))
    ok_phase = all(item[-1] for item in limits)
    elapsed = time.perf_counter() - start
    detail = "; ".join(f"alpha2={a:.1f}: phase {p0:.1f} deg at 0.1 mHz -> {p1:.2f} (target {t:.0f})"
                       for a, p0, p1, t, _ in limits)
    report(10, ok_mag and ok_oracle and ok_phase and elapsed < 1,
           f"|Z(2 kHz)|={mag_2k:.5f} (0.01 +-5%); oracle match {'ok' if ok_oracle else 'no'}; {detail}; "
           f"{elapsed * 1e3:.0f} ms (<1s)")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v", "-s"]))
