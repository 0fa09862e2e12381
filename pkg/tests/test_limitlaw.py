import numpy as np
import pytest
from scipy import stats as sst

from rwre_lab.env import EnvModel, LadderDecomposition, q_blocks, tail_constant
from rwre_lab.limitlaw import (PointPattern, W_delta_path, W_path, build_N_eps, build_S_eps, first_passage_times,
                               gamma_limit, gamma_truncation, invert_path, poisson_mean_count, project_t,
                               sample_H, sample_poisson_pattern, sample_Z, sample_Z_marginal)
from rwre_lab.pathmetric import CadlagPath, d_uniform
from rwre_lab.walk import CenteringTable, block_statistics


def test_N_eps_single_block():
    dec = LadderDecomposition(nu=np.array([0, 1, 2, 3, 4]), beta=np.array([2.0, 5.0, 1.0, 9.0]))
    pat = build_N_eps(dec, 0.25, 0.5)
    assert pat.x[0] == pytest.approx(0.125) and pat.t[0] == pytest.approx(0.25)
    assert pat.count(1.0) == int(np.sum(dec.beta > 1.0 * 0.25 ** -2))


def test_N_eps_counts_match_definition():
    dec = q_blocks(EnvModel(3.0, 1.5), 2, 1000)
    eps, kap, delta = 1e-3, 1.5, 0.5
    pat = build_N_eps(dec, eps, kap)
    assert pat.count(delta) == int(np.sum(dec.beta > delta * eps ** (-1 / kap)))


def test_poisson_mean_and_magnitudes():
    assert poisson_mean_count(1.0, 1.0, 1.0, 1.0) == 1.0
    pat = sample_poisson_pattern(1e5, 1.5, 1.0, 1.0, 3)
    assert np.all(pat.x >= 1.0)
    assert abs(len(pat) - 1e5 / 1.5) < 4 * np.sqrt(1e5 / 1.5)
    # P(x > s) = s^-kappa above the floor
    assert sst.kstest(pat.x, lambda s: 1 - s ** -1.5).statistic < 0.01


def test_W_delta_single_point_and_floor():
    pat = PointPattern([2.0], [0.3])
    w = W_delta_path(pat, np.array([0.7]), 0.0)
    t = np.linspace(0, 1, 101)
    assert np.allclose(w(t), np.where(t >= 0.3, 1.4, 0.0))
    z = W_delta_path(pat, np.array([0.7]), 5.0)
    assert d_uniform(z, CadlagPath.zero(1.0)) == 0.0


def test_W_path_matches_truncated_and_empty():
    rng = np.random.default_rng(1)
    pat = sample_poisson_pattern(1.0, 0.6, 1e-3, 1.0, rng)
    tau = rng.exponential(size=len(pat))
    w, _ = W_path(pat, tau)
    assert d_uniform(w, W_delta_path(pat, tau, 1e-3)) == 0.0
    empty, _ = W_path(PointPattern([], [], 0.0, 1.0), np.zeros(0))
    assert d_uniform(empty, CadlagPath.zero(1.0)) == 0.0


def test_mean_W_delta_large_kappa():
    lam, kap, delta = 1.0, 1.5, 0.05
    rng = np.random.default_rng(2)
    v = np.empty(10_000)
    for i in range(len(v)):
        pat = sample_poisson_pattern(lam, kap, delta, 1.0, rng)
        v[i] = W_delta_path(pat, rng.exponential(size=len(pat)), delta)(1.0)
    expect = lam * delta ** (1 - kap) / (kap - 1)
    assert abs(v.mean() - expect) < 4 * v.std(ddof=1) / np.sqrt(len(v))


def test_small_jump_integral():
    lam, kap, lo, hi = 1.0, 0.6, 1e-4, 1e-2
    rng = np.random.default_rng(3)
    diff = np.empty(2000)
    for i in range(len(diff)):
        pat = sample_poisson_pattern(lam, kap, lo, 1.0, rng)
        tau = rng.exponential(size=len(pat))
        full, _ = W_path(pat, tau)
        diff[i] = d_uniform(full, W_delta_path(pat, tau, hi))
    expect = lam * (hi ** (1 - kap) - lo ** (1 - kap)) / (1 - kap)
    assert abs(diff.mean() - expect) < 4 * diff.std(ddof=1) / np.sqrt(len(diff))


def test_H_samples():
    pat = PointPattern([1.7], [0.2])
    mu = sample_H(pat, 0.0, 1, 5)
    assert len(mu) == 1
    assert d_uniform(mu.paths[0], sample_H(pat, 0.0, 1, 5).paths[0]) == 0.0
    vals = project_t(sample_H(pat, 0.0, 3000, 6), 1.0)
    assert sst.kstest(vals / 1.7, "expon").statistic < 0.03
    big = sample_poisson_pattern(1.0, 1.5, 0.01, 1.0, 7)
    a = project_t(sample_H(big, 0.01, 10_000, 8), 1.0)
    b = project_t(sample_H(big, 0.01, 10_000, 9), 1.0)
    assert sst.ks_2samp(a, b).statistic < 0.03


def test_Z_small_kappa_nondecreasing():
    z = sample_Z(1.0, 0.6, 1e-3, 1.0, 4)
    assert z(0.0) == 0.0
    assert np.all(np.diff(z.right) >= 0) and np.all(z.right[1:] >= z.left[1:])


def test_Z_mean_zero_large_kappa():
    z = sample_Z_marginal(1.0, 1.5, 0.01, 1.0, 10_000, 5)
    assert abs(z.mean()) < 4 * z.std(ddof=1) / np.sqrt(len(z))
    # path and marginal samplers agree in law
    zp = np.array([sample_Z(1.0, 1.5, 0.01, 1.0, s)(1.0) for s in range(3000)])
    assert sst.ks_2samp(z, zp).statistic < 0.04


def test_S_eps_small_kappa():
    dec = LadderDecomposition(nu=np.arange(101), beta=np.linspace(1, 3, 100))
    tau = np.linspace(0.5, 1.5, 100)
    cent = CenteringTable(kappa=0.6, v=0.0, nubar=1.0, nubar_se=0.0, betabar=np.inf, betabar_se=0.0)
    eps = 0.01
    s = build_S_eps(dec, eps, tau, cent)
    assert s(eps) == pytest.approx(eps ** (1 / 0.6) * dec.beta[0] * tau[0], rel=1e-13)
    assert s(1.0) == pytest.approx(eps ** (1 / 0.6) * np.sum(dec.beta * tau), rel=1e-12)


def test_gamma_small_kappa_zero():
    assert gamma_limit(0.6, 0.1, 2.0) == 0.0


def test_gamma_truncation_approaches_limit():
    m = EnvModel(3.0, 1.5)
    dec = q_blocks(m, 11, 200_000)
    st = block_statistics(dec, 1.5, tail_frac=0.001)
    # x^kappa Q(beta > x) approaches C0 slowly from below, so C0 is read off the deepest band
    c0, _ = tail_constant(dec.beta, 1.5, band=(0.0002, 0.002))
    cent = CenteringTable(kappa=1.5, v=1 / 7, nubar=st["nubar"], nubar_se=0.0, betabar=st["betabar"],
                          betabar_se=0.0, c0=c0, beta_sample=dec.beta)
    delta = 1.0
    seq = [gamma_truncation(1.5, eps, delta, cent) for eps in (1e-2, 1e-3, 1e-4)]
    lim = gamma_limit(1.5, delta, c0)
    assert abs(seq[-1] - lim) <= 0.1 * lim


def test_invert_path_examples():
    x = CadlagPath.linear([0, 1], [0, 2])
    inv = invert_path(x)
    t = np.linspace(0, 2, 41)
    assert np.allclose(inv(t), t / 2)
    y = CadlagPath.linear([0, 0.3, 1], [0, 0.9, 1.2])
    back = invert_path(invert_path(y))
    g = np.linspace(0, 1, 57)
    assert np.allclose(back(g), y(g))


def test_invert_step_path_grid_scan():
    rng = np.random.default_rng(6)
    eps = 0.05
    times = eps * np.arange(20)
    vals = np.cumsum(np.concatenate([[0.0], rng.exponential(size=19)]))
    x = CadlagPath.step(times, vals, 1.0)
    inv = invert_path(x)
    fine = np.linspace(0, 1, 100_001)
    xv = x(fine)
    for level in np.linspace(0.01, vals[-1] - 0.01, 50):
        brute = fine[xv <= level].max()
        assert abs(inv(level) - brute) <= 1e-5 + 1e-12


def test_first_passage_examples():
    pat = PointPattern([0.5, 0.7], [0.2, 0.4], 0.0, 10.0)
    tau = np.ones((1, 2))
    assert first_passage_times(pat, tau)[0] == pytest.approx(0.4)
    assert first_passage_times(pat, tau, rate=1.0)[0] == pytest.approx(0.4)
    one = PointPattern([0.5], [0.2], 0.0, 10.0)
    assert first_passage_times(one, np.ones((1, 1)), rate=0.25)[0] == pytest.approx(2.0)
    assert first_passage_times(one, np.ones((1, 1)), rate=5.0)[0] == pytest.approx(0.2)
    assert first_passage_times(one, np.ones((1, 1)))[0] == np.inf
