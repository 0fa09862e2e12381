import numpy as np
import pytest
from scipy import stats as sst

from rwre_lab.env import ArrayEnvironment, EnvModel, Environment, beta_blocks, derive_seed, q_blocks, tail_constant
from rwre_lab.pathmetric import d_uniform
from rwre_lab.runners import identity_gap
from rwre_lab.walk import (CenteringTable, StepBudgetError, build_chi_paths, build_T_path, coupled_exponentials,
                           escape_probabilities, hitting_times_many, interpolated_T_path, phi_path,
                           positions_many, simulate_hitting_times, simulate_steps)

M = EnvModel(3.0, 1.5)
V = 1.0 / 7.0


def right_env():
    return ArrayEnvironment(np.zeros(0), left_fill=1.0, right_fill=1.0)


def table(kappa, v=V):
    return CenteringTable(kappa=kappa, v=v, nubar=1.0, nubar_se=0.0, betabar=1.0 / v if v else np.inf,
                          betabar_se=0.0)


def test_all_right_walk():
    tr = simulate_hitting_times(right_env(), 50, 1)
    assert np.array_equal(tr.T, np.arange(51))


def test_hitting_times_reproducible_and_batch_consistent():
    env = Environment(M, 5)
    seeds = [derive_seed(3, r) for r in range(20)]
    single = [simulate_hitting_times(env, 200, s).T[-1] for s in seeds]
    again = [simulate_hitting_times(Environment(M, 5), 200, s).T[-1] for s in seeds]
    assert single == again
    assert np.array_equal(hitting_times_many(env, 200, seeds), single)
    pos = positions_many(env, 1000, seeds)
    assert np.array_equal(pos, [simulate_steps(env, 1000, s).traj[-1] for s in seeds])


def test_step_budget():
    with pytest.raises(StepBudgetError):
        simulate_hitting_times(Environment(M, 5), 10_000, 1, max_steps=100)
    assert hitting_times_many(Environment(M, 5), 10_000, [1], max_steps=100)[0] == -1


def test_quenched_mean_of_first_block():
    env = Environment(M, 17)
    dec = beta_blocks(env, 1)
    T = hitting_times_many(env, int(dec.nu[1]), [derive_seed(4, r) for r in range(10_000)]).astype(float)
    se = T.std(ddof=1) / np.sqrt(len(T))
    assert abs(T.mean() - dec.beta[0]) < 4 * se


def test_speed_oracle():
    n = 100_000
    vals = np.array([simulate_hitting_times(Environment(M, derive_seed(8, e)), n, derive_seed(9, e)).T[-1] / n
                     for e in range(40)])
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    assert abs(vals.mean() - 7.0) < 4 * se


def test_T_path_small_kappa_plug_in():
    tr = simulate_hitting_times(right_env(), 200, 1)
    eps, k = 0.01, 0.6
    p = build_T_path(tr, eps, table(k, 0.0))
    t = np.linspace(0, 1, 77)
    assert np.allclose(p(t), eps ** (1 / k) * np.floor(t / eps + 1e-9), rtol=1e-13, atol=1e-15)


def test_T_path_large_kappa_grid_values():
    tr = simulate_hitting_times(Environment(M, 2), 1000, 3)
    eps = 0.001
    p = build_T_path(tr, eps, table(1.5))
    n = np.arange(0, 1000, 37)
    expect = eps ** (1 / 1.5) * (tr.T[n] - n / V)
    assert np.allclose(p(eps * n), expect, rtol=1e-12, atol=1e-12)


def test_T_path_kappa_one_centering():
    m1 = EnvModel(2.0, 1.0)
    dec = q_blocks(m1, 4, 20_000)
    c0, _ = tail_constant(dec.beta, 1.0)
    cent = CenteringTable(kappa=1.0, v=0.0, nubar=float(dec.lengths.mean()), nubar_se=0.0, betabar=np.inf,
                          betabar_se=0.0, c0=c0, beta_sample=dec.beta)
    tr = simulate_hitting_times(Environment(m1, 6), 200, 7)
    eps = 0.005
    p = build_T_path(tr, eps, cent)
    n = np.arange(0, 200, 13)
    D = cent.Dprime(1 / eps) / cent.nubar
    assert np.allclose(p(eps * n), eps * (tr.T[n] - n * D), rtol=1e-12, atol=1e-12)
    x = 1234.5
    d = cent.delta(x)
    assert d * cent.D(d) == pytest.approx(x, rel=1e-6)


def test_chi_and_running_max():
    eps = 0.001
    tr = simulate_steps(Environment(M, 12), 1000, 4)
    chi, chis = build_chi_paths(tr, eps, table(1.5))
    scale = V ** (-1 - 1 / 1.5) * eps ** (1 / 1.5)
    gap = np.max(tr.running_max() - tr.traj) * scale
    assert d_uniform(chi, chis) == pytest.approx(gap, rel=1e-12, abs=1e-12)


def test_chi_all_right_env():
    eps = 0.01
    tr = simulate_steps(right_env(), 100, 1)
    chi, _ = build_chi_paths(tr, eps, table(1.5))
    k = np.arange(0, 100, 7)
    scale = V ** (-1 - 1 / 1.5) * eps ** (1 / 1.5)
    assert np.allclose(chi(eps * k), scale * k * (1 - V), rtol=1e-12)


def test_interpolated_path_matches_on_grid():
    tr = simulate_hitting_times(Environment(M, 14), 500, 2)
    eps = 0.002
    a = build_T_path(tr, eps, table(1.5))
    b = interpolated_T_path(tr, eps, table(1.5))
    g = eps * np.arange(0, 500)
    assert np.allclose(a(g), b(g), rtol=1e-12, atol=1e-12)


def test_phi_inverse_and_running_max():
    tr = simulate_steps(Environment(M, 15), 5000, 3)
    phi = phi_path(tr)
    x = np.arange(0, tr.n + 1, 5)
    assert np.allclose(phi(tr.T[x].astype(float)), x)
    t = np.arange(0, int(tr.T[-1]) + 1)
    assert np.max(np.abs(tr.running_max()[t] - phi(t.astype(float)))) <= 1.0


def test_small_kappa_inversion_identity():
    ms = EnvModel(1.6, 1.0)
    env = Environment(ms, 77)
    for eps in (1e-2, 1e-3):
        ek = eps ** 0.6
        sup, dev = identity_gap(env, ek, 0.6, derive_seed(1, int(1 / eps)))
        assert abs(sup - ek) <= 1e-12 * ek
        assert dev <= 1e-12 * ek


def test_escape_probabilities_and_coupling():
    env = Environment(M, 23)
    dec = beta_blocks(env, 40)
    p = escape_probabilities(env, dec.nu)
    one = np.nonzero(dec.lengths == 1)[0]
    assert np.allclose(p[one], env.omega(0, int(dec.nu[-1]))[dec.nu[one]])
    R = 4000
    visits = np.empty((R, 40))
    tau = np.empty((R, 40))
    M_ = np.empty(R)
    for r in range(R):
        s = derive_seed(6, r)
        tr = simulate_hitting_times(env, int(dec.nu[-1]), s, ladder=dec.nu)
        visits[r] = tr.visits[:40]
        tau[r] = coupled_exponentials(p, tr.visits, s)
        M_[r] = tr.T[-1] - np.sum(dec.beta * tau[r])
    # geometric oracle: mean number of visits to nu_{i-1} is 1 / p_i
    se = visits.std(axis=0, ddof=1) / np.sqrt(R)
    assert np.all(np.abs(visits.mean(axis=0) - 1 / p) < 4.5 * se + 1e-12)
    c = -np.log1p(-p)
    assert np.array_equal(np.floor(tau / c), visits - 1)
    assert sst.kstest(tau[:, 0], "expon").statistic < 0.03
    assert abs(M_.mean()) < 4 * M_.std(ddof=1) / np.sqrt(R)
