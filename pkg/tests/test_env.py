import numpy as np
import pytest
from scipy import integrate, stats as sst

from rwre_lab.env import (ArrayEnvironment, EnvModel, Environment, ModelError, beta_blocks, compute_W,
                          derive_seed, ladder_locations, pi_product, quenched_mean_hitting, require_limit_regime,
                          rho_moment, sample_Q_left, solve_kappa, tail_constant, velocity, w_finite)

MODELS = [(3.0, 1.5), (2.0, 1.0), (1.6, 1.0)]


def beta_moment_oracle(a, b, s):
    # E[((1 - w) / w)^s] for w ~ Beta(a, b), integrated directly with scipy
    f = lambda w: ((1 - w) / w) ** s * sst.beta.pdf(w, a, b)
    return integrate.quad(f, 0, 1, limit=400)[0]


@pytest.mark.parametrize("a,b", MODELS)
def test_moment_oracle_agrees_with_closed_form(a, b):
    m = EnvModel(a, b)
    for s in (0.3, 0.7, a - b):
        assert abs(beta_moment_oracle(a, b, s) - np.exp(m.log_moment(s))) < 1e-7
        assert abs(rho_moment(m, s) - np.exp(m.log_moment(s))) < 1e-9


@pytest.mark.parametrize("a,b", MODELS)
def test_kappa_is_a_minus_b(a, b):
    m = EnvModel(a, b)
    k = solve_kappa(m)
    assert abs(k - (a - b)) < 1e-6
    assert abs(rho_moment(m, k) - 1.0) < 1e-8


def test_recurrent_model_rejected():
    with pytest.raises(ModelError):
        EnvModel(1.0, 1.0)
    with pytest.raises(ModelError):
        EnvModel(-1.0, 1.0)


def test_regime_gate():
    require_limit_regime(1.5)
    with pytest.raises(ModelError, match="outside"):
        require_limit_regime(solve_kappa(EnvModel(5.0, 1.0)))


def test_velocity():
    v, pos = velocity(EnvModel(3.0, 1.5))
    assert pos and abs(v - 1.0 / 7.0) < 1e-15
    v, pos = velocity(EnvModel(1.6, 1.0))
    assert v == 0.0 and not pos
    # E rho -> 1 from below: speed -> 0
    v, _ = velocity(EnvModel(2.0 + 1e-9, 1.0))
    assert v < 1e-8


def test_environment_determinism_and_growth():
    m = EnvModel(3.0, 1.5)
    e1 = Environment(m, 7)
    e2 = Environment(m, 7)
    assert np.array_equal(e1.omega(-5000, 5000), e2.omega(-5000, 5000))
    first = e1.materialize(0, 10).copy()
    grown = e1.materialize(0, 100)
    assert np.array_equal(grown[:11], first)
    assert not np.array_equal(Environment(m, 8).omega(0, 10), first)


def test_site_mean_matches_beta_mean():
    m = EnvModel(3.0, 1.5)
    n = 100_000
    mu = 3.0 / 4.5
    sd = np.sqrt(sst.beta.var(3.0, 1.5) / n)
    for seed in (11, 12):
        w = Environment(m, seed).omega(0, n - 1)
        assert abs(w.mean() - mu) < 4 * sd


def test_derive_seed_paths_distinct():
    s = {derive_seed(1, i, j) for i in range(20) for j in range(20)}
    assert len(s) == 400
    assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)


def test_ladder_examples():
    env = ArrayEnvironment([2 / 3], right_fill=0.6)      # rho_0 = 0.5
    assert ladder_locations(env, 1).nu[1] == 1
    env = ArrayEnvironment([1 / 3, 2 / 3, 2 / 3], right_fill=0.6)   # rho = 2, 0.5, 0.5
    assert ladder_locations(env, 1).nu[1] == 3


def test_ladder_products_below_one():
    env = Environment(EnvModel(3.0, 1.5), 3)
    nu = ladder_locations(env, 500).nu
    lr = env.log_rho(0, int(nu[-1]))
    for i in range(1, len(nu)):
        a, b = int(nu[i - 1]), int(nu[i])
        partial = np.cumsum(lr[a:b])
        # strict ladder: the product from nu_{i-1} first drops below 1 at nu_i - 1
        assert partial[-1] < 0
        assert np.all(partial[:-1] >= 0)


def test_W_truncates_exactly():
    env = ArrayEnvironment([2 / 3], left_fill=1.0, right_fill=0.6)
    w, bound = compute_W(env, 0)
    assert w == pytest.approx(0.5, abs=1e-15)
    assert bound == 0.0


def test_pi_single_factor():
    env = Environment(EnvModel(3.0, 1.5), 4)
    assert pi_product(env, 5, 5) == pytest.approx(env.rho(5, 5)[0], rel=1e-14)
    assert pi_product(env, 5, 4) == 1.0
    assert w_finite(env, 2, 4) == pytest.approx(
        env.rho(4, 4)[0] * (1 + env.rho(3, 3)[0] * (1 + env.rho(2, 2)[0])), rel=1e-14)


def test_mean_W0_geometric_oracle():
    # E W_0 = sum_m (E rho)^m = 3 for Beta(3, 1.5)
    m = EnvModel(3.0, 1.5)
    rng = np.random.default_rng(2024)
    n, depth = 100_000, 256
    W = np.empty(n)
    omegas = m.sample_omega(rng, n * depth).reshape(n, depth)
    for i in range(n):
        env = ArrayEnvironment(omegas[i], offset=-depth + 1, left_fill=1.0)
        W[i], _ = compute_W(env, 0, tol=1e-12)
    se = W.std(ddof=1) / np.sqrt(n)
    assert abs(W.mean() - 3.0) < 4 * se


def test_beta_one_block_example():
    env = ArrayEnvironment([2 / 3], left_fill=1.0, right_fill=2 / 3)
    dec = beta_blocks(env, 1)
    assert dec.nu[1] == 1
    assert dec.beta[0] == pytest.approx(2.0, abs=1e-14)


def test_beta_at_least_block_length_and_truncation():
    env = Environment(EnvModel(3.0, 1.5), 9)
    dec = beta_blocks(env, 2000, tol=1e-10)
    assert np.all(dec.beta >= dec.lengths)
    assert np.all(dec.error <= 1e-10 * dec.beta)
    loose = beta_blocks(Environment(EnvModel(3.0, 1.5), 9), 2000, tol=1e-4)
    assert np.all(np.abs(loose.beta - dec.beta) <= 1e-4 * dec.beta + dec.error)


def test_quenched_mean_hitting_matches_w_sum():
    env = Environment(EnvModel(3.0, 1.5), 21)
    val, bound = quenched_mean_hitting(env, 50)
    lo = -20000
    rho = env.rho(lo, 49)
    w = np.array([np.sum(np.cumprod(rho[:j - lo + 1][::-1])) for j in range(0, 50)])
    assert val == pytest.approx(np.sum(1 + 2 * w), rel=1e-9)
    assert bound <= 1e-10 * val


def test_q_left_acceptance_and_tails():
    m = EnvModel(3.0, 1.5)
    n = 10_000
    w1 = np.empty(n)
    W = np.empty(n)
    for i in range(n):
        left = sample_Q_left(m, derive_seed(99, i), depth=64)
        rho = (1 - left) / left
        assert rho[-1] < 1.0
        assert np.all(np.cumsum(np.log(rho[::-1])) < 0)
        w1[i] = left[-1]
        W[i] = np.sum(np.cumprod(rho[::-1]))
    xs = np.arange(1, 9)
    surv = np.array([np.mean(W > x) for x in xs])
    ok = surv > 0
    slope = np.polyfit(xs[ok], np.log(surv[ok]), 1)[0]
    assert slope < 0
    w2 = np.array([sample_Q_left(m, derive_seed(98, i), depth=128)[-1] for i in range(n)])
    assert sst.ks_2samp(w1, w2).statistic < 0.02


def test_tail_constant_pareto_oracle():
    rng = np.random.default_rng(5)
    x = rng.pareto(1.5, 200_000) + 1.0        # P(X > x) = x^-1.5
    c0, (lo, hi) = tail_constant(x, 1.5)
    assert lo <= 1.0 <= hi
    assert abs(c0 - 1.0) < 0.1


def test_tail_constant_preconditions():
    with pytest.raises(ValueError):
        tail_constant(np.ones(10), 1.5)
    with pytest.raises(ValueError):
        tail_constant(-np.ones(5000), 1.5)


def test_beta_block_tail_constant_positive():
    from rwre_lab.env import q_blocks
    dec = q_blocks(EnvModel(3.0, 1.5), 31, 20_000)
    c0, _ = tail_constant(dec.beta, 1.5, band=(0.005, 0.05))
    assert np.isfinite(c0) and c0 > 0
