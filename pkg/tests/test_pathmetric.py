import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numba import njit

from rwre_lab.pathmetric import (CadlagPath, completed_graph, compose, d_infty, d_J1, d_M1, d_uniform,
                                 m1_decide, prohorov, prohorov_from_matrix, reflect_path, shift_linear,
                                 time_change_lambda_eps)
from rwre_lab.runners import random_step_path, vignette_paths

TOL = 1e-9


# ---------------------------------------------------------------------------
# brute-force M1 oracle: sample both completed graphs densely and solve the
# discrete Frechet recursion exactly (max ground metric)


def dense_graph(x, h):
    u, v = completed_graph(x)
    pts_u, pts_v = [u[:1]], [v[:1]]
    for i in range(len(u) - 1):
        L = max(abs(u[i + 1] - u[i]), abs(v[i + 1] - v[i]))
        k = max(1, int(np.ceil(L / h)))
        s = np.arange(1, k + 1) / k
        pts_u.append(u[i] + s * (u[i + 1] - u[i]))
        pts_v.append(v[i] + s * (v[i + 1] - v[i]))
    return np.concatenate(pts_u), np.concatenate(pts_v)


@njit(cache=True)
def discrete_frechet(pu, pv, qu, qv):
    n, m = len(pu), len(qu)
    prev = np.empty(m)
    cur = np.empty(m)
    for i in range(n):
        for j in range(m):
            d = max(abs(pu[i] - qu[j]), abs(pv[i] - qv[j]))
            if i == 0 and j == 0:
                best = d
            elif i == 0:
                best = max(cur[j - 1], d)
            elif j == 0:
                best = max(prev[j], d)
            else:
                best = max(min(prev[j], prev[j - 1], cur[j - 1]), d)
            cur[j] = best
        prev, cur = cur, prev
    return prev[m - 1]


def m1_oracle(x, y, h):
    pu, pv = dense_graph(x, h)
    qu, qv = dense_graph(y, h)
    return discrete_frechet(pu, pv, qu, qv)


def half_jumps(delta=0.01):
    x = CadlagPath.step([0, 0.5], [0.0, 1.0], 1.0)
    y = CadlagPath.step([0, 0.5 - delta, 0.5 + delta], [0.0, 0.5, 1.0], 1.0)
    return x, y


# ---------------------------------------------------------------------------


def test_completed_graph_unit_jump():
    u, v = completed_graph(CadlagPath.step([0, 0.5], [0.0, 1.0], 1.0))
    assert np.array_equal(u, [0, 0.5, 0.5, 1.0])
    assert np.array_equal(v, [0, 0, 1, 1])


def test_completed_graph_continuous_and_jump_count():
    x = CadlagPath.linear([0, 0.3, 1.0], [0, 2.0, -1.0])
    u, v = completed_graph(x)
    assert np.all(np.diff(u) > 0)
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = random_step_path(rng)
        u, v = completed_graph(p)
        assert int(np.sum(np.diff(u) == 0)) == p.jump_count()


def test_half_jumps_against_brute_force():
    x, y = half_jumps()
    m1 = d_M1(x, y, tol=TOL)
    assert m1 <= 0.01 + TOL
    assert abs(m1 - m1_oracle(x, y, 1e-4)) <= 2e-4
    assert abs(d_J1(x, y, tol=TOL) - 0.5) <= 1e-6


def test_m1_matches_brute_force_on_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(15):
        x, y = random_step_path(rng, jumps=4), random_step_path(rng, jumps=4)
        assert abs(d_M1(x, y, tol=1e-7) - m1_oracle(x, y, 2e-3)) <= 4e-3


def test_m1_linear_paths_against_brute_force():
    x = CadlagPath.linear([0, 0.4, 1.0], [0.0, 1.0, 0.2])
    y = CadlagPath.step([0, 0.3, 0.7], [0.1, 0.9, 0.3], 1.0)
    assert abs(d_M1(x, y, tol=1e-8) - m1_oracle(x, y, 1e-3)) <= 2e-3


def test_zero_self_distance():
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = random_step_path(rng)
        assert d_M1(x, x) == 0 and d_J1(x, x) == 0 and d_uniform(x, x) == 0


paths = st.builds(lambda s: random_step_path(np.random.default_rng(s)), st.integers(0, 2 ** 32 - 1))


@settings(max_examples=60, deadline=None)
@given(paths, paths)
def test_symmetry_ordering_endpoint(x, y):
    m1, j1, u = d_M1(x, y, tol=TOL), d_J1(x, y, tol=TOL), d_uniform(x, y)
    assert m1 == d_M1(y, x, tol=TOL) and j1 == d_J1(y, x, tol=TOL) and u == d_uniform(y, x)
    assert m1 <= j1 + TOL and j1 <= u + TOL
    assert m1 >= abs(x(1.0) - y(1.0)) - TOL
    assert m1 >= abs(x(0.0) - y(0.0)) - TOL


@settings(max_examples=60, deadline=None)
@given(paths, paths, paths)
def test_triangle(x, y, z):
    for f in (lambda a, b: d_M1(a, b, tol=TOL), lambda a, b: d_J1(a, b, tol=TOL), d_uniform):
        assert f(x, z) <= f(x, y) + f(y, z) + 2 * TOL


def test_decision_brackets_distance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, y = random_step_path(rng), random_step_path(rng)
        d = d_M1(x, y, tol=1e-9)
        assert m1_decide(x, y, 1.0, d + 2e-9)
        if d > 1e-8:
            assert not m1_decide(x, y, 1.0, d - 2e-9)


def test_vignette():
    for n in range(1, 9):
        X, Xn = vignette_paths(n)
        assert max(d_J1(a, b, tol=TOL) for a, b in zip(X, Xn)) <= 2.0 ** -(n + 1) + TOL
        mu = np.array([a(0.5) for a in X])
        nu = np.array([b(0.5) for b in Xn])
        assert prohorov_from_matrix(np.abs(nu[:, None] - mu[None, :])) >= 0.25


def test_d_infty_properties():
    rng = np.random.default_rng(4)
    for _ in range(100):
        x, y = random_step_path(rng, horizon=12.0), random_step_path(rng, horizon=12.0)
        m1, err = d_infty("M1", x, y, step=0.25, tol=1e-7)
        j1, _ = d_infty("J1", x, y, step=0.25, tol=1e-7)
        assert m1 <= j1 + 1e-6
        assert j1 <= err + d_uniform(x, y) + 1e-6
    x = random_step_path(rng, horizon=12.0)
    assert d_infty("M1", x, x, step=0.25)[0] == 0.0


def test_time_change():
    eps = 0.01
    nu = np.arange(0, 200)
    lam = time_change_lambda_eps(nu, eps, 1.0)
    t = np.linspace(0, 0.999, 333)
    assert np.allclose(lam(t), eps * np.floor(t / eps + 1e-9))
    jumps = lam.right[1:-1] - lam.left[1:-1]
    assert np.all(jumps >= 0) and np.allclose(jumps[jumps > 0], eps)


def test_prohorov_basics():
    rng = np.random.default_rng(5)
    mu = [random_step_path(rng) for _ in range(12)]
    nu = [random_step_path(rng) for _ in range(12)]
    assert prohorov(mu, mu) == 0.0
    a = prohorov(mu, nu, tol=1e-7)
    perm = [nu[i] for i in rng.permutation(12)]
    assert prohorov(mu, perm, tol=1e-7) == a
    x, y = mu[0], nu[0]
    assert abs(prohorov([x], [y], tol=1e-9) - min(d_M1(x, y), 1.0)) <= 2e-9


def test_reflect_shift_restrict():
    rng = np.random.default_rng(6)
    x = random_step_path(rng)
    rr = reflect_path(reflect_path(x))
    assert np.array_equal(rr.left, x.left) and np.array_equal(rr.right, x.right)
    s = shift_linear(x, 0.0)
    assert d_uniform(s, x) == 0.0
    r = x.restrict(0.5)
    g = np.linspace(0, 0.5, 51)
    assert np.array_equal(r(g), x(g))


def test_jump_on_horizon_is_kept():
    x = CadlagPath.step([0.0, 0.5, 1.0], [0.0, 1.0, 3.0], 1.0)
    assert x(1.0) == 3.0 and x.left_limit(1.0) == 1.0


def test_composition_continuity_probe():
    grid = np.linspace(0, 1, 4001)
    x = CadlagPath.step([0, 0.5], [0.0, 1.0], 1.0)
    y = CadlagPath.linear([0, 1], [0, 1])
    target = compose(x, y, grid)
    d = []
    for n in (4, 16, 64, 256):
        xn = CadlagPath.step([0, 0.5 + 1.0 / (4 * n)], [1.0 / n, 1.0], 1.0)
        s = np.linspace(0, 1, 201)
        yn = CadlagPath.linear(s, s + s * (1 - s) / n)
        d.append(d_M1(compose(xn, yn, grid), target, tol=1e-9))
    assert all(b < a for a, b in zip(d, d[1:]))
    assert d[-1] < 0.01
