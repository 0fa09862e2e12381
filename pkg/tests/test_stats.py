import json

import numpy as np
import pytest
from scipy import integrate, stats as sst

from rwre_lab.limitlaw import sample_poisson_pattern
from rwre_lab.stats import (ExperimentReport, dispersion_ratio, ecdf, hill_estimator, ks_one_sample, ks_two_sample,
                            median_trend, poissonity_test)


def test_ks_trivial_cases():
    a = np.arange(10.0)
    assert ks_two_sample(a, a) == 0.0
    assert ks_two_sample(a, a + 100) == 1.0


def test_ks_against_scipy():
    rng = np.random.default_rng(1)
    a, b = rng.uniform(size=10_000), rng.uniform(size=10_000)
    d = ks_two_sample(a, b)
    assert d == pytest.approx(sst.ks_2samp(a, b).statistic, abs=1e-15)
    assert d < 4 * np.sqrt(2 / 10_000)
    x = rng.normal(size=5000)
    assert ks_one_sample(x, sst.norm.cdf) == pytest.approx(sst.kstest(x, "norm").statistic, abs=1e-14)


def test_ecdf():
    F = ecdf([3.0, 1.0, 2.0])
    assert F(0.5) == 0 and F(1.0) == pytest.approx(1 / 3) and F(3.0) == 1.0


@pytest.mark.parametrize("kappa,band", [(1.5, (1.4, 1.6)), (0.6, (0.56, 0.64))])
def test_hill_pareto(kappa, band):
    x = np.random.default_rng(2).pareto(kappa, 100_000) + 1.0
    k, (lo, hi) = hill_estimator(x, 1000)
    assert band[0] <= k <= band[1]
    assert lo < k < hi


def test_hill_light_tail_drifts_up():
    # for exponential data the Hill estimate keeps rising as the threshold moves out,
    # instead of settling at a finite tail index
    n = 100_000
    x = np.random.default_rng(3).exponential(size=n)
    ks = (10_000, 1000, 100)
    est = [hill_estimator(x, k)[0] for k in ks]
    assert est[0] < est[1] < est[2]
    # excesses over the threshold u = log(n / k) are Exp(1), so the estimate tends to 1 / E log(1 + E / u)
    for k, e in zip(ks, est):
        u = np.log(n / k)
        mean_log = integrate.quad(lambda y: np.log1p(y / u) * np.exp(-y), 0, np.inf)[0]
        assert e == pytest.approx(1.0 / mean_log, rel=0.1)


def test_hill_coverage():
    rng = np.random.default_rng(4)
    hits = 0
    for _ in range(200):
        x = rng.pareto(1.5, 20_000) + 1.0
        _, (lo, hi) = hill_estimator(x, 400)
        hits += lo <= 1.5 <= hi
    assert hits >= 180


def test_poisson_counts():
    c = np.random.default_rng(5).poisson(5.0, 1000)
    assert 0.9 <= dispersion_ratio(c) <= 1.1
    res = poissonity_test(np.full((200, 3), 4.0))
    assert res["ratio_total"] == 0.0 and not res["pass"]


def test_disjoint_windows_uncorrelated():
    rng = np.random.default_rng(6)
    counts = np.empty((2000, 10))
    edges = np.linspace(0, 1, 11)
    for r in range(2000):
        pat = sample_poisson_pattern(1.0, 1.5, 0.1, 1.0, rng)
        counts[r] = np.histogram(pat.t, edges)[0]
    res = poissonity_test(counts)
    assert abs(res["adjacent_corr"]) < 0.05 and res["pass"]


def test_median_trend():
    assert median_trend([np.array([3.0]), np.array([2.0]), np.array([1.0])])["strictly_decreasing"]
    assert not median_trend([np.array([3.0]), np.array([3.0])])["strictly_decreasing"]


def test_report_record_is_json_and_reproducible():
    r = ExperimentReport("x", True, {"a": np.float64(np.inf), "b": np.arange(3), "c": np.bool_(True)},
                         {"t": 0.1}, runtime=12.3)
    rec = r.to_record()
    assert "runtime" not in rec
    assert rec["statistics"] == {"a": "inf", "b": [0, 1, 2], "c": True}
    json.dumps(rec, allow_nan=False)
    assert r.to_record(with_runtime=True)["runtime"] == 12.3
