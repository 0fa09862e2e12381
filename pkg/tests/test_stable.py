import numpy as np
import pytest
from scipy import stats as sst

from rwre_lab.stable import (StableParams, fit_scale_quartiles, stable_cdf, stable_cdf_std, stable_quantile_std,
                             stable_sample)
from rwre_lab.stats import ks_one_sample


@pytest.mark.parametrize("kappa", [0.6, 1.0, 1.5])
def test_cdf_against_scipy(kappa):
    # scipy's levy_stable uses the same S1 parameterisation by default
    for x in (-3.0, -0.5, 0.2, 1.0, 4.0, 30.0):
        ref = sst.levy_stable.cdf(x, kappa, 1.0)
        assert abs(stable_cdf_std(x, kappa) - ref) < 2e-5, (kappa, x)


def test_cdf_limits_and_support():
    assert stable_cdf_std(1e8, 1.5) > 1 - 1e-6
    assert stable_cdf_std(0.0, 0.6) == 0.0
    assert stable_cdf_std(-2.0, 0.6) == 0.0
    c = stable_cdf(StableParams(1.5), np.linspace(-20, 60, 500))
    assert np.all(np.diff(c) >= 0)


@pytest.mark.parametrize("kappa", [0.6, 1.0, 1.5])
def test_sampler_matches_cdf(kappa):
    p = StableParams(kappa, 1.0)
    x = stable_sample(p, 1, 100_000)
    assert ks_one_sample(x, lambda s: stable_cdf(p, s)) < 0.01


def test_scale_equivariance():
    x = stable_sample(StableParams(1.5, 1.0), 2, 100_000)
    assert ks_one_sample(3.0 * x, lambda s: stable_cdf(StableParams(1.5, 3.0), s)) < 0.01


def test_quantile_inverts_cdf():
    for k in (0.6, 1.5):
        for q in (0.1, 0.5, 0.9):
            assert stable_cdf_std(stable_quantile_std(k, q), k) == pytest.approx(q, abs=1e-9)


@pytest.mark.parametrize("kappa,b", [(1.5, 2.5), (0.6, 0.4), (1.0, 1.7)])
def test_quartile_fit_recovers_scale(kappa, b):
    x = stable_sample(StableParams(kappa, b), 3, 50_000)
    assert fit_scale_quartiles(x, kappa) == pytest.approx(b, rel=0.03)


def test_params_validated():
    with pytest.raises(ValueError):
        StableParams(2.0)
    with pytest.raises(ValueError):
        StableParams(1.5, -1.0)
