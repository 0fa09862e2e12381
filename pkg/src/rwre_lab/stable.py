"""Totally skewed stable laws L_{kappa,b}: skewness +1, scale b, zero shift.

The parameterisation is the usual "S1" one: for kappa != 1 the characteristic
function is exp(-b^k |u|^k (1 - i sign(u) tan(pi k / 2))), and for kappa = 1
it is exp(-b |u| (1 + i (2/pi) sign(u) log|u|)).

The CDF is computed from Nolan's one-dimensional integral representation and
the sampler is the Chambers-Mallows-Stuck transformation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, interpolate, optimize


@dataclass(frozen=True)
class StableParams:
    kappa: float
    b: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.kappa < 2.0):
            raise ValueError(f"stable index must lie in (0, 2), got {self.kappa}")
        if not self.b > 0:
            raise ValueError("scale must be positive")


class QuadratureError(RuntimeError):
    pass


def _cdf_std_pos(x: float, a: float, beta: float) -> float:
    """Standard S1 CDF at x > 0 for a != 1 (skewness beta)."""
    t = np.tan(np.pi * a / 2)
    theta0 = np.arctan(beta * t) / a
    e = a / (a - 1.0)
    c = np.cos(a * theta0) ** (1.0 / (a - 1.0))
    logx = np.log(x)

    def g(th):
        # log of x^(a/(a-1)) V(theta)
        cth = np.cos(th)
        s = np.sin(a * (theta0 + th))
        if cth <= 0 or s <= 0:
            return np.inf if a < 1 else -np.inf
        return (e * logx + np.log(c) + e * (np.log(cth) - np.log(s))
                + np.log(np.cos(a * theta0 + (a - 1.0) * th)) - np.log(cth))

    def f(th):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            v = g(th)
        if not np.isfinite(v):
            return 0.0 if v > 0 else 1.0
        return np.exp(-np.exp(v)) if v < 700 else 0.0

    lo, hi = -theta0, np.pi / 2
    pts = _split_points(lambda th: g(th), lo, hi)
    val, err = integrate.quad(f, lo, hi, points=pts, limit=400, epsabs=1e-13, epsrel=1e-11)
    if err > 1e-7:
        raise QuadratureError(f"stable CDF quadrature error {err:.2g} at x={x}")
    if a < 1:
        c1 = (np.pi / 2 - theta0) / np.pi
        return float(c1 + val / np.pi)
    return float(1.0 - val / np.pi)


def _split_points(g, lo, hi):
    """The point where the (monotone) exponent g crosses 0, if any.

    The integrand exp(-exp(g)) switches from ~1 to ~0 there, which is where
    the adaptive quadrature needs help.
    """
    span = hi - lo
    a, b = lo + 1e-12 * span, hi - 1e-12 * span
    with np.errstate(all="ignore"):
        ga, gb = g(a), g(b)
    if not (np.isfinite(ga) and np.isfinite(gb)) or np.sign(ga) == np.sign(gb):
        # fall back to a scan when an endpoint is singular
        th = np.linspace(a, b, 257)
        with np.errstate(all="ignore"):
            gv = np.array([g(v) for v in th])
        ok = np.isfinite(gv)
        idx = np.nonzero(ok[:-1] & ok[1:] & (np.sign(gv[:-1]) != np.sign(gv[1:])))[0]
        if len(idx) == 0:
            return None
        a, b = th[idx[0]], th[idx[0] + 1]
    try:
        with np.errstate(all="ignore"):
            r = optimize.brentq(g, a, b, xtol=1e-14 * span)
    except ValueError:
        return None
    # crowd a few points around the switch so its width is resolved
    w = [r + d * span for d in (-1e-3, -1e-6, 0.0, 1e-6, 1e-3)]
    return [p for p in w if lo < p < hi]


def _cdf_std_one(x: float, beta: float) -> float:
    """Standard S1 CDF for index 1 and skewness beta > 0."""
    def logv(th):
        p = np.pi / 2 + beta * th
        return np.log(2 / np.pi) + np.log(p) - np.log(np.cos(th)) + p * np.tan(th) / beta

    def g(th):
        with np.errstate(all="ignore"):
            return -np.pi * x / (2 * beta) + logv(th)

    def f(th):
        v = g(th)
        if not np.isfinite(v):
            return 0.0 if v > 0 else 1.0
        return np.exp(-np.exp(v)) if v < 700 else 0.0

    lo, hi = -np.pi / 2 + 1e-15, np.pi / 2 - 1e-15
    val, err = integrate.quad(f, lo, hi, points=_split_points(g, lo, hi), limit=400,
                              epsabs=1e-13, epsrel=1e-11)
    if err > 1e-7:
        raise QuadratureError(f"stable CDF quadrature error {err:.2g} at x={x}")
    return float(val / np.pi)


def stable_cdf_std(x: float, kappa: float, beta: float = 1.0) -> float:
    """CDF of the standard (scale 1, shift 0) stable law at a single point."""
    if kappa == 1.0:
        if beta <= 0:
            raise ValueError("index-1 branch implemented for positive skewness")
        return _cdf_std_one(x, beta)
    if x > 0:
        return _cdf_std_pos(x, kappa, beta)
    if x == 0:
        theta0 = np.arctan(beta * np.tan(np.pi * kappa / 2)) / kappa
        return float((np.pi / 2 - theta0) / np.pi)
    if kappa < 1 and beta == 1.0:
        return 0.0
    return 1.0 - _cdf_std_pos(-x, kappa, -beta)


def _standardise(params: StableParams, x):
    k, b = params.kappa, params.b
    if k == 1.0:
        return (np.asarray(x, float) - 2.0 / np.pi * b * np.log(b)) / b
    return np.asarray(x, float) / b


def stable_cdf(params: StableParams, x, grid_threshold: int = 200):
    """L_{kappa,b}(x).  Large arrays are evaluated by monotone interpolation on a quadrature grid."""
    z = _standardise(params, x)
    scalar = z.ndim == 0
    z = np.atleast_1d(z)
    if len(z) <= grid_threshold:
        out = np.array([stable_cdf_std(float(v), params.kappa) for v in z])
    else:
        out = _cdf_grid(params.kappa, z)
    return float(out[0]) if scalar else out


def _cdf_grid(kappa: float, z: np.ndarray) -> np.ndarray:
    lo, hi = float(np.min(z)), float(np.max(z))
    # grid dense near the bulk, log-spaced in the tails
    core = np.linspace(max(lo, -20), min(hi, 50), 1500) if lo < 50 and hi > -20 else np.array([])
    tails = []
    if hi > 50:
        tails.append(np.geomspace(50, hi, 200))
    if lo < -20:
        tails.append(-np.geomspace(-lo, 20, 200))
    g = np.unique(np.concatenate([core, *tails, [lo, hi]]))
    vals = np.array([stable_cdf_std(float(v), kappa) for v in g])
    vals = np.maximum.accumulate(np.clip(vals, 0.0, 1.0))
    if len(g) == 1:
        return np.full(len(z), vals[0])
    f = interpolate.PchipInterpolator(g, vals)
    return np.clip(f(z), 0.0, 1.0)


def stable_sample(params: StableParams, seed, n: int) -> np.ndarray:
    """n draws from L_{kappa,b} by the Chambers-Mallows-Stuck method."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a, b = params.kappa, params.b
    V = rng.uniform(-np.pi / 2, np.pi / 2, n)
    W = rng.exponential(1.0, n)
    beta = 1.0
    if a == 1.0:
        p = np.pi / 2 + beta * V
        X = 2 / np.pi * (p * np.tan(V) - beta * np.log((np.pi / 2) * W * np.cos(V) / p))
        return b * X + 2 / np.pi * beta * b * np.log(b)
    t = np.tan(np.pi * a / 2)
    B = np.arctan(beta * t) / a
    S = (1 + beta ** 2 * t ** 2) ** (1 / (2 * a))
    X = S * np.sin(a * (V + B)) / np.cos(V) ** (1 / a) * (np.cos(V - a * (V + B)) / W) ** ((1 - a) / a)
    return b * X


def stable_quantile_std(kappa: float, q: float) -> float:
    """Quantile of the standard law by root finding on the CDF."""
    f = lambda z: stable_cdf_std(z, kappa) - q
    lo, hi = -1.0, 1.0
    if kappa < 1:
        lo = 1e-12
    while f(lo) > 0:
        lo *= 2 if lo < 0 else 0.5
    while f(hi) < 0:
        hi *= 2
    return float(optimize.brentq(f, lo, hi, xtol=1e-12))


def fit_scale_quartiles(samples, kappa: float, probs=(0.25, 0.5, 0.75)) -> float:
    """Scale b matching the sample quartiles to those of L_{kappa,b} (least squares)."""
    e = np.quantile(np.asarray(samples, float), probs)
    q1 = np.array([stable_quantile_std(kappa, p) for p in probs])
    if kappa != 1.0:
        return float(np.dot(e, q1) / np.dot(q1, q1))

    def loss(logb):
        b = np.exp(logb)
        return np.sum((b * q1 + 2 / np.pi * b * np.log(b) - e) ** 2)

    res = optimize.minimize_scalar(loss, bounds=(-10, 10), method="bounded")
    return float(np.exp(res.x))
