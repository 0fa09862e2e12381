"""Estimators and small statistical checks used by the experiment runners."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np


def ecdf(samples):
    """Right-continuous empirical distribution function of the samples."""
    s = np.sort(np.asarray(samples, float))
    if len(s) == 0:
        raise ValueError("ecdf of an empty sample")
    n = len(s)

    def F(x):
        return np.searchsorted(s, x, side="right") / n

    return F


def ks_two_sample(a, b) -> float:
    """sup_x |F_a(x) - F_b(x)| by a merge scan over the pooled sample."""
    a = np.sort(np.asarray(a, float))
    b = np.sort(np.asarray(b, float))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("KS statistic needs two nonempty samples")
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / len(a)
    fb = np.searchsorted(b, pooled, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def ks_one_sample(samples, cdf) -> float:
    """sup_x |F_n(x) - F(x)| for a continuous reference CDF (vectorised callable)."""
    s = np.sort(np.asarray(samples, float))
    n = len(s)
    if n == 0:
        raise ValueError("KS statistic needs a nonempty sample")
    F = np.asarray(cdf(s), float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def hill_estimator(samples, k: int) -> tuple[float, tuple[float, float]]:
    """Hill estimate of the tail index from the top k order statistics.

    kappa_hat = k / sum_{i<=k} log(X_(i) / X_(k+1)); CI kappa_hat (1 +- 1.96/sqrt k).
    """
    if k < 30:
        raise ValueError("Hill estimator needs k >= 30")
    x = np.sort(np.asarray(samples, float))[::-1]
    if len(x) <= k:
        raise ValueError("need more than k samples")
    top = x[:k + 1]
    if np.any(top <= 0):
        raise ValueError("nonpositive samples in the Hill band")
    lg = np.log(top)
    kap = k / float(np.sum(lg[:k] - lg[k]))
    h = 1.96 / np.sqrt(k)
    return kap, (kap * (1 - h), kap * (1 + h))


def dispersion_ratio(counts) -> float:
    c = np.asarray(counts, float)
    m = c.mean()
    if m <= 0:
        raise ValueError("degenerate cell: zero mean count")
    return float(c.var(ddof=1) / m)


def poissonity_test(counts_by_cell, expected: Optional[np.ndarray] = None, ratio_band=(0.9, 1.1),
                    corr_max: float = 0.05, mean_rel_tol: float = 0.1) -> dict:
    """Check counts for Poisson behaviour.

    ``counts_by_cell`` has one row per replicate and one column per cell;
    cells are assumed to be disjoint time windows in column order.  Reports
    the variance/mean ratio of the total count and per cell, the pooled
    correlation of counts in adjacent windows, and (optionally) the relative
    gap between cell means and their expected values.
    """
    c = np.asarray(counts_by_cell, float)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] < 100:
        raise ValueError("poissonity test needs at least 100 replicates")
    means = c.mean(axis=0)
    if np.any(means <= 0):
        raise ValueError("degenerate cell: zero mean count")
    total = c.sum(axis=1)
    out: dict[str, Any] = {
        "replicates": int(c.shape[0]),
        "cells": int(c.shape[1]),
        "ratio_total": dispersion_ratio(total),
        "ratio_cells": [float(v) for v in c.var(axis=0, ddof=1) / means],
    }
    ok = ratio_band[0] <= out["ratio_total"] <= ratio_band[1]
    if c.shape[1] >= 2:
        sd = c.std(axis=0, ddof=1)
        if np.any(sd == 0):
            r = float("nan")       # a constant cell has no correlation; it already fails the ratio band
        else:
            z = (c - means) / sd
            r = float(np.mean(np.sum(z[:, :-1] * z[:, 1:], axis=0) / (c.shape[0] - 1)))
        out["adjacent_corr"] = r
        ok = ok and bool(abs(r) < corr_max)
    if expected is not None:
        expected = np.asarray(expected, float)
        rel = float(abs(total.mean() - expected.sum()) / expected.sum())
        out["mean_rel_gap"] = rel
        ok = ok and rel <= mean_rel_tol
    out["pass"] = bool(ok)
    return out


def median_trend(values_by_level: list[np.ndarray]) -> dict:
    """Medians along a grid and whether they strictly decrease."""
    med = [float(np.median(v)) for v in values_by_level]
    dec = all(b < a for a, b in zip(med, med[1:]))
    return {"medians": med, "strictly_decreasing": bool(dec)}


@dataclass
class ExperimentReport:
    """One experiment's statistics together with the thresholds they were judged against."""

    name: str
    passed: bool
    statistics: dict
    thresholds: dict
    model: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)
    runtime: float = 0.0
    notes: str = ""

    def to_record(self, with_runtime: bool = False) -> dict:
        """JSON-ready mapping.  Runtime is left out by default so records are reproducible."""
        d = asdict(self)
        if not with_runtime:
            d.pop("runtime")
        return _jsonable(d)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        return False
