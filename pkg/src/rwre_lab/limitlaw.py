"""Point patterns, Poisson limit sampling and the path constructions built on them.

W_delta(zeta, tau)(t) sums x_i tau_i over the points of zeta with x_i > delta
and t_i <= t.  H_delta(zeta) is the law of that path over the exponential
weights tau with zeta held fixed; it is represented by samples only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import _kernels
from .env import LadderDecomposition, require_limit_regime
from .pathmetric import CadlagPath, at_horizon


@dataclass
class PointPattern:
    """Finitely many points (x_i, t_i) with x_i > 0 and t_i >= 0.

    ``delta_floor`` is the smallest magnitude the pattern is complete above
    and ``horizon`` the time window it covers.
    """

    x: np.ndarray
    t: np.ndarray
    delta_floor: float = 0.0
    horizon: float = 1.0

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        self.t = np.asarray(self.t, float)
        if self.x.shape != self.t.shape:
            raise ValueError("magnitudes and times must have equal length")
        if len(self.x) and (np.any(~np.isfinite(self.x)) or np.any(self.x <= 0)):
            raise ValueError("magnitudes must be finite and positive")
        if len(self.t) and np.any(self.t < 0):
            raise ValueError("times must be nonnegative")

    def __len__(self):
        return len(self.x)

    def count(self, delta: float, t0: float = 0.0, t1: Optional[float] = None) -> int:
        """Number of points with x > delta and t0 <= t <= t1."""
        if delta < self.delta_floor:
            raise ValueError("query below the pattern's delta floor")
        t1 = self.horizon if t1 is None else t1
        return int(np.count_nonzero((self.x > delta) & (self.t >= t0) & (self.t <= t1)))

    def time_scaled(self, c: float) -> "PointPattern":
        """Points (x, c t)."""
        return PointPattern(self.x, c * self.t, self.delta_floor, c * self.horizon)


@dataclass
class EmpiricalPathMeasure:
    paths: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.paths:
            raise ValueError("empirical measure needs at least one path")
        h = self.paths[0].horizon
        if any(p.horizon != h for p in self.paths):
            raise ValueError("all paths must share the horizon")

    def __len__(self):
        return len(self.paths)


# ---------------------------------------------------------------------------
# point patterns


def build_N_eps(dec: LadderDecomposition, eps: float, kappa: float, horizon: float = 1.0) -> PointPattern:
    """Points (eps^{1/kappa} beta_i, eps i) for i <= horizon / eps."""
    n = int(np.floor(horizon / eps + 1e-9))
    if dec.beta is None or len(dec.beta) < n:
        raise ValueError(f"need {n} betas, have {0 if dec.beta is None else len(dec.beta)}")
    i = np.arange(1, n + 1)
    return PointPattern(eps ** (1.0 / kappa) * dec.beta[:n], eps * i, 0.0, horizon)


def poisson_mean_count(lam: float, kappa: float, delta: float, horizon: float = 1.0) -> float:
    """Expected number of points with x > delta, t <= horizon for intensity lam x^{-kappa-1} dx dt."""
    return horizon * lam * delta ** (-kappa) / kappa


def sample_poisson_pattern(lam: float, kappa: float, delta: float, horizon: float, seed) -> PointPattern:
    """Poisson pattern with intensity lam x^{-kappa-1} dx dt on (delta, inf) x [0, horizon]."""
    if not delta > 0:
        raise ValueError("delta floor must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = rng.poisson(poisson_mean_count(lam, kappa, delta, horizon))
    t = np.sort(rng.uniform(0.0, horizon, n))
    x = delta * rng.uniform(size=n) ** (-1.0 / kappa)
    return PointPattern(x, t, delta, horizon)


def exponential_weights(n: int, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.exponential(1.0, n)


# ---------------------------------------------------------------------------
# W, H, Z


def W_delta_path(zeta: PointPattern, tau: np.ndarray, delta: float, horizon: Optional[float] = None) -> CadlagPath:
    """Nondecreasing step path with a jump x_i tau_i at each retained t_i."""
    horizon = zeta.horizon if horizon is None else horizon
    if delta < zeta.delta_floor:
        raise ValueError(f"delta {delta} below the pattern floor {zeta.delta_floor}")
    tau = np.asarray(tau, float)
    if len(tau) < len(zeta):
        raise ValueError("need one weight per point")
    keep = (zeta.x > delta) & (zeta.t <= horizon)
    t = zeta.t[keep]
    jumps = zeta.x[keep] * tau[:len(zeta)][keep]
    order = np.argsort(t, kind="stable")
    t = t[order]
    jumps = jumps[order]
    # merge coincident times, drop a jump at time 0 into the initial value
    ut, inv = np.unique(t, return_inverse=True)
    js = np.zeros(len(ut))
    np.add.at(js, inv, jumps)
    v0 = 0.0
    if len(ut) and ut[0] == 0.0:
        v0 = js[0]
        ut, js = ut[1:], js[1:]
    times = np.concatenate([[0.0], ut])
    vals = v0 + np.concatenate([[0.0], np.cumsum(js)])
    return CadlagPath.step(times, vals, horizon)


def W_path(zeta: PointPattern, tau: np.ndarray, horizon: Optional[float] = None) -> tuple[CadlagPath, bool]:
    """W without truncation: (path, degenerate).

    A finite pattern always gives a finite sum.  If the sum is not finite
    the zero path is returned with ``degenerate`` set.
    """
    horizon = zeta.horizon if horizon is None else horizon
    path = W_delta_path(zeta, tau, zeta.delta_floor, horizon)
    if not np.isfinite(path.right[-1]):
        return CadlagPath.zero(horizon), True
    return path, False


def sample_H(zeta: PointPattern, delta: float, n: int, seed, horizon: Optional[float] = None) -> EmpiricalPathMeasure:
    """n draws of W_delta(zeta, tau) with independent weights and zeta fixed."""
    rng = np.random.default_rng(seed)
    paths = [W_delta_path(zeta, rng.exponential(1.0, len(zeta)), delta, horizon) for _ in range(n)]
    return EmpiricalPathMeasure(paths, {"construction": "H_delta", "delta": delta, "seed": seed})


def drift(lam: float, kappa: float, delta: float) -> float:
    """Per-unit-time centering subtracted from W_delta in Z_{lam,kappa}."""
    require_limit_regime(kappa)
    if kappa < 1:
        return 0.0
    if kappa == 1:
        return lam * np.log(1.0 / delta)
    return lam * delta ** (1.0 - kappa) / (kappa - 1.0)


def small_jump_mean(lam: float, kappa: float, delta: float) -> float:
    """Mean per unit time of the omitted jumps below delta (kappa < 1): lam delta^{1-kappa}/(1-kappa)."""
    if kappa >= 1:
        return np.inf
    return lam * delta ** (1.0 - kappa) / (1.0 - kappa)


def sample_Z(lam: float, kappa: float, delta: float, horizon: float, seed) -> CadlagPath:
    """One path of W_delta(N, tau) minus the regime drift.

    The delta -> 0 limit is approximated at the given delta; for kappa < 1 the
    neglected jumps have mean ``small_jump_mean`` per unit time.
    """
    require_limit_regime(kappa)
    rng = np.random.default_rng(seed)
    zeta = sample_poisson_pattern(lam, kappa, delta, horizon, rng)
    w = W_delta_path(zeta, rng.exponential(1.0, len(zeta)), delta, horizon)
    m = drift(lam, kappa, delta)
    if m == 0:
        return w
    return CadlagPath(w.t, w.left - m * w.t, w.right - m * w.t, "linear", check=False)


@njit(cache=True)
def _marked_sums(key, counts, delta, kappa, with_tau):
    out = np.empty(counts.shape[0])
    c = 0
    e = -1.0 / kappa
    for r in range(counts.shape[0]):
        s = 0.0
        for _ in range(counts[r]):
            u = _kernels.counter_uniform(key, c)
            c += 1
            x = delta * (1.0 - u) ** e
            if with_tau:
                u2 = _kernels.counter_uniform(key, c)
                c += 1
                x *= -np.log(1.0 - u2)
            s += x
        out[r] = s
    return out


def sample_Z_marginal(lam: float, kappa: float, delta: float, t: float, n: int, seed: int,
                      with_tau: bool = True) -> np.ndarray:
    """n independent draws of Z(t) (or of the pattern sum when with_tau is False)."""
    require_limit_regime(kappa)
    rng = np.random.Generator(np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF))
    counts = rng.poisson(poisson_mean_count(lam, kappa, delta, t), n).astype(np.int64)
    key = np.uint64(int(rng.integers(0, 2 ** 63)))
    sums = _marked_sums(key, counts, float(delta), float(kappa), with_tau)
    return sums - t * drift(lam, kappa, delta)


# ---------------------------------------------------------------------------
# S and U


def centering_rate(kappa: float, eps: float, centering) -> float:
    """Per-block centering of sums of beta_i tau_i (or of T_{nu_k})."""
    if kappa < 1:
        return 0.0
    if kappa == 1:
        return float(centering.Dprime(1.0 / eps))
    return float(centering.betabar)


def build_S_eps(dec: LadderDecomposition, eps: float, tau: np.ndarray, centering,
                horizon: float = 1.0) -> CadlagPath:
    """S_eps: scaled and centred partial sums of beta_i tau_i."""
    kappa = centering.kappa
    require_limit_regime(kappa)
    n = int(np.floor(horizon / eps + 1e-9))
    if len(dec.beta) < n or len(tau) < n:
        raise ValueError("betas or weights do not cover the horizon")
    sums = np.concatenate([[0.0], np.cumsum(dec.beta[:n] * tau[:n])])
    return _block_path(sums, eps, kappa, centering, horizon)


def build_U_eps(T_nu: np.ndarray, eps: float, centering, horizon: float = 1.0) -> CadlagPath:
    """U_eps from the hitting times of the ladder locations (T_{nu_0} = 0 first)."""
    kappa = centering.kappa
    n = int(np.floor(horizon / eps + 1e-9))
    if len(T_nu) < n + 1:
        raise ValueError("ladder hitting times do not cover the horizon")
    return _block_path(np.asarray(T_nu[:n + 1], float), eps, kappa, centering, horizon)


def _block_path(sums, eps, kappa, centering, horizon):
    n = len(sums) - 1
    times = eps * np.arange(n + 1)
    if kappa < 1:
        return CadlagPath.step(times, eps ** (1.0 / kappa) * sums, horizon)
    scale = eps if kappa == 1 else eps ** (1.0 / kappa)
    rate = scale * centering_rate(kappa, eps, centering) / eps
    end = at_horizon(times, horizon)
    keep = (times < horizon) & ~end
    final = scale * (sums[end][-1] if end.any() else sums[keep][-1])
    times = times[keep]
    vals = scale * sums[keep]
    t = np.append(times, horizon)
    right = np.append(vals, final) - rate * t
    left = np.empty_like(right)
    left[0] = right[0]
    left[1:] = vals - rate * t[1:]
    return CadlagPath(t, left, right, "linear", check=False)


def gamma_truncation(kappa: float, eps: float, delta: float, centering) -> float:
    """Truncation drift gamma_{kappa,eps,delta} estimated from the block sample.

    Tail expectations E_Q[beta 1{beta > x}] use the empirical truncated mean
    below the top order statistics and the fitted C0 x^-kappa tail above.
    """
    require_limit_regime(kappa)
    if kappa < 1:
        return 0.0
    if kappa == 1:
        return float(centering.Dprime(1.0 / eps) - centering.Dprime(delta / eps))
    x = delta * eps ** (-1.0 / kappa)
    tail = centering.betabar - centering.Dprime(x)
    return float(eps ** (1.0 / kappa - 1.0) * tail)


def gamma_limit(kappa: float, delta: float, c0: float) -> float:
    """The eps -> 0 limit of gamma_{kappa,eps,delta}."""
    if kappa < 1:
        return 0.0
    if kappa == 1:
        return c0 * np.log(1.0 / delta)
    return c0 * kappa / (kappa - 1.0) * delta ** (1.0 - kappa)


# ---------------------------------------------------------------------------
# transforms


def invert_path(x: CadlagPath) -> CadlagPath:
    """Right-continuous inverse t -> sup{s : x(s) <= t} of a nondecreasing path.

    The result lives on [0, x(horizon)].  The completed graph of x, read with
    the axes swapped, is the graph of the inverse: flat stretches of x become
    jumps and jumps of x become flat stretches.
    """
    from .pathmetric import completed_graph

    if np.any(np.diff(completed_graph(x)[1]) < 0):
        raise ValueError("invert_path needs a nondecreasing path")
    if x.right[0] < 0:
        raise ValueError("invert_path needs x(0) >= 0")
    u, v = completed_graph(x)
    if v[-1] <= 0:
        raise ValueError("path never exceeds 0; inverse window is empty")
    # group vertices sharing the same level v
    starts = np.concatenate([[True], v[1:] != v[:-1]])
    levels = v[starts]
    first = np.nonzero(starts)[0]
    last = np.concatenate([first[1:] - 1, [len(v) - 1]])
    lo_u = u[first]
    hi_u = u[last]
    if levels[0] > 0:
        # before x(0) the inverse is sup of an empty set, taken as 0
        levels = np.concatenate([[0.0], levels])
        lo_u = np.concatenate([[0.0], lo_u])
        hi_u = np.concatenate([[0.0], hi_u])
        lo_u[1] = 0.0
    left = lo_u.copy()
    left[0] = hi_u[0]
    kind = "constant" if x.kind == "constant" else "linear"
    if kind == "constant":
        left[1:] = hi_u[:-1]
    return CadlagPath(levels, left, hi_u, kind, check=False)


def project_t(mu: EmpiricalPathMeasure, t: float) -> np.ndarray:
    """Values x(t) of every sampled path (right-continuous evaluation)."""
    return np.array([p(t) for p in mu.paths])


def first_passage_times(zeta: PointPattern, tau: np.ndarray, level: float = 1.0,
                        rate: float = 0.0) -> np.ndarray:
    """inf{t : W(t) > level} for W(t) = rate t + sum_{t_i <= t} x_i tau_i, one value per row of tau.

    ``rate`` stands in for the jumps below the pattern floor (their mean per
    unit time).  Rows whose path stays below the level on the pattern's
    horizon get +inf.
    """
    tau = np.atleast_2d(np.asarray(tau, float))
    R = tau.shape[0]
    order = np.argsort(zeta.t, kind="stable")
    t = zeta.t[order]
    if len(t) == 0:
        hit = level / rate if rate > 0 else np.inf
        return np.full(R, hit if hit <= zeta.horizon else np.inf)
    J = np.cumsum(zeta.x[order] * tau[:, order], axis=1)
    after = J + rate * t
    crossed = after > level
    any_cross = crossed.any(axis=1)
    idx = np.argmax(crossed, axis=1)
    rows = np.arange(R)
    prevJ = np.where(idx > 0, J[rows, np.maximum(idx - 1, 0)], 0.0)
    before = prevJ + rate * t[idx]
    with np.errstate(divide="ignore"):
        drift_hit = (level - prevJ) / rate if rate > 0 else np.full(R, np.inf)
    out = np.where(before > level, drift_hit, t[idx])
    # no jump crosses: the drift alone may still cross before the horizon
    if rate > 0:
        tail_hit = (level - J[:, -1]) / rate
        out = np.where(any_cross, out, np.where(tail_hit <= zeta.horizon, tail_hit, np.inf))
    else:
        out = np.where(any_cross, out, np.inf)
    return out
