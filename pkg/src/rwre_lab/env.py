"""Environment models, the tail index, ladder locations and beta blocks.

An environment is an i.i.d. sequence omega_x of right-step probabilities with
rho_x = (1 - omega_x) / omega_x.  Sites are generated in blocks from a
counter-based generator keyed by (seed, block index), so any window can be
materialised, grown or re-read without changing already-drawn values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize, special, stats

from . import _kernels

BLOCK = 4096
_BLOCK_OFFSET = 1 << 62
_TINY = np.finfo(float).tiny


class ModelError(ValueError):
    """Raised when a model violates the transience or tail-index assumptions."""


class ToleranceError(RuntimeError):
    """Raised when a truncation tolerance cannot be met within the depth budget."""


def derive_seed(master: int, *path: int) -> int:
    """A 64-bit seed derived deterministically from a master seed and a path of ints."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class EnvModel:
    """Beta(a, b) law of omega_0.

    The log-moment function of rho is closed form here, which gives kappa = a - b
    and E rho = b / (a - 1).  The generic quadrature path in :func:`rho_moment`
    is kept as an independent cross-check.
    """

    a: float
    b: float
    family: str = "beta"

    def __post_init__(self):
        if self.family != "beta":
            raise ModelError(f"unknown environment family {self.family!r}")
        if not (self.a > 0 and self.b > 0):
            raise ModelError("Beta shape parameters must be positive")
        if self.mean_log_rho() >= 0:
            raise ModelError(
                f"non-transient model: E log rho = {self.mean_log_rho():.4g} >= 0"
            )

    @property
    def params(self) -> dict:
        return {"family": self.family, "a": self.a, "b": self.b}

    def sample_omega(self, rng: np.random.Generator, size: int) -> np.ndarray:
        w = rng.beta(self.a, self.b, size=size)
        return np.clip(w, _TINY, 1.0 - 2.0 ** -53)

    def pdf(self, w):
        return stats.beta.pdf(w, self.a, self.b)

    def mean_omega(self) -> float:
        return self.a / (self.a + self.b)

    def mean_log_rho(self) -> float:
        return float(special.digamma(self.b) - special.digamma(self.a))

    def log_moment(self, s: float) -> float:
        """log E[rho^s], finite for -b < s < a."""
        if not (-self.b < s < self.a):
            return np.inf
        return float(special.betaln(self.a - s, self.b + s) - special.betaln(self.a, self.b))

    def moment_domain(self) -> tuple[float, float]:
        return (-self.b, self.a)

    def mean_rho(self) -> float:
        if self.a <= 1:
            return np.inf
        return self.b / (self.a - 1.0)

    @property
    def kappa(self) -> float:
        return solve_kappa(self)


def rho_moment(model: EnvModel, s: float) -> float:
    """E_P[rho^s] by numerical integration against the omega density."""
    def f(w):
        return np.exp(s * (np.log1p(-w) - np.log(w))) * model.pdf(w)

    # split at the mode region so quad sees the endpoint singularities separately
    val1, _ = integrate.quad(f, 0.0, 0.5, limit=200, epsabs=1e-13, epsrel=1e-12)
    val2, _ = integrate.quad(f, 0.5, 1.0, limit=200, epsabs=1e-13, epsrel=1e-12)
    return val1 + val2


_KAPPA_CACHE: dict = {}


def solve_kappa(model: EnvModel, xtol: float = 1e-14) -> float:
    """The positive root of s -> log E[rho^s].

    The log-moment function is convex, zero at s = 0 and has negative slope
    there, so a sign change is bracketed between a small positive s and the
    right end of the moment domain.
    """
    key = (model.family, model.a, model.b)
    if key in _KAPPA_CACHE:
        return _KAPPA_CACHE[key]
    if model.mean_log_rho() >= 0:
        raise ModelError("non-transient model: E log rho >= 0")
    _, hi_dom = model.moment_domain()
    f = model.log_moment
    # f is convex with f(0) = 0 and f'(0) < 0; move towards the right end of
    # the moment domain until f turns positive
    s_hi = None
    for k in range(1, 60):
        cand = hi_dom * (1.0 - 2.0 ** -k)
        v = f(cand)
        if np.isfinite(v) and v > 0:
            s_hi = cand
            break
    if s_hi is None:
        raise ModelError("no root of E[rho^s] = 1 in the moment domain")
    s_lo = s_hi
    for _ in range(200):
        s_lo *= 0.5
        if f(s_lo) < 0:
            break
    else:
        raise ModelError("could not bracket the tail index")
    kappa = optimize.brentq(f, s_lo, s_hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
    _KAPPA_CACHE[key] = float(kappa)
    return float(kappa)


def require_limit_regime(kappa: float) -> None:
    """Limit-law operations only make sense for 0 < kappa < 2."""
    if not (0.0 < kappa < 2.0):
        raise ModelError(
            f"kappa = {kappa:.4g} is outside (0, 2); limit-law operations are gated to 0 < kappa < 2"
        )


def velocity(model: EnvModel) -> tuple[float, bool]:
    """Limiting speed v_P and a flag telling whether it is positive.

    E T_1 = 1 + 2 E W_0 = (1 + E rho) / (1 - E rho) when E rho < 1, otherwise
    the speed is zero.
    """
    m = model.mean_rho()
    if not np.isfinite(m) or m >= 1.0:
        return 0.0, False
    return (1.0 - m) / (1.0 + m), True


# ---------------------------------------------------------------------------
# environments


class Environment:
    """A lazily materialised environment.

    Sites to the right of ``left_floor`` are drawn from P in blocks keyed by
    (seed, block).  Optionally the sites -depth..-1 are overridden by a fixed
    left portion (a sample from Q, or deterministic values in tests), in which
    case the walk is not allowed to go left of -depth.
    """

    def __init__(self, model: Optional[EnvModel], seed: int, left_portion: Optional[np.ndarray] = None,
                 left_law: str = "P"):
        self.model = model
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.left_law = left_law
        self._blocks: dict = {}
        self._left = None if left_portion is None else np.asarray(left_portion, float)
        self._lo = 0
        self._hi = -1
        self._omega = np.empty(0)

    @property
    def left_depth(self) -> Optional[int]:
        return None if self._left is None else len(self._left)

    @property
    def min_site(self):
        """Smallest site this environment can produce (None when unbounded)."""
        return None if self._left is None else -len(self._left)

    def _block(self, k: int) -> np.ndarray:
        blk = self._blocks.get(k)
        if blk is None:
            bg = np.random.Philox(key=np.array([self.seed, (k + _BLOCK_OFFSET) & 0xFFFFFFFFFFFFFFFF],
                                               dtype=np.uint64))
            blk = self.model.sample_omega(np.random.Generator(bg), BLOCK)
            self._blocks[k] = blk
        return blk

    def _raw(self, lo: int, hi: int) -> np.ndarray:
        out = np.empty(hi - lo + 1)
        k0 = lo // BLOCK
        k1 = hi // BLOCK
        for k in range(k0, k1 + 1):
            s = max(lo, k * BLOCK)
            e = min(hi, (k + 1) * BLOCK - 1)
            out[s - lo:e - lo + 1] = self._block(k)[s - k * BLOCK:e - k * BLOCK + 1]
        if self._left is not None:
            d = len(self._left)
            s = max(lo, -d)
            e = min(hi, -1)
            if s <= e:
                out[s - lo:e - lo + 1] = self._left[s + d:e + d + 1]
        return out

    def omega(self, lo: int, hi: int) -> np.ndarray:
        """omega_x for x = lo..hi inclusive."""
        if hi < lo:
            raise ValueError("empty window")
        if self._left is not None and lo < -len(self._left):
            raise IndexError(f"site {lo} is left of the fixed left portion (depth {len(self._left)})")
        if lo >= self._lo and hi <= self._hi:
            return self._omega[lo - self._lo:hi - self._lo + 1]
        return self._raw(lo, hi)

    def rho(self, lo: int, hi: int) -> np.ndarray:
        w = self.omega(lo, hi)
        return (1.0 - w) / w

    def log_rho(self, lo: int, hi: int) -> np.ndarray:
        w = self.omega(lo, hi)
        return np.log1p(-w) - np.log(w)

    def materialize(self, lo: int, hi: int) -> np.ndarray:
        """Cache the window [lo, hi] (grown to include the current one) and return it."""
        if self._hi >= self._lo:
            lo = min(lo, self._lo)
            hi = max(hi, self._hi)
        if self._left is not None:
            lo = max(lo, -len(self._left))
        if not (lo >= self._lo and hi <= self._hi and self._hi >= self._lo):
            self._omega = self._raw(lo, hi)
            self._lo, self._hi = lo, hi
        return self._omega

    @property
    def window(self) -> tuple[int, int]:
        return self._lo, self._hi

    def to_columns(self, lo: int, hi: int) -> np.ndarray:
        """Columnar snapshot (site, omega, rho)."""
        w = self.omega(lo, hi)
        x = np.arange(lo, hi + 1)
        return np.column_stack([x, w, (1.0 - w) / w])


class ArrayEnvironment(Environment):
    """Deterministic environment: given values on a window, constants outside.

    Used for hand-checkable cases such as omega = 1 to the left of the origin.
    """

    def __init__(self, omega: np.ndarray, offset: int = 0, left_fill: float = 0.5, right_fill: float = 0.5,
                 left_law: str = "P"):
        super().__init__(None, 0, None, left_law)
        self._vals = np.asarray(omega, float)
        self._off = int(offset)
        self._lf = float(left_fill)
        self._rf = float(right_fill)

    def _raw(self, lo: int, hi: int) -> np.ndarray:
        x = np.arange(lo, hi + 1)
        out = np.where(x < self._off, self._lf, self._rf).astype(float)
        k = x - self._off
        inside = (k >= 0) & (k < len(self._vals))
        out[inside] = self._vals[k[inside]]
        return out


def sample_environment(model: EnvModel, seed: int, window: tuple[int, int] = (0, 0)) -> Environment:
    """An environment under P, with the given window materialised."""
    lo, hi = window
    if hi < lo:
        raise ValueError("window must be nonempty")
    env = Environment(model, seed)
    env.materialize(lo, hi)
    return env


# ---------------------------------------------------------------------------
# Q on the left of the origin


def _w_majorant(model: EnvModel) -> float:
    """A geometric majorant for the size of a W-series started further left.

    With s = min(kappa, 1) / 2 the terms E[Pi^s] decay like m^k, m = E[rho^s] < 1;
    1 / (1 - m) bounds the typical series size.  It is a heuristic scale for the
    truncation bound, not an almost-sure bound.
    """
    if model is None:
        return 1.0
    s = 0.5 * min(solve_kappa(model), 1.0)
    m = np.exp(model.log_moment(s))
    return 1.0 / (1.0 - m)


def sample_Q_left(model: EnvModel, seed: int, depth: int = 64, tol: float = 1e-10,
                  max_attempts: int = 100000, max_depth: int = 1 << 16) -> np.ndarray:
    """omega_{-depth..-1} drawn from P conditioned on all backward products < 1.

    Rejection sampling at a finite depth.  The depth is doubled until the
    backward product over the whole window, times the W majorant, is below
    ``tol``, so sites further left cannot matter to any W-series at that
    tolerance.  Returns the accepted left portion (index 0 is site -depth).
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    wbar = _w_majorant(model)
    while True:
        rng = np.random.Generator(np.random.Philox(key=np.array(
            [int(seed) & 0xFFFFFFFFFFFFFFFF, 0xC0FFEE0000000000 + depth], dtype=np.uint64)))
        batch = 64
        for attempt in range(0, max_attempts, batch):
            w = model.sample_omega(rng, batch * depth).reshape(batch, depth)
            lr = np.log1p(-w) - np.log(w)
            # backward partial sums from site -1 going left
            back = np.cumsum(lr[:, ::-1], axis=1)
            ok = np.all(back < 0.0, axis=1)
            if ok.any():
                row = int(np.argmax(ok))
                logtail = back[row, -1]
                if np.exp(logtail) * wbar <= tol or depth >= max_depth:
                    if np.exp(logtail) * wbar > tol:
                        raise ToleranceError(f"Q-left tolerance {tol} not reached at depth {depth}")
                    return w[row].copy()
                break
        else:
            raise ModelError(f"acceptance collapse: no Q-left sample in {max_attempts} attempts at depth {depth}")
        depth *= 2


def q_environment(model: EnvModel, seed: int, tol: float = 1e-10, depth: int = 64) -> Environment:
    """Environment under Q: P to the right of the origin, a Q sample on the left."""
    left = sample_Q_left(model, derive_seed(seed, 1), depth=depth, tol=tol)
    return Environment(model, derive_seed(seed, 0), left_portion=left, left_law="Q")


# ---------------------------------------------------------------------------
# products and W


def pi_product(env: Environment, i: int, j: int) -> float:
    """Pi_{i,j} = prod_{k=i}^{j} rho_k (1 for j < i)."""
    if j < i:
        return 1.0
    return float(np.exp(np.sum(env.log_rho(i, j))))


def w_finite(env: Environment, i: int, j: int) -> float:
    """W_{i,j} = sum_{k=i}^{j} Pi_{k,j}."""
    if j < i:
        return 0.0
    w, _ = _kernels.w_recursion(env.rho(i, j))
    return float(w[-1])


def r_finite(env: Environment, i: int, j: int) -> float:
    """R_{i,j} = sum_{k=i}^{j} Pi_{i,k}."""
    if j < i:
        return 0.0
    return float(np.sum(np.exp(np.cumsum(env.log_rho(i, j)))))


def _left_limit(env: Environment, j: int, depth: int) -> int:
    lo = j - depth + 1
    if env.min_site is not None:
        lo = max(lo, env.min_site)
    return lo


def compute_W(env: Environment, j: int, tol: float = 1e-10, depth: int = 64,
              max_depth: int = 1 << 20) -> tuple[float, float]:
    """W_j = sum_{k <= j} Pi_{k,j} truncated on the left, with an error bound.

    The bound is Pi_{lo,j} times the geometric majorant of the omitted series;
    it is exactly zero when the truncated product vanishes.
    """
    wbar = _w_majorant(env.model)
    while True:
        lo = _left_limit(env, j, depth)
        w, p = _kernels.w_recursion(env.rho(lo, j))
        bound = float(p[-1] * wbar)
        if bound <= tol:
            return float(w[-1]), bound
        if depth >= max_depth or (env.min_site is not None and lo == env.min_site):
            raise ToleranceError(f"W_{j}: bound {bound:.3g} > tol {tol} at depth {depth}")
        depth *= 2


# ---------------------------------------------------------------------------
# ladder decomposition


@dataclass
class LadderDecomposition:
    nu: np.ndarray                    # nu_0 = 0, nu_1, ..., nu_K
    beta: Optional[np.ndarray] = None  # beta_1..beta_K
    error: Optional[np.ndarray] = None  # truncation bound per block
    left_law: str = "P"
    tol: float = 1e-10
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.nu) - 1

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.nu)


def ladder_locations(env: Environment, K: int, chunk: int = 1 << 16,
                     scan_cap: int = 1 << 31) -> LadderDecomposition:
    """The first K ladder locations to the right of the origin."""
    nu = np.zeros(K + 1, dtype=np.int64)
    found = 0
    start = 0
    hi = max(chunk, 2 * K) - 1
    while found < K:
        if hi > scan_cap:
            raise RuntimeError(f"ladder scan passed the cap of {scan_cap} sites with {found} of {K} found")
        lr = env.log_rho(0, hi)
        out = np.empty(K - found, dtype=np.int64)
        k = _kernels.ladder_scan(lr, start, out, K - found)
        nu[found + 1:found + 1 + k] = out[:k]
        found += k
        if found:
            start = int(nu[found])
        hi = 2 * hi + 1
    return LadderDecomposition(nu=nu, left_law=env.left_law)


def beta_blocks(env: Environment, K: int, tol: float = 1e-10, depth: int = 64,
                relative: bool = True, max_depth: int = 1 << 20) -> LadderDecomposition:
    """Ladder locations with the quenched block crossing expectations beta_i.

    beta_i = (nu_i - nu_{i-1}) + 2 sum_{j=nu_{i-1}}^{nu_i - 1} W_j.  The W
    recursion is started ``depth`` sites left of the origin (or at the end of
    a fixed left portion).  The truncation error of W_j is bounded by
    Pi_{lo,j} times the geometric majorant, and the per-block bound is twice
    the block sum of those.  With ``relative`` the tolerance applies to
    error / beta_i, otherwise to the absolute error.
    """
    dec = ladder_locations(env, K)
    nu = dec.nu
    wbar = _w_majorant(env.model)
    while True:
        lo = _left_limit(env, 0, depth)
        rho = env.rho(lo, int(nu[-1]) - 1)
        w, p = _kernels.w_recursion(rho)
        w = w[-lo:] if lo < 0 else w
        p = p[-lo:] if lo < 0 else p
        starts = nu[:-1]
        sums = np.add.reduceat(w, starts) if len(w) else np.zeros(K)
        beta = np.diff(nu).astype(float) + 2.0 * sums
        err = 2.0 * wbar * np.add.reduceat(p, starts)
        scale = beta if relative else 1.0
        if np.all(err <= tol * scale):
            break
        if depth >= max_depth or (env.min_site is not None and lo == env.min_site):
            raise ToleranceError(f"beta truncation bound {np.max(err / scale):.3g} > tol {tol} at depth {depth}")
        depth *= 2
    return LadderDecomposition(nu=nu, beta=beta, error=err, left_law=env.left_law, tol=tol,
                               meta={"depth": depth, "relative": relative})


def tail_constant(samples, kappa: float, band: tuple[float, float] = (0.001, 0.01),
                  n_boot: int = 200, seed: int = 0, level: float = 0.95) -> tuple[float, tuple[float, float]]:
    """Estimate C0 in P(X > x) ~ C0 x^-kappa from upper order statistics.

    ``band`` gives the fractions (k_lo/n, k_hi/n) of the sample used: the
    estimate is the mean of x_(k)^kappa * k/n over that band of the descending
    order statistics.  The interval is a percentile bootstrap.
    """
    x = np.asarray(samples, float)
    n = len(x)
    if n < 1000:
        raise ValueError("tail_constant needs at least 1000 samples")
    k_lo = max(1, int(round(band[0] * n)))
    k_hi = int(round(band[1] * n))
    if k_hi - k_lo < 10:
        raise ValueError(f"order-statistic band too small ({k_hi - k_lo + 1} points)")

    def est(v):
        d = np.sort(v)[::-1]
        k = np.arange(k_lo, k_hi + 1)
        xk = d[k - 1]
        if np.any(xk <= 0):
            raise ValueError("samples in the tail band must be positive")
        return float(np.mean(xk ** kappa * k / n))

    c0 = est(x)
    rng = np.random.default_rng(seed)
    boots = np.array([est(x[rng.integers(0, n, n)]) for _ in range(n_boot)])
    a = (1 - level) / 2
    return c0, (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a)))


def q_blocks(model: EnvModel, seed: int, K: int, tol: float = 1e-10) -> LadderDecomposition:
    """K beta blocks from a single environment sampled under Q."""
    env = q_environment(model, seed, tol=tol)
    return beta_blocks(env, K, tol=tol)


def quenched_mean_hitting(env: Environment, n: int, tol: float = 1e-10, depth: int = 4096,
                          max_depth: int = 1 << 24) -> tuple[float, float]:
    """E_omega[T_n] = sum_{x=0}^{n-1} (1 + 2 W_x), with a truncation bound on the W series.

    Returns (value, bound); the tolerance is relative to the value.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    wbar = _w_majorant(env.model)
    while True:
        lo = _left_limit(env, 0, depth)
        w, p = _kernels.w_recursion(env.rho(lo, n - 1))
        off = -lo
        val = float(np.sum(1.0 + 2.0 * w[off:]))
        bound = float(2.0 * wbar * np.sum(p[off:]))
        if bound <= tol * val:
            return val, bound
        if depth >= max_depth or (env.min_site is not None and lo == env.min_site):
            raise ToleranceError(f"E[T_{n}]: bound {bound:.3g} above tol at depth {depth}")
        depth *= 2
