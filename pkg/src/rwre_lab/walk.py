"""Quenched walk simulation and the scaled path processes built from it."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from . import _kernels
from .env import (Environment, EnvModel, LadderDecomposition, beta_blocks, derive_seed,
                  q_environment, require_limit_regime, solve_kappa, velocity)
from .pathmetric import CadlagPath, at_horizon

_BIG = np.iinfo(np.int64).max // 4


class StepBudgetError(RuntimeError):
    """Raised when a walk exceeds its step budget before reaching its target."""


@dataclass
class WalkTrace:
    """Hitting times T_0 = 0 < T_1 < ... < T_n of one walk, plus optional extras.

    ``traj`` is X_0..X_N when the trajectory was recorded.  ``visits[p]``
    counts visits to nu_p before nu_{p+1} is hit when a ladder was supplied.
    """

    T: np.ndarray
    seed: int
    steps: int
    traj: Optional[np.ndarray] = None
    visits: Optional[np.ndarray] = None
    ladder: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.T) - 1

    def running_max(self) -> np.ndarray:
        if self.traj is None:
            raise ValueError("trajectory was not recorded")
        return _kernels.running_max(self.traj)

    def to_columns(self) -> np.ndarray:
        return np.column_stack([np.arange(len(self.T)), self.T])


def walk_key(seed: int) -> np.uint64:
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


def _run(env: Environment, seed: int, target: int, max_steps: int, nhits: int,
         record: bool, ladder: Optional[np.ndarray]) -> WalkTrace:
    lo = -256
    if env.min_site is not None:
        lo = max(lo, env.min_site)
    hi = min(target, max_steps) + 256 if target < _BIG else min(max_steps, 1 << 14) + 256
    state = np.zeros(4, dtype=np.int64)
    hits = np.zeros(nhits, dtype=np.int64)
    traj = np.zeros(max_steps + 1 if record else 0, dtype=np.int32 if max_steps < 2 ** 31 else np.int64)
    lad = np.asarray(ladder[1:] if ladder is not None else np.zeros(0), dtype=np.int64)
    visits = np.zeros(len(lad), dtype=np.int64)
    if len(lad):
        visits[0] = 1
    key = walk_key(seed)
    while True:
        omega = env.materialize(lo, hi)
        wlo = env.window[0]
        status = _kernels.walk_steps(omega, wlo, state, key, max_steps, target, hits, traj, lad, visits)
        if status == 0 or status == 1:
            break
        if status == 2:
            if env.min_site is not None and state[0] < env.min_site:
                raise RuntimeError(f"walk left the fixed left portion of the environment (site {state[0]})")
            lo = 2 * lo if env.min_site is None else max(2 * lo, env.min_site)
        else:
            hi = 2 * hi
    if status == 1 and target < _BIG:
        raise StepBudgetError(f"step budget {max_steps} exhausted at site {state[2]} before reaching {target}")
    xmax = int(state[2])
    T = np.concatenate([[0], hits[:min(xmax, nhits)]])
    return WalkTrace(T=T, seed=int(seed), steps=int(state[1]),
                     traj=traj[:state[1] + 1] if record else None,
                     visits=visits if len(lad) else None, ladder=ladder)


def simulate_hitting_times(env: Environment, n: int, seed: int, max_steps: int = _BIG,
                           ladder: Optional[np.ndarray] = None, record_trajectory: bool = False) -> WalkTrace:
    """Run the walk from 0 until it first hits n, recording T_1..T_n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _run(env, seed, n, max_steps, n, record_trajectory, ladder)


def simulate_steps(env: Environment, nsteps: int, seed: int, ladder: Optional[np.ndarray] = None) -> WalkTrace:
    """Run the walk for exactly nsteps steps, recording the trajectory and hitting times."""
    return _run(env, seed, _BIG, nsteps, nsteps, True, ladder)


def hitting_times_many(env: Environment, n: int, seeds, max_steps: int = _BIG, lo: int = -256) -> np.ndarray:
    """T_n for many walk seeds in one environment (window grows as needed).

    Walks that use up ``max_steps`` before hitting n are reported as -1.
    """
    keys = np.array([walk_key(s) for s in seeds], dtype=np.uint64)
    out = np.full(len(keys), -1, dtype=np.int64)
    hi = n
    if env.min_site is not None:
        lo = max(lo, env.min_site)
    todo = np.arange(len(keys))
    while len(todo):
        omega = env.materialize(lo, hi)
        res = np.empty(len(todo), dtype=np.int64)
        _kernels.hitting_time_batch(omega, env.window[0], keys[todo], n, max_steps, res)
        out[todo] = res
        todo = todo[res == -2]
        if len(todo):
            if env.min_site is not None and lo == env.min_site:
                raise RuntimeError("walk left the fixed left portion of the environment")
            lo = 2 * lo if env.min_site is None else max(2 * lo, env.min_site)
    return out


def positions_many(env: Environment, nsteps: int, seeds, lo: int = -256) -> np.ndarray:
    """X_nsteps for many walk seeds in one environment (window grows as needed)."""
    keys = np.array([walk_key(s) for s in seeds], dtype=np.uint64)
    out = np.zeros(len(keys), dtype=np.int64)
    if env.min_site is not None:
        lo = max(lo, env.min_site)
    todo = np.arange(len(keys))
    while len(todo):
        omega = env.materialize(lo, nsteps)
        wlo = env.window[0]
        res = np.empty(len(todo), dtype=np.int64)
        _kernels.position_batch(omega, wlo, keys[todo], nsteps, res)
        out[todo] = res
        todo = todo[res < wlo]
        if len(todo):
            if env.min_site is not None and wlo == env.min_site:
                raise RuntimeError("walk left the fixed left portion of the environment")
            lo = 2 * min(lo, wlo) if env.min_site is None else max(2 * min(lo, wlo), env.min_site)
    return out


# ---------------------------------------------------------------------------
# centering


@dataclass
class CenteringTable:
    """Centering and scaling constants for one environment model.

    ``beta_sample`` is a large sample of Q-blocks; D'(x) = E_Q[beta 1{beta <= x}]
    is its truncated mean, extended beyond the sample range with the fitted
    tail C0 x^-kappa when that is needed.
    """

    kappa: float
    v: float
    nubar: float
    nubar_se: float
    betabar: float
    betabar_se: float
    c0: float = float("nan")
    beta_sample: Optional[np.ndarray] = field(default=None, repr=False)
    tol_delta: float = 1e-6

    def __post_init__(self):
        if self.beta_sample is not None:
            s = np.sort(np.asarray(self.beta_sample, float))
            self._sorted = s
            self._cum = np.concatenate([[0.0], np.cumsum(s)])

    def Dprime(self, x):
        """E_Q[beta 1{beta <= x}] estimated from the block sample."""
        if self.beta_sample is None:
            raise ValueError("no block sample attached")
        x = np.asarray(x, float)
        s = self._sorted
        n = len(s)
        k = np.searchsorted(s, x, side="right")
        out = self._cum[k] / n
        # beyond the last order statistics, add the regularly varying tail part
        top = s[-max(10, n // 1000)]
        if np.isfinite(self.c0):
            beyond = x > top
            if np.any(beyond):
                kt = np.searchsorted(s, top, side="right")
                base = self._cum[kt] / n
                out = np.where(beyond, base + self._tail_integral(top, x), out)
        return out if out.ndim else float(out)

    def _tail_integral(self, a, x):
        """int_a^x u dF(u) for P(beta > u) = C0 u^-kappa."""
        k = self.kappa
        c = self.c0
        if abs(k - 1.0) < 1e-12:
            return c * np.log(np.maximum(x, a) / a)
        return c * k / (1.0 - k) * (np.maximum(x, a) ** (1.0 - k) - a ** (1.0 - k))

    def D(self, x):
        """D(x) = D'(x) / nubar."""
        return self.Dprime(x) / self.nubar

    def delta(self, x: float) -> float:
        """Numerical inverse of u -> u D(u) at x (bisection)."""
        f = lambda u: u * self.D(u) - x
        lo, hi = 1.0, max(2.0, 2.0 * x)
        while f(hi) < 0:
            hi *= 2.0
        return float(optimize.brentq(f, lo, hi, xtol=self.tol_delta * x, rtol=1e-15, maxiter=500))

    @property
    def A(self) -> float:
        """Slope of D(x) / log x, read off at the top of the sample."""
        x = float(self._sorted[-max(10, len(self._sorted) // 1000)])
        return float(self.D(x) / np.log(x))

    def scaled_hitting_time(self, T: np.ndarray, n: int) -> np.ndarray:
        """The averaged-law normalisation of T_n."""
        k = self.kappa
        if k < 1:
            return T / n ** (1.0 / k)
        if k == 1:
            return (T - n * self.D(n)) / n
        return (T - n / self.v) / n ** (1.0 / k)

    def scaled_position(self, X: np.ndarray, n: int) -> np.ndarray:
        """The averaged-law normalisation of X_n."""
        k = self.kappa
        if k < 1:
            return X / n ** k
        if k == 1:
            d = self.delta(n)
            return (X - d) / (n / (self.A * np.log(n)) ** 2)
        return (X - n * self.v) / (self.v ** (1 + 1.0 / k) * n ** (1.0 / k))


def block_statistics(dec: LadderDecomposition, kappa: float, tail_frac: float = 0.01) -> dict:
    """nubar and betabar with standard errors from one long run of blocks.

    Block lengths and betas along one environment are stationary under Q and
    only weakly dependent, so batch means give the standard errors.  The
    betabar estimate adds the fitted tail above the top ``tail_frac`` of the
    sample to the truncated mean, which removes most of the heavy-tail noise.
    """
    from .env import tail_constant

    lengths = dec.lengths.astype(float)
    beta = dec.beta
    n = len(beta)
    nb = 50
    bl = n // nb

    def batch_se(v):
        m = v[:nb * bl].reshape(nb, bl).mean(axis=1)
        return float(m.std(ddof=1) / np.sqrt(nb))

    out = {"nubar": float(lengths.mean()), "nubar_se": batch_se(lengths), "K": n}
    if kappa > 1:
        x0 = float(np.quantile(beta, 1.0 - tail_frac))
        c0, _ = tail_constant(beta, kappa, band=(0.2 * tail_frac, tail_frac), n_boot=20)
        trunc = np.where(beta <= x0, beta, 0.0)
        tail = c0 * kappa / (kappa - 1.0) * x0 ** (1.0 - kappa)
        out["betabar"] = float(trunc.mean() + tail)
        out["betabar_raw"] = float(beta.mean())
        out["betabar_se"] = batch_se(trunc)
        out["c0"] = c0
    else:
        out["betabar"] = float("inf")
        out["betabar_raw"] = float(beta.mean())
        out["betabar_se"] = float("nan")
    return out


def build_centering(model: EnvModel, seed: int, K: int = 100_000, tol: float = 1e-10) -> CenteringTable:
    """Centering table from K Q-blocks of one environment."""
    from .env import tail_constant

    kappa = solve_kappa(model)
    require_limit_regime(kappa)
    v, _ = velocity(model)
    dec = beta_blocks(q_environment(model, seed, tol=tol), K, tol=tol)
    st = block_statistics(dec, kappa)
    c0, _ = tail_constant(dec.beta, kappa, n_boot=20)
    return CenteringTable(kappa=kappa, v=v, nubar=st["nubar"], nubar_se=st["nubar_se"],
                          betabar=st["betabar"], betabar_se=st["betabar_se"], c0=c0,
                          beta_sample=dec.beta)


# ---------------------------------------------------------------------------
# path processes


def _regime(kappa: float) -> str:
    require_limit_regime(kappa)
    if kappa < 1:
        return "small"
    if kappa == 1:
        return "one"
    return "large"


def build_T_path(trace: WalkTrace, eps: float, centering: CenteringTable, horizon: float = 1.0) -> CadlagPath:
    """t -> scaled and centred T_{t/eps} on [0, horizon]; jumps at t = eps k."""
    kmax = int(np.floor(horizon / eps + 1e-9))
    if kmax > trace.n:
        raise ValueError(f"horizon needs T up to {kmax}, trace has {trace.n}")
    T = trace.T[:kmax + 1].astype(float)
    k = np.arange(kmax + 1)
    times = eps * k
    reg = _regime(centering.kappa)
    kap = centering.kappa
    if reg == "small":
        path = CadlagPath.step(times, eps ** (1.0 / kap) * T, horizon)
        return path
    if reg == "one":
        slope = centering.D(1.0 / eps)           # per unit of t/eps
        scale = eps
    else:
        slope = 1.0 / centering.v
        scale = eps ** (1.0 / kap)
    return _sawtooth(times, scale * T, scale * slope / eps, horizon)


def _sawtooth(times: np.ndarray, jump_vals: np.ndarray, rate: float, horizon: float) -> CadlagPath:
    """Path equal to jump_vals[k] - rate * t on [times[k], times[k+1])."""
    end = at_horizon(times, horizon)
    keep = (times < horizon) & ~end
    final = jump_vals[end][-1] if end.any() else jump_vals[keep][-1]
    times = times[keep]
    vals = jump_vals[keep]
    t = np.append(times, horizon)
    right = np.append(vals, final) - rate * t
    left = np.empty_like(right)
    left[0] = right[0]
    # the piece on [t_k, t_{k+1}) starts from vals[k]; its left limit at t_{k+1} too
    left[1:] = vals[: len(t) - 1] - rate * t[1:]
    return CadlagPath(t, left, right, "linear", check=False)


def build_chi_paths(trace: WalkTrace, eps: float, centering: CenteringTable,
                    horizon: float = 1.0) -> tuple[CadlagPath, CadlagPath]:
    """(chi_eps, chi*_eps): scaled walk position and running maximum."""
    if trace.traj is None:
        raise ValueError("trajectory needed")
    kmax = int(np.floor(horizon / eps + 1e-9))
    if kmax >= len(trace.traj):
        raise ValueError(f"horizon needs {kmax} steps, trajectory has {len(trace.traj) - 1}")
    X = trace.traj[:kmax + 1].astype(float)
    Xs = _kernels.running_max(trace.traj[:kmax + 1]).astype(float)
    times = eps * np.arange(kmax + 1)
    kap = centering.kappa
    reg = _regime(kap)
    out = []
    for Y in (X, Xs):
        if reg == "small":
            out.append(CadlagPath.step(times, eps ** kap * Y, horizon))
        elif reg == "one":
            d = centering.delta(1.0 / eps)
            scale = 1.0 / (eps * d * d)
            out.append(_sawtooth(times, scale * Y, scale * d, horizon))
        else:
            v = centering.v
            scale = v ** (-1.0 - 1.0 / kap) * eps ** (1.0 / kap)
            out.append(_sawtooth(times, scale * Y, scale * v / eps, horizon))
    return out[0], out[1]


def interpolated_T_path(trace: WalkTrace, eps: float, centering: CenteringTable,
                        horizon: float = 1.0) -> CadlagPath:
    """Scaled and centred linear interpolation of the hitting times."""
    kmax = int(np.ceil(horizon / eps - 1e-9))
    if kmax > trace.n:
        raise ValueError(f"horizon needs T up to {kmax}, trace has {trace.n}")
    T = trace.T[:kmax + 1].astype(float)
    times = eps * np.arange(kmax + 1)
    kap = centering.kappa
    reg = _regime(kap)
    if reg == "small":
        vals = eps ** (1.0 / kap) * T
    elif reg == "one":
        vals = eps * (T - np.arange(kmax + 1) * centering.D(1.0 / eps))
    else:
        vals = eps ** (1.0 / kap) * (T - np.arange(kmax + 1) / centering.v)
    path = CadlagPath.linear(times, vals)
    if times[-1] > horizon:
        path = path.restrict(horizon)
    return path


def phi_path(trace: WalkTrace) -> CadlagPath:
    """phi(t): inverse of x -> T~_x (linear interpolation of hitting times)."""
    return CadlagPath.linear(trace.T.astype(float), np.arange(trace.n + 1, dtype=float))


def walk_seeds(master: int, count: int, *path: int) -> list[int]:
    return [derive_seed(master, *path, i) for i in range(count)]


# ---------------------------------------------------------------------------
# exponential coupling of block crossing times


def escape_probabilities(env: Environment, nu: np.ndarray) -> np.ndarray:
    """p_i: from nu_{i-1}, probability of hitting nu_i before returning.

    p_i = omega_a / sum_{j=a}^{b-1} Pi_{a+1,j} with a = nu_{i-1}, b = nu_i and
    the empty product equal to 1.
    """
    nu = np.asarray(nu, dtype=np.int64)
    K = len(nu) - 1
    omega = env.omega(0, int(nu[-1]))
    lr = np.log1p(-omega) - np.log(omega)
    p = np.empty(K)
    for i in range(K):
        a, b = int(nu[i]), int(nu[i + 1])
        c = np.concatenate([[0.0], np.cumsum(lr[a + 1:b])])
        p[i] = omega[a] / float(np.sum(np.exp(c)))
    return p


def coupled_exponentials(p: np.ndarray, visits: np.ndarray, seed: int) -> np.ndarray:
    """Exp(1) weights tau_i coupled to the block crossings of one walk.

    The number of returns F_i = visits_i - 1 to nu_{i-1} is geometric with
    success probability p_i, so with c_i = -log(1 - p_i) it equals
    floor(tau_i / c_i) for an Exp(1) variable tau_i.  tau_i is completed
    inside that bucket with an independent uniform, which makes it exactly
    Exp(1) and a function of the walk plus independent noise.
    """
    p = np.asarray(p, float)
    F = np.asarray(visits[:len(p)], float) - 1.0
    if np.any(F < 0):
        raise ValueError("every block must be started (visits >= 1)")
    u = np.random.default_rng(derive_seed(seed, 0xE4)).uniform(size=len(p))
    c = -np.log1p(-p)
    return F * c - np.log1p(-u * p)
