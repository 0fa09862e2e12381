"""Cadlag paths and Skorohod-type distances between them.

Paths are piecewise constant or piecewise linear with finitely many
breakpoints.  Distances on [0, t]:

* ``d_uniform``: the sup distance, exact on the union of breakpoints.
* ``d_M1``: the Frechet distance between completed graphs under the ground
  metric max(|du|, |dv|), found by bisection over a free-space decision.
* ``d_J1``: bisection over a decision on time changes for step functions.

``d_infty`` integrates e^-t (d_t ^ 1) over a finite window, and ``prohorov``
compares two equal-weight empirical path measures.
"""
from __future__ import annotations

import csv
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from . import _kernels


def at_horizon(times, horizon: float) -> np.ndarray:
    """Mask of grid times that coincide with the horizon up to rounding."""
    return np.abs(np.asarray(times, float) - horizon) <= 1e-12 * max(1.0, abs(horizon))


class CadlagPath:
    """A right-continuous path on [0, horizon] with finitely many breakpoints.

    ``t`` holds the breakpoints, starting at 0 and ending at the horizon.
    ``left[j]`` is x(t_j-) and ``right[j]`` is x(t_j).  On [t_j, t_{j+1}) the
    path is the constant right[j] (kind "constant") or runs linearly from
    right[j] to left[j+1] (kind "linear").
    """

    __slots__ = ("t", "left", "right", "kind")

    def __init__(self, t, left, right, kind: str = "constant", check: bool = True):
        self.t = np.asarray(t, dtype=float)
        self.left = np.asarray(left, dtype=float)
        self.right = np.asarray(right, dtype=float)
        self.kind = kind
        if check:
            self._check()

    def _check(self):
        t = self.t
        if self.kind not in ("constant", "linear"):
            raise ValueError(f"unknown path kind {self.kind!r}")
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("a path needs at least the breakpoints 0 and horizon")
        if t[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if not (len(self.left) == len(self.right) == len(t)):
            raise ValueError("left/right values must match the breakpoints")
        if self.left[0] != self.right[0]:
            raise ValueError("left value at 0 must equal the value at 0")
        if self.kind == "constant" and np.any(self.left[1:] != self.right[:-1]):
            raise ValueError("constant path: left limits must equal the previous value")

    # -- construction -------------------------------------------------------

    @classmethod
    def step(cls, times, values, horizon: float) -> "CadlagPath":
        """Step path equal to values[j] on [times[j], times[j+1]); times[0] must be 0."""
        times = np.asarray(times, float)
        values = np.asarray(values, float)
        end = at_horizon(times, horizon)
        keep = (times < horizon) & ~end
        final = values[end][-1] if end.any() else values[keep][-1]
        times = times[keep]
        values = values[keep]
        t = np.append(times, float(horizon))
        right = np.append(values, final)
        left = np.empty_like(right)
        left[0] = right[0]
        left[1:] = right[:-1]
        return cls(t, left, right, "constant")

    @classmethod
    def linear(cls, times, values) -> "CadlagPath":
        """Continuous piecewise linear path through (times[j], values[j])."""
        v = np.asarray(values, float)
        return cls(times, v, v.copy(), "linear")

    @classmethod
    def zero(cls, horizon: float) -> "CadlagPath":
        return cls([0.0, horizon], [0.0, 0.0], [0.0, 0.0], "constant")

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def __len__(self):
        return len(self.t)

    def __repr__(self):
        return f"CadlagPath(kind={self.kind}, breakpoints={len(self.t)}, horizon={self.horizon:g})"

    # -- evaluation ---------------------------------------------------------

    def __call__(self, s):
        s_arr = np.asarray(s, float)
        if np.any(s_arr < 0) or np.any(s_arr > self.horizon):
            raise ValueError("evaluation outside [0, horizon]")
        idx = np.searchsorted(self.t, s_arr, side="right") - 1
        if self.kind == "constant":
            out = self.right[idx]
        else:
            nxt = np.minimum(idx + 1, len(self.t) - 1)
            dt = self.t[nxt] - self.t[idx]
            frac = np.where(dt > 0, (s_arr - self.t[idx]) / np.where(dt > 0, dt, 1.0), 0.0)
            out = self.right[idx] + frac * (self.left[nxt] - self.right[idx])
            out = np.where(idx == len(self.t) - 1, self.right[idx], out)
        return out if np.ndim(s) else float(out)

    def left_limit(self, s):
        """x(s-) (equal to x(0) at s = 0)."""
        s_arr = np.asarray(s, float)
        idx = np.searchsorted(self.t, s_arr, side="left")
        at_bp = (idx < len(self.t)) & (self.t[np.minimum(idx, len(self.t) - 1)] == s_arr)
        val = self(s_arr)
        out = np.where(at_bp, self.left[np.minimum(idx, len(self.t) - 1)], val)
        return out if np.ndim(s) else float(out)

    def restrict(self, s: float) -> "CadlagPath":
        """The path restricted to [0, s]."""
        if s > self.horizon or s <= 0:
            raise ValueError(f"restriction time {s} outside (0, {self.horizon}]")
        if s == self.horizon:
            return self
        k = int(np.searchsorted(self.t, s, side="left"))
        if self.t[k] == s:
            return CadlagPath(self.t[:k + 1], self.left[:k + 1], self.right[:k + 1], self.kind, check=False)
        v = self(np.array([s]))[0]
        t = np.append(self.t[:k], s)
        left = np.append(self.left[:k], v)
        right = np.append(self.right[:k], v)
        return CadlagPath(t, left, right, self.kind, check=False)

    def jump_count(self) -> int:
        return int(np.count_nonzero(self.left != self.right))

    def compress(self) -> "CadlagPath":
        """Drop breakpoints that carry no information (no jump, no kink)."""
        if len(self.t) <= 2:
            return self
        keep = np.ones(len(self.t), bool)
        inner = np.arange(1, len(self.t) - 1)
        nojump = self.left[inner] == self.right[inner]
        if self.kind == "constant":
            keep[inner] = ~nojump
        else:
            s1 = (self.left[inner] - self.right[inner - 1]) / (self.t[inner] - self.t[inner - 1])
            s2 = (self.left[inner + 1] - self.right[inner]) / (self.t[inner + 1] - self.t[inner])
            keep[inner] = ~(nojump & (s1 == s2))
        if keep.all():
            return self
        return CadlagPath(self.t[keep], self.left[keep], self.right[keep], self.kind, check=False)

    def sup_abs(self) -> float:
        return float(max(np.max(np.abs(self.left)), np.max(np.abs(self.right))))

    def to_rows(self):
        """(t, left, right) rows for text export."""
        return np.column_stack([self.t, self.left, self.right])


def reflect_path(x: CadlagPath) -> CadlagPath:
    """Spatial reflection: t -> -x(t)."""
    return CadlagPath(x.t, -x.left, -x.right, x.kind, check=False)


def shift_linear(x: CadlagPath, m: float) -> CadlagPath:
    """t -> x(t) - m t."""
    if m == 0:
        return x
    return CadlagPath(x.t, x.left - m * x.t, x.right - m * x.t, "linear", check=False)


def scale_path(x: CadlagPath, c: float) -> CadlagPath:
    return CadlagPath(x.t, c * x.left, c * x.right, x.kind, check=False)


def compose(x: CadlagPath, y: CadlagPath, grid: np.ndarray) -> CadlagPath:
    """x o y sampled on a grid, as a step path (y nondecreasing into x's domain)."""
    vals = x(np.clip(y(grid), 0.0, x.horizon))
    return CadlagPath.step(grid, vals, y.horizon)


# ---------------------------------------------------------------------------
# completed graphs


def completed_graph(x: CadlagPath, t: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
    """Vertices (u, v) of the completed graph of x on [0, t].

    Each jump contributes a vertical segment from x(u-) to x(u); between
    breakpoints the graph is the (horizontal or sloped) segment of the path.
    """
    if t is not None:
        x = x.restrict(t)
    n = len(x.t)
    jump = x.left[1:] != x.right[1:]
    count = 1 + (n - 1) + int(np.count_nonzero(jump))
    u = np.empty(count)
    v = np.empty(count)
    u[0] = 0.0
    v[0] = x.right[0]
    # position of the left-limit vertex of breakpoint j (j >= 1)
    pos = 1 + np.arange(n - 1) + np.concatenate([[0], np.cumsum(jump)[:-1]])
    u[pos] = x.t[1:]
    v[pos] = x.left[1:]
    jpos = pos[jump] + 1
    u[jpos] = x.t[1:][jump]
    v[jpos] = x.right[1:][jump]
    return u, v


# ---------------------------------------------------------------------------
# distances


def _common_horizon(x: CadlagPath, y: CadlagPath, t: Optional[float]) -> float:
    if t is None:
        if x.horizon != y.horizon:
            raise ValueError(f"mismatched horizons {x.horizon} and {y.horizon}; pass t explicitly")
        return x.horizon
    if t > x.horizon or t > y.horizon:
        raise ValueError(f"t = {t} exceeds a path horizon ({x.horizon}, {y.horizon})")
    return float(t)


def d_uniform(x: CadlagPath, y: CadlagPath, t: Optional[float] = None) -> float:
    """sup_{s <= t} |x(s) - y(s)|, exact for piecewise linear paths."""
    t = _common_horizon(x, y, t)
    g = np.union1d(x.t[x.t <= t], y.t[y.t <= t])
    g = np.union1d(g, [t])
    d1 = np.max(np.abs(x(g) - y(g)))
    d2 = np.max(np.abs(x.left_limit(g) - y.left_limit(g)))
    return float(max(d1, d2))


def _bisect(decide: Callable[[float], bool], lo: float, hi: float, tol: float) -> float:
    """Smallest feasible value to within tol, given lo <= answer <= hi."""
    if decide(lo):
        return lo
    if hi - lo <= tol:
        return hi
    # grow the gap from the lower bound first: small eps means narrow bands
    gap = tol
    bad = lo
    good = hi
    while lo + gap < hi:
        if decide(lo + gap):
            good = lo + gap
            break
        bad = lo + gap
        gap *= 4.0
    while good - bad > tol:
        mid = 0.5 * (bad + good)
        if decide(mid):
            good = mid
        else:
            bad = mid
    return good


def m1_decide(x: CadlagPath, y: CadlagPath, t: float, eps: float) -> bool:
    pu, pv = completed_graph(x, t)
    qu, qv = completed_graph(y, t)
    return bool(_kernels.frechet_decide(pu, pv, qu, qv, float(eps)))


def d_M1(x: CadlagPath, y: CadlagPath, t: Optional[float] = None, tol: float = 1e-9) -> float:
    """Skorohod M1 distance on [0, t].

    Computed as the Frechet distance between the completed graphs with the
    max(|du|, |dv|) ground metric.  Lower bound: the distances of the graph
    endpoints; upper bound: the uniform distance.
    """
    t = _common_horizon(x, y, t)
    xr = x.restrict(t).compress()
    yr = y.restrict(t).compress()
    pu, pv = completed_graph(xr)
    qu, qv = completed_graph(yr)
    lo = max(abs(pv[0] - qv[0]), abs(pv[-1] - qv[-1]))
    hi = d_uniform(xr, yr)

    def decide(e):
        return _kernels.frechet_decide(pu, pv, qu, qv, float(e))

    return float(_bisect(decide, lo, max(hi, lo), tol))


def _step_arrays(x: CadlagPath, resolution: float) -> tuple[np.ndarray, np.ndarray, float, float]:
    """(breaks, values, x(t), error) of a step version of x within ``resolution``."""
    if x.kind == "constant":
        return x.t, x.right[:-1].copy(), float(x.right[-1]), 0.0
    starts = x.right[:-1]
    ends = x.left[1:]
    npieces = np.maximum(1, np.ceil(np.abs(ends - starts) / resolution)).astype(np.int64)
    if npieces.sum() > 5_000_000:
        raise ValueError("step refinement too fine; raise the resolution")
    seg = np.repeat(np.arange(len(starts)), npieces)
    k = np.arange(npieces.sum()) - np.repeat(np.cumsum(npieces) - npieces, npieces)
    frac = k / npieces[seg]
    tt = x.t[seg] + frac * (x.t[seg + 1] - x.t[seg])
    vals = starts[seg] + frac * (ends[seg] - starts[seg])
    err = float(np.max(np.abs(ends - starts) / npieces))
    return np.append(tt, x.t[-1]), vals, float(x.right[-1]), err


def j1_decide(x: CadlagPath, y: CadlagPath, t: float, eps: float) -> bool:
    """Feasibility of J1 distance <= eps on [0, t] for step paths."""
    a, X, xt, _ = _step_arrays(x.restrict(t), np.inf)
    b, Y, yt, _ = _step_arrays(y.restrict(t), np.inf)
    return bool(_kernels.j1_decide(a, X, b, Y, xt, yt, float(eps)))


def d_J1(x: CadlagPath, y: CadlagPath, t: Optional[float] = None, tol: float = 1e-9,
         resolution: float = 1e-3, return_error: bool = False):
    """Skorohod J1 distance on [0, t].

    Step paths are handled exactly (to tol).  Linear pieces are first replaced
    by steps of height at most ``resolution``; the refinement error of both
    paths is then added to the tolerance (returned with ``return_error``).
    """
    t = _common_horizon(x, y, t)
    xr = x.restrict(t).compress()
    yr = y.restrict(t).compress()
    a, X, xt, ex = _step_arrays(xr, resolution)
    b, Y, yt, ey = _step_arrays(yr, resolution)
    lo = max(abs(X[0] - Y[0]), abs(xt - yt))
    hi = max(d_uniform(CadlagPath.step(a[:-1], X, t) if xr.kind == "linear" else xr,
                       CadlagPath.step(b[:-1], Y, t) if yr.kind == "linear" else yr), lo)
    # the uniform bound ignores the terminal value of refined paths
    hi = max(hi, abs(xt - yt))

    def decide(e):
        return _kernels.j1_decide(a, X, b, Y, xt, yt, float(e))

    if ex + ey > 0:
        # the refined answer is only good to ex + ey, so bisecting below that
        # buys nothing; M1 <= J1 gives a cheap lower bracket
        lo = min(max(lo, d_M1(xr, yr, tol=tol) - tol - ex - ey), hi)
        tol = max(tol, ex + ey)
    d = float(_bisect(decide, lo, hi, tol))
    if return_error:
        return d, tol + ex + ey
    return d


_METRICS = {"M1": d_M1, "J1": d_J1, "U": d_uniform}


def metric(kind: str) -> Callable:
    try:
        return _METRICS[kind]
    except KeyError:
        raise ValueError(f"unknown metric {kind!r}; choose from {sorted(_METRICS)}") from None


def d_infty(kind: str, x: CadlagPath, y: CadlagPath, cap: float = 12.0, step: float = 0.05,
            tol: float = 1e-9) -> tuple[float, float]:
    """Integral of e^-t (d_t(x, y) ^ 1) over [0, cap] plus the tail bound e^-cap.

    Returns (value, error) where error is the tail bound.  d_t is evaluated on
    a uniform grid and linearly interpolated; the e^-t weight is integrated
    exactly against that interpolant.
    """
    if cap > x.horizon or cap > y.horizon:
        raise ValueError("horizon cap exceeds a path horizon")
    f = metric(kind)
    grid = np.linspace(0.0, cap, int(round(cap / step)) + 1)
    vals = np.empty(len(grid))
    vals[0] = min(abs(x(0.0) - y(0.0)), 1.0)
    for i, s in enumerate(grid[1:], 1):
        d = f(x, y, s) if kind == "U" else f(x, y, s, tol=tol)
        vals[i] = min(d, 1.0)
    # e^-t integrated exactly against the piecewise linear interpolant of d_t
    a = grid[:-1]
    h = np.diff(grid)
    i0 = np.exp(-a) * -np.expm1(-h)
    i1 = np.exp(-a) * (1.0 - np.exp(-h) * (1.0 + h))
    slope = np.diff(vals) / h
    value = float(np.sum(vals[:-1] * i0 + slope * i1))
    return value, float(np.exp(-cap))


# ---------------------------------------------------------------------------
# time change and Prohorov


def time_change_lambda_eps(nu: np.ndarray, eps: float, horizon: float) -> CadlagPath:
    """lambda_eps(t) = eps * max{k : eps nu_k <= t} as a step path on [0, horizon]."""
    nu = np.asarray(nu)
    times = eps * nu
    if times[-1] <= horizon:
        raise ValueError("ladder locations do not cover the horizon")
    k = np.searchsorted(times, horizon, side="right")
    times = times[:k]
    vals = eps * np.arange(k)
    return CadlagPath.step(times, vals, horizon)


def lambda_zero(nubar: float, horizon: float) -> CadlagPath:
    """lambda_0(t) = t / nubar."""
    return CadlagPath.linear([0.0, horizon], [0.0, horizon / nubar])


def distance_matrix(xs: Sequence[CadlagPath], ys: Sequence[CadlagPath], kind: str = "M1",
                    t: Optional[float] = None, tol: float = 1e-9) -> np.ndarray:
    f = metric(kind)
    out = np.empty((len(xs), len(ys)))
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            out[i, j] = f(x, y, t) if kind == "U" else f(x, y, t, tol=tol)
    return out


def prohorov_from_matrix(D: np.ndarray, tol: float = 1e-9) -> float:
    """Prohorov distance between two equal-weight empirical measures.

    For N atoms each, rho <= alpha exactly when a matching on the pairs at
    distance <= alpha leaves at most alpha N atoms unmatched (Strassen's
    theorem in its marriage-lemma form).  The smallest such alpha is found by
    bisection, capped at 1.
    """
    D = np.asarray(D, float)
    n = D.shape[0]
    if D.shape != (n, n) or n == 0:
        raise ValueError("Prohorov needs a square nonempty distance matrix")

    def feasible(alpha):
        g = csr_matrix((D <= alpha).astype(np.int8))
        match = maximum_bipartite_matching(g, perm_type="column")
        return n - np.count_nonzero(match >= 0) <= alpha * n

    lo, hi = 0.0, 1.0
    if feasible(0.0):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def prohorov(mu: Sequence[CadlagPath], nu: Sequence[CadlagPath], kind: str = "M1",
             t: Optional[float] = None, tol: float = 1e-9, max_n: int = 2000) -> float:
    """Prohorov distance between two empirical path measures with N atoms each."""
    if len(mu) != len(nu):
        n = min(len(mu), len(nu))
        mu, nu = list(mu)[:n], list(nu)[:n]
    if len(mu) > max_n:
        raise ValueError(f"sample count {len(mu)} exceeds {max_n}")
    return prohorov_from_matrix(distance_matrix(mu, nu, kind, t, tol), tol)


def write_matrix_csv(path, D: np.ndarray, header_line: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_line:
            fh.write(header_line.rstrip("\n") + "\n")
        w = csv.writer(fh)
        w.writerow(["i"] + [f"j{j}" for j in range(D.shape[1])])
        for i, row in enumerate(D):
            w.writerow([i] + [repr(float(v)) for v in row])
