"""Compiled inner loops.

Everything here is a plain numba function operating on numpy arrays.  The
public modules wrap these with validation and bookkeeping.
"""
import numpy as np
from numba import njit

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always")
def counter_uniform(key, i):
    """SplitMix64 output number ``i`` of the stream ``key``, as a double in [0, 1)."""
    z = key + (np.uint64(i) + _ONE) * _GAMMA
    return np.float64(_mix(z) >> _S11) * _INV53


@njit(cache=True)
def counter_uniforms(key, start, n):
    out = np.empty(n)
    for i in range(n):
        out[i] = counter_uniform(key, start + i)
    return out


# ---------------------------------------------------------------------------
# walk


@njit(cache=True)
def walk_steps(omega, lo, state, key, max_steps, target, hits, traj, ladder, visits):
    """Advance a nearest-neighbour walk in the environment ``omega``.

    ``omega[k]`` is the right-step probability at site ``lo + k``.  ``state``
    holds ``[x, t, xmax, p]`` and is updated in place so the caller can resume
    after growing the environment window.  ``hits[k-1]`` receives T_k for the
    first ``len(hits)`` sites.  ``traj`` (possibly empty) receives X_t at index
    t.  ``ladder`` lists nu_1 < nu_2 < ...; ``visits[p]`` counts the visits to
    nu_p before nu_{p+1} is first hit (with nu_0 = 0).

    Return codes: 0 target hit, 1 step budget used, 2 left edge of window
    reached, 3 right edge reached.
    """
    x = state[0]
    t = state[1]
    xmax = state[2]
    p = state[3]
    hi = lo + omega.shape[0] - 1
    nh = hits.shape[0]
    nl = ladder.shape[0]
    rec = traj.shape[0] > 0
    status = 0
    while True:
        if x >= target:
            status = 0
            break
        if t >= max_steps:
            status = 1
            break
        if x < lo:
            status = 2
            break
        if x > hi:
            status = 3
            break
        if counter_uniform(key, t) < omega[x - lo]:
            x += 1
        else:
            x -= 1
        t += 1
        if rec:
            traj[t] = x
        if x > xmax:
            xmax = x
            if x <= nh:
                hits[x - 1] = t
            if p < nl and x == ladder[p]:
                p += 1
                if p < nl:
                    visits[p] = 1
        elif p < nl:
            prev = 0
            if p > 0:
                prev = ladder[p - 1]
            if x == prev:
                visits[p] += 1
    state[0] = x
    state[1] = t
    state[2] = xmax
    state[3] = p
    return status


@njit(cache=True)
def hitting_time_batch(omega, lo, keys, n, max_steps, out):
    """T_n for many walks in one environment window, stopping at the window edges.

    ``out[r]`` is T_n, -1 when the step budget ran out first, or -2 when the
    walk left the window.
    """
    hi = lo + omega.shape[0] - 1
    for r in range(keys.shape[0]):
        key = keys[r]
        x = 0
        t = 0
        code = 0
        while x < n:
            if t >= max_steps:
                code = -1
                break
            if x < lo or x > hi:
                code = -2
                break
            if counter_uniform(key, t) < omega[x - lo]:
                x += 1
            else:
                x -= 1
            t += 1
        out[r] = t if code == 0 else code


@njit(cache=True)
def position_batch(omega, lo, keys, nsteps, out):
    """X_nsteps for many walks; ``out[r]`` is set to a sentinel below ``lo`` if the window is left."""
    hi = lo + omega.shape[0] - 1
    for r in range(keys.shape[0]):
        key = keys[r]
        x = 0
        bad = False
        for t in range(nsteps):
            if x < lo or x > hi:
                bad = True
                break
            if counter_uniform(key, t) < omega[x - lo]:
                x += 1
            else:
                x -= 1
        out[r] = x if not bad else lo - 2


# ---------------------------------------------------------------------------
# environment algebra


@njit(cache=True)
def w_recursion(rho):
    """W_j = rho_j (1 + W_{j-1}) started from zero, and the running products."""
    n = rho.shape[0]
    w_out = np.empty(n)
    p_out = np.empty(n)
    w = 0.0
    p = 1.0
    for j in range(n):
        w = rho[j] * (1.0 + w)
        p = p * rho[j]
        w_out[j] = w
        p_out[j] = p
    return w_out, p_out


@njit(cache=True)
def ladder_scan(logrho, start, out, count):
    """Scan ladder locations from site ``start`` (index into ``logrho``).

    Writes at most ``count`` locations into ``out`` and returns how many were
    found before the array ran out.
    """
    n = logrho.shape[0]
    k = 0
    s = 0.0
    j = start
    while j < n and k < count:
        s += logrho[j]
        j += 1
        if s < 0.0:
            out[k] = j
            k += 1
            s = 0.0
    return k


# ---------------------------------------------------------------------------
# Frechet decision under the Chebyshev ground metric


@njit(inline="always")
def _seg_window(px, py, ax, ay, bx, by, eps):
    lo = 0.0
    hi = 1.0
    d = bx - ax
    if d == 0.0:
        if abs(ax - px) > eps:
            return 1.0, 0.0
    else:
        t1 = (px - eps - ax) / d
        t2 = (px + eps - ax) / d
        if t1 > t2:
            t1, t2 = t2, t1
        lo = max(lo, t1)
        hi = min(hi, t2)
    d = by - ay
    if d == 0.0:
        if abs(ay - py) > eps:
            return 1.0, 0.0
    else:
        t1 = (py - eps - ay) / d
        t2 = (py + eps - ay) / d
        if t1 > t2:
            t1, t2 = t2, t1
        lo = max(lo, t1)
        hi = min(hi, t2)
    return lo, hi


@njit(cache=True)
def frechet_decide(pu, pv, qu, qv, eps):
    """Is the Chebyshev Frechet distance of two u-monotone polylines <= eps?

    Both polylines must have nondecreasing first coordinates.  Only segment
    pairs whose u-ranges come within eps of each other can carry free space,
    so each column of the free-space diagram is scanned on a band of rows.
    """
    n = pu.shape[0] - 1
    m = qu.shape[0] - 1
    if max(abs(pu[0] - qu[0]), abs(pv[0] - qv[0])) > eps:
        return False
    if max(abs(pu[n] - qu[m]), abs(pv[n] - qv[m])) > eps:
        return False
    if n == 0 or m == 0:
        # one curve is a single point: every vertex of the other must be close
        for i in range(n + 1):
            for j in range(m + 1):
                if max(abs(pu[i] - qu[j]), abs(pv[i] - qv[j])) > eps:
                    return False
        return True
    cur_lo = np.empty(m)
    cur_hi = np.empty(m)
    cur_st = np.full(m, -2, np.int64)
    nxt_lo = np.empty(m)
    nxt_hi = np.empty(m)
    nxt_st = np.full(m, -2, np.int64)
    # left boundary of the diagram: contiguous from the start
    j = 0
    while j < m:
        lo, hi = _seg_window(pu[0], pv[0], qu[j], qv[j], qu[j + 1], qv[j + 1], eps)
        if lo > hi or lo > 0.0:
            break
        cur_lo[j] = lo
        cur_hi[j] = hi
        cur_st[j] = 0
        if hi < 1.0:
            break
        j += 1
    bottom_open = True
    qtail = qu[1:]
    qhead = qu[:-1]
    for i in range(n):
        jl = np.searchsorted(qtail, pu[i] - eps)
        jh = np.searchsorted(qhead, pu[i + 1] + eps, side="right") - 1
        if jh > m - 1:
            jh = m - 1
        # bottom edge of the first banded cell
        blo = 1.0
        bhi = 0.0
        if jl == 0 and bottom_open:
            lo, hi = _seg_window(qu[0], qv[0], pu[i], pv[i], pu[i + 1], pv[i + 1], eps)
            if lo <= hi and lo <= 0.0:
                blo = lo
                bhi = hi
                if hi < 1.0:
                    bottom_open = False
            else:
                bottom_open = False
        elif jl > 0:
            bottom_open = False
        alive = False
        for j in range(jl, jh + 1):
            has_left = cur_st[j] == i
            llo = cur_lo[j]
            lhi = cur_hi[j]
            has_bottom = blo <= bhi
            # right edge
            if has_bottom or has_left:
                lo, hi = _seg_window(pu[i + 1], pv[i + 1], qu[j], qv[j], qu[j + 1], qv[j + 1], eps)
                if not has_bottom:
                    lo = max(lo, llo)
                if lo <= hi:
                    nxt_lo[j] = lo
                    nxt_hi[j] = hi
                    nxt_st[j] = i + 1
                    alive = True
            # top edge
            nblo = 1.0
            nbhi = 0.0
            if has_bottom or has_left:
                lo, hi = _seg_window(qu[j + 1], qv[j + 1], pu[i], pv[i], pu[i + 1], pv[i + 1], eps)
                if not has_left:
                    lo = max(lo, blo)
                if lo <= hi:
                    nblo = lo
                    nbhi = hi
                    alive = True
            blo = nblo
            bhi = nbhi
        if i == n - 1:
            if nxt_st[m - 1] == n and nxt_hi[m - 1] >= 1.0:
                return True
            if jh == m - 1 and blo <= bhi and bhi >= 1.0:
                return True
            return False
        if not alive:
            return False
        cur_lo, nxt_lo = nxt_lo, cur_lo
        cur_hi, nxt_hi = nxt_hi, cur_hi
        cur_st, nxt_st = nxt_st, cur_st
    return False


# ---------------------------------------------------------------------------
# J1 decision for step functions


@njit(inline="always")
def _cell_ok(a, b, X, Y, i, j, eps):
    if abs(X[i] - Y[j]) > eps:
        return False
    if a[i] - b[j + 1] > eps:
        return False
    if b[j] - a[i + 1] > eps:
        return False
    return True


@njit(cache=True)
def j1_decide(a, X, b, Y, xt, yt, eps):
    """Is there a time change within eps matching two step functions within eps?

    x equals X[i] on [a[i], a[i+1]) and y equals Y[j] on [b[j], b[j+1]); both
    break lists start at 0 and end at the common horizon, where the paths take
    the values xt and yt.  The time-change graph is a monotone curve from
    (0, 0) to (t, t) through cells (i, j) of the product grid; a cell is
    usable where the values agree within eps and the curve stays within eps of
    the diagonal, which is a convex set, so reachability propagates through
    cell edges and cell corners like a free-space diagram.
    """
    if abs(xt - yt) > eps:
        return False
    n = X.shape[0]
    m = Y.shape[0]
    inf = np.inf
    if not _cell_ok(a, b, X, Y, 0, 0, eps):
        return False
    cur_s = np.full(m, inf)
    cur_st = np.full(m, -2, np.int64)
    cur_c = np.full(m, -2, np.int64)
    nxt_s = np.full(m, inf)
    nxt_st = np.full(m, -2, np.int64)
    nxt_c = np.full(m, -2, np.int64)
    cur_c[0] = 0
    btail = b[1:]
    bhead = b[:-1]
    # only columns entered from the previous row (or reached along this row
    # from one of them) can be usable, so each row scans that span only
    cur_lo, cur_hi = 0, 0
    for i in range(n):
        jl = np.searchsorted(btail, a[i] - eps)
        jh = np.searchsorted(bhead, a[i + 1] + eps, side="right") - 1
        if jh > m - 1:
            jh = m - 1
        if jl < cur_lo:
            jl = cur_lo
        r_b = inf
        alive = False
        nxt_lo, nxt_hi = m, -1
        for j in range(jl, jh + 1):
            from_left = cur_st[j] == i
            from_corner = cur_c[j] == i
            from_bottom = r_b < inf
            if not (from_left or from_corner or from_bottom):
                if j > cur_hi:
                    break
                continue
            if not _cell_ok(a, b, X, Y, i, j, eps):
                r_b = inf
                continue
            if i == n - 1 and j == m - 1:
                return True
            s_e = b[j] if (from_bottom or from_corner) else cur_s[j]
            r_e = a[i] if (from_left or from_corner) else r_b
            # right edge into (i+1, j)
            if i + 1 < n and _cell_ok(a, b, X, Y, i + 1, j, eps):
                lo = max(b[j], a[i + 1] - eps, s_e)
                hi = min(b[j + 1], a[i + 1] + eps)
                if lo <= hi:
                    if nxt_st[j] != i + 1 or lo < nxt_s[j]:
                        nxt_s[j] = lo
                    nxt_st[j] = i + 1
                    alive = True
                    nxt_lo = min(nxt_lo, j)
                    nxt_hi = max(nxt_hi, j)
            # corner into (i+1, j+1)
            if i + 1 < n and j + 1 < m and abs(a[i + 1] - b[j + 1]) <= eps:
                if _cell_ok(a, b, X, Y, i + 1, j + 1, eps):
                    nxt_c[j + 1] = i + 1
                    alive = True
                    nxt_lo = min(nxt_lo, j + 1)
                    nxt_hi = max(nxt_hi, j + 1)
            # top edge into (i, j+1)
            nr = inf
            if j + 1 < m and _cell_ok(a, b, X, Y, i, j + 1, eps):
                lo = max(a[i], b[j + 1] - eps, r_e)
                hi = min(a[i + 1], b[j + 1] + eps)
                if lo <= hi:
                    nr = lo
            r_b = nr
        if not alive:
            return False
        cur_s, nxt_s = nxt_s, cur_s
        cur_st, nxt_st = nxt_st, cur_st
        cur_c, nxt_c = nxt_c, cur_c
        cur_lo, cur_hi = nxt_lo, nxt_hi
    return False


# ---------------------------------------------------------------------------
# small helpers


@njit(cache=True)
def running_max(x):
    out = np.empty_like(x)
    m = x[0]
    for i in range(x.shape[0]):
        if x[i] > m:
            m = x[i]
        out[i] = m
    return out
