"""Compiled fixed-step RK4 integration with event refinement.

The rate is passed as the coefficient arrays ``(P, N, D)`` of
``beta = P(x) N(y) / D(y)``. Time direction ``sign = -1`` integrates the
time-reversed uncontrolled system.
"""

import numpy as np
from numba import njit

EV_THRESHOLD = 0
EV_R_ONE = 1
EV_BOUNDARY = 2
EV_EXTINCT = 3
N_EVENTS = 4

ST_HORIZON = 0
ST_EVENT = 1
ST_SETTLED = 2
ST_REJECTED = 3

REJECT_TOL = 1e-6
MAX_BISECT = 200


@njit(cache=True, nogil=True)
def horner(c, v):
    r = 0.0
    for i in range(c.shape[0] - 1, -1, -1):
        r = r * v + c[i]
    return r


@njit(cache=True, nogil=True)
def beta(P, N, D, x, y):
    return horner(P, x) * horner(N, y) / horner(D, y)


@njit(cache=True, nogil=True)
def rhs(P, N, D, gamma, x, y, u, sign):
    inf = (1.0 - u) * beta(P, N, D, x, y) * x * y
    return -sign * inf, sign * (inf - gamma * y)


@njit(cache=True, nogil=True)
def rk4(P, N, D, gamma, x, y, u, h, sign):
    k1x, k1y = rhs(P, N, D, gamma, x, y, u, sign)
    k2x, k2y = rhs(P, N, D, gamma, x + 0.5 * h * k1x, y + 0.5 * h * k1y, u, sign)
    k3x, k3y = rhs(P, N, D, gamma, x + 0.5 * h * k2x, y + 0.5 * h * k2y, u, sign)
    k4x, k4y = rhs(P, N, D, gamma, x + h * k3x, y + h * k3y, u, sign)
    return (x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
            y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y))


@njit(cache=True, nogil=True)
def event_value(kind, P, N, D, gamma, x, y, ybar, eps):
    if kind == EV_THRESHOLD:
        return y - ybar
    if kind == EV_R_ONE:
        return beta(P, N, D, x, y) * x / gamma - 1.0
    if kind == EV_BOUNDARY:
        return x + y - 1.0
    return y - eps


@njit(cache=True, nogil=True)
def crossed(kind, g0, g1):
    # threshold and boundary fire upward, extinction downward, R = 1 both ways
    if kind == EV_THRESHOLD or kind == EV_BOUNDARY:
        return g0 < 0.0 and g1 >= 0.0
    if kind == EV_EXTINCT:
        return g0 > 0.0 and g1 <= 0.0
    return (g0 < 0.0 and g1 >= 0.0) or (g0 > 0.0 and g1 <= 0.0)


@njit(cache=True, nogil=True)
def refine(kind, P, N, D, gamma, x, y, u, h, sign, ybar, eps, g0, tol):
    """Bisect the step fraction until the event function is within ``tol``.

    The returned point is always on the far side of the crossing, so a
    declared event has really happened (e.g. ``y < eps`` at extinction).
    """
    lo, hi = 0.0, 1.0
    bx, by = rk4(P, N, D, gamma, x, y, u, h, sign)
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        mx, my = rk4(P, N, D, gamma, x, y, u, mid * h, sign)
        gm = event_value(kind, P, N, D, gamma, mx, my, ybar, eps)
        same = (gm < 0.0) == (g0 < 0.0) and gm != 0.0
        if abs(gm) <= tol and not same:
            return mid, mx, my
        if same:
            lo = mid
        else:
            hi = mid
            bx, by = mx, my
        if hi - lo < 1e-16:
            break
    return hi, bx, by


@njit(cache=True, nogil=True)
def _grow(a, n):
    b = np.empty(max(2 * a.shape[0], n + 16))
    b[: a.shape[0]] = a
    return b


@njit(cache=True, nogil=True)
def integrate(P, N, D, gamma, x0, y0, t0, dt, t_end, sign, brk, val,
              ybar, eps, ev_tol, stop_mask, settle, record_every):
    """Integrate from ``(x0, y0)`` at ``t0`` until ``t_end`` or a stop event.

    ``brk``/``val`` describe a right-continuous piecewise-constant control
    (zero before ``brk[0]``). ``stop_mask[k]`` marks event kinds that end the
    run. With ``settle`` the run also ends once the control is zero for good
    and ``R <= 1`` (the infected fraction can then only decrease).
    """
    cap = 1024
    ts = np.empty(cap)
    xs = np.empty(cap)
    ys = np.empty(cap)
    us = np.empty(cap)
    ecap = 16
    evt = np.empty(ecap)
    evk = np.empty(ecap)
    nev = 0

    nb = brk.shape[0]
    quiet_from = -np.inf
    for i in range(nb - 1, -1, -1):
        if val[i] != 0.0:
            quiet_from = brk[i + 1] if i + 1 < nb else np.inf
            break

    t, x, y = t0, x0, y0
    ib = 0
    while ib < nb and brk[ib] <= t:
        ib += 1
    u = val[ib - 1] if ib > 0 else 0.0

    ts[0], xs[0], ys[0], us[0] = t, x, y, u
    n = 1
    k = 0
    status = ST_HORIZON
    stop_kind = -1
    steps_since = 0
    g_prev = np.empty(N_EVENTS)
    for e in range(N_EVENTS):
        g_prev[e] = event_value(e, P, N, D, gamma, x, y, ybar, eps)
    th = np.empty(N_EVENTS)
    ex = np.empty(N_EVENTS)
    ey = np.empty(N_EVENTS)

    while t < t_end:
        nxt = t0 + (k + 1) * dt
        on_grid = True
        if ib < nb and brk[ib] < nxt - 1e-15:
            nxt = brk[ib]
            on_grid = False
        if t_end < nxt:
            nxt = t_end
            on_grid = False
        h = nxt - t
        if h <= 0.0:
            if on_grid:
                k += 1
            else:
                ib += 1
            continue
        xn, yn = rk4(P, N, D, gamma, x, y, u, h, sign)

        first = 2.0
        fk = -1
        for e in range(N_EVENTS):
            th[e] = 2.0
            g1 = event_value(e, P, N, D, gamma, xn, yn, ybar, eps)
            if crossed(e, g_prev[e], g1):
                th[e], ex[e], ey[e] = refine(e, P, N, D, gamma, x, y, u, h,
                                             sign, ybar, eps, g_prev[e], ev_tol)
                if stop_mask[e] and th[e] < first:
                    first = th[e]
                    fk = e
        # record non-terminal events that happen before the terminal one
        for e in range(N_EVENTS):
            if th[e] <= 1.0 and (fk < 0 or th[e] <= first):
                if nev >= evt.shape[0]:
                    evt = _grow(evt, nev)
                    evk = _grow(evk, nev)
                evt[nev] = t + th[e] * h
                evk[nev] = e
                nev += 1
        if fk >= 0:
            t = t + first * h
            x, y = ex[fk], ey[fk]
            status = ST_EVENT
            stop_kind = fk
            if n >= ts.shape[0]:
                ts, xs, ys, us = _grow(ts, n), _grow(xs, n), _grow(ys, n), _grow(us, n)
            ts[n], xs[n], ys[n], us[n] = t, x, y, u
            n += 1
            break

        if (xn < -REJECT_TOL or yn < -REJECT_TOL
                or xn + yn > 1.0 + REJECT_TOL):
            status = ST_REJECTED
            break
        x = min(max(xn, 0.0), 1.0)
        y = min(max(yn, 0.0), 1.0)
        if x + y > 1.0:
            x = 1.0 - y
        t = nxt
        if on_grid:
            k += 1
        u_changed = False
        while ib < nb and brk[ib] <= t + 1e-15:
            ib += 1
            u_changed = True
        if u_changed:
            u = val[ib - 1]
        for e in range(N_EVENTS):
            g_prev[e] = event_value(e, P, N, D, gamma, x, y, ybar, eps)

        steps_since += 1
        done = t >= t_end
        quiet = settle and sign > 0 and t >= quiet_from and g_prev[EV_R_ONE] <= 0.0
        if steps_since >= record_every or u_changed or not on_grid or done or quiet:
            if n >= ts.shape[0]:
                ts, xs, ys, us = _grow(ts, n), _grow(xs, n), _grow(ys, n), _grow(us, n)
            ts[n], xs[n], ys[n], us[n] = t, x, y, u
            n += 1
            steps_since = 0
        if quiet:
            status = ST_SETTLED
            break

    return (ts[:n], xs[:n], ys[:n], us[:n], evt[:nev], evk[:nev],
            status, stop_kind, x, y, t)


@njit(cache=True, nogil=True)
def polish_threshold(P, N, D, gamma, x, y, ybar):
    """One Newton step in time onto ``y = ybar`` from a refined event state."""
    dx, dy = rhs(P, N, D, gamma, x, y, 0.0, 1.0)
    if dy == 0.0:
        return 0.0, x
    tau = (ybar - y) / dy
    return tau, x + dx * tau


@njit(cache=True, nogil=True)
def hit_threshold_many(P, N, D, gamma, xs, ys, ybar, dt, t_max, ev_tol,
                       stop_below_one):
    """Vectorised threshold hitting: returns ``(h, T)`` per start (NaN if none).

    Starts already on the threshold return ``(x, 0)``. With ``stop_below_one``
    integration gives up once ``R <= 1``; under the monotonicity assumption
    ``y`` can then never reach the threshold.
    """
    m = xs.shape[0]
    hs = np.full(m, np.nan)
    Ts = np.full(m, np.nan)
    for i in range(m):
        x, y = xs[i], ys[i]
        if y >= ybar or y <= 0.0:
            if y == ybar:
                hs[i], Ts[i] = x, 0.0
            continue
        t = 0.0
        k = 0
        while t < t_max:
            xn, yn = rk4(P, N, D, gamma, x, y, 0.0, dt, 1.0)
            g0 = y - ybar
            if yn - ybar >= 0.0:
                th, hx, hy = refine(EV_THRESHOLD, P, N, D, gamma, x, y, 0.0, dt,
                                    1.0, ybar, 0.0, g0, ev_tol)
                tau, hx = polish_threshold(P, N, D, gamma, hx, hy, ybar)
                hs[i], Ts[i] = hx, t + th * dt + tau
                break
            k += 1
            t = k * dt
            x, y = xn, yn
            if stop_below_one and beta(P, N, D, x, y) * x / gamma <= 1.0:
                break
    return hs, Ts
