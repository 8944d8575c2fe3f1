"""Filling-the-box control, its cost, and the candidate value function.

Filling the box: no control until the infected fraction reaches the
threshold ``ybar`` (time ``T0``, at susceptible level ``h0``); then the
smallest control that keeps ``y = ybar``, namely ``rho(x, ybar)``, while
``x`` falls linearly at rate ``gamma * ybar``; release at ``T1`` when
``R(x, ybar) = 1``; no control afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize

from . import _kernel as K
from .dynamics import (ControlSignal, IntegratorConfig, Trajectory, cost_J,
                       simulate)
from .exceptions import InfeasibleStart, PreconditionViolated, QuadratureError
from .geometry import (FD_STEP, GeometryCache, RegionLabel, classify,
                       hitting_abscissa_h, h_partials)
from .state import EpidemicState, check_state

THRESHOLD_TOL = 1e-9
FEASIBILITY_TOL = 1e-8
SIMPSON_PANELS = 1000
RICHARDSON_TOL = 1e-8


def mu(g: GeometryCache, s) -> float:
    """Feedback form of the filling-the-box control.

    Zero strictly below the threshold, ``max(0, rho(x, ybar))`` on it.
    """
    x, y = check_state(s)
    if y > g.ybar + THRESHOLD_TOL:
        raise PreconditionViolated(f"y={y} exceeds the threshold {g.ybar}")
    if g.ybar - y > THRESHOLD_TOL or x <= 0:
        return 0.0
    return max(0.0, float(g.model.rho(x, g.ybar)))


class RidingPolicy:
    """Stateful version of :func:`mu` for step-by-step feedback simulation.

    Once the threshold is reached the policy keeps applying
    ``rho(x, ybar)`` (sticky ride) until it drops to zero, so that small
    event-detection jitter below the threshold does not make it chatter.
    """

    def __init__(self, g: GeometryCache):
        self.g = g
        self.riding = False
        self.released = False

    def __call__(self, x: float, y: float) -> float:
        if self.released:
            return 0.0
        if not self.riding and self.g.ybar - y <= THRESHOLD_TOL:
            self.riding = True
        if not self.riding:
            return 0.0
        r = float(self.g.model.rho(x, self.g.ybar))
        if r <= 0.0:
            self.released = True
            return 0.0
        return r


@dataclass
class FillingTheBoxRun:
    T0: float | None
    T1: float | None
    trajectory: Trajectory
    control: ControlSignal
    cost: float
    h0: float | None
    xbar: float | None
    regime: str
    ybar: float

    @property
    def feasible(self) -> bool:
        return bool(np.max(self.trajectory.y) <= self.ybar + FEASIBILITY_TOL)

    def summary(self) -> dict:
        return {
            "T0": self.T0, "T1": self.T1, "h0": self.h0, "xbar": self.xbar,
            "cost": self.cost, "feasible": self.feasible, "regime": self.regime,
        }

    def summary_json(self) -> str:
        return json.dumps(_round12(self.summary()), indent=2, sort_keys=True)


def _round12(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _round12(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round12(v) for v in obj]
    return obj


def _release_abscissa(g: GeometryCache, h0: float) -> float:
    """Where the ride ends: ``xbar`` in the regular regime; otherwise the
    first root of ``rho(., ybar)`` met while ``x`` decreases from ``h0``."""
    if g.mode == "separatrix":
        return g.xbar
    m, yb = g.model, g.ybar
    f = lambda x: m.R(x, yb) - 1.0  # noqa: E731
    if f(h0) <= 0:
        return h0
    xs = np.linspace(h0, 0.0, 100_001)
    below = np.flatnonzero(f(xs) <= 0)
    i = int(below[0])
    return float(optimize.bisect(f, xs[i], xs[i - 1], xtol=1e-14, maxiter=200))


def _uncontrolled_tail(g, s, t0, cfg, settle) -> Trajectory:
    return simulate(g.model, ControlSignal.zero(), s, cfg, "extinction",
                    ybar=g.ybar, t0=t0, settle=settle and g.mode != "direct")


def run_filling_the_box(g: GeometryCache, s0, cfg: IntegratorConfig | None = None,
                        *, settle: bool = False, t0: float = 0.0) -> FillingTheBoxRun:
    """Simulate the filling-the-box policy from ``s0``.

    The ride on the threshold uses its closed form ``x(t) = h0 - gamma ybar
    (t - T0)``, ``y = ybar`` instead of stepping the balanced ODE. The
    returned ``control`` is an open-loop realisation (cell averages of the
    ride control on the sample grid) suitable for re-simulation.

    With ``settle`` the free phases stop as soon as ``R <= 1`` instead of at
    extinction; under the monotonicity assumption ``y`` can only decrease
    from there, so cost and feasibility are already decided. ``t0`` shifts
    the time axis.

    Raises
    ------
    InfeasibleStart
        If ``y0 > ybar``.
    """
    cfg = cfg or g.cfg
    x0, y0 = check_state(s0)
    m, yb = g.model, g.ybar
    if y0 > yb + THRESHOLD_TOL:
        raise InfeasibleStart(f"y0={y0} is above the threshold {yb}")

    needs_ride = False
    if y0 > 0 and g.mode == "separatrix":
        needs_ride = classify(g, (x0, y0)) is RegionLabel.DPlus
    elif y0 > 0 and g.mode == "direct":
        needs_ride = True  # decided by simulation below

    if not needs_ride:
        traj = _uncontrolled_tail(g, (x0, y0), t0, cfg, settle)
        return _finish(g, None, None, traj, ControlSignal.zero(), None, None)

    # phase 1: free spread until the threshold is reached
    if y0 >= yb:
        T0, h0 = t0, x0
        free = Trajectory(np.array([t0]), np.array([x0]), np.array([yb]),
                          np.array([0.0]), events=[(t0, "threshold_hit")], model=m)
    else:
        stops = ["threshold_hit", "infection_extinct"]
        free = simulate(m, ControlSignal.zero(), (x0, y0), cfg, stops, ybar=yb,
                        t0=t0)
        if free.events and free.events[-1][1] == "infection_extinct":
            free.tail_zero = True
            return _finish(g, None, None, free, ControlSignal.zero(), None, None)
        P, N, D = m.rate.coefficient_arrays()
        tau, h0 = K.polish_threshold(P, N, D, m.gamma, free.x[-1], free.y[-1], yb)
        T0 = float(free.times[-1] + tau)
        free.times[-1], free.x[-1], free.y[-1] = T0, h0, yb
        free.events[-1] = (T0, "threshold_hit")

    xbar = _release_abscissa(g, h0)
    if xbar >= h0:
        # touches the threshold with R <= 1: no ride
        tail = _uncontrolled_tail(g, (h0, yb), T0, cfg, settle)
        traj = Trajectory.concatenate([free, tail])
        return _finish(g, T0, T0, traj, ControlSignal.zero(), h0, xbar)

    # phase 2: ride the threshold
    rate = m.gamma * yb
    T1 = T0 + (h0 - xbar) / rate
    n = int(np.floor((T1 - T0) / cfg.step))
    t_ride = T0 + cfg.step * np.arange(n + 1)
    if T1 - t_ride[-1] > 1e-12:
        t_ride = np.append(t_ride, T1)
    else:
        t_ride[-1] = T1
    x_ride = h0 - rate * (t_ride - T0)
    x_ride[-1] = xbar
    u_ride = np.maximum(m.rho(x_ride, yb), 0.0)
    u_ride[-1] = 0.0
    ride = Trajectory(t_ride, x_ride, np.full_like(t_ride, yb), u_ride, model=m,
                      hold=np.zeros(len(t_ride) - 1, dtype=bool),
                      events=[(T1, "R_equals_one")])
    # cell averages (Simpson) for the open-loop realisation
    xm = 0.5 * (x_ride[:-1] + x_ride[1:])
    rho_a = np.maximum(m.rho(x_ride, yb), 0.0)
    avg = (rho_a[:-1] + 4 * np.maximum(m.rho(xm, yb), 0.0) + rho_a[1:]) / 6.0
    control = ControlSignal.open_loop(np.append(t_ride[:-1], T1),
                                      np.clip(np.append(avg, 0.0), 0.0, 1.0))

    # phase 3: free decay from (xbar, ybar)
    tail = _uncontrolled_tail(g, (xbar, yb), T1, cfg, settle)
    traj = Trajectory.concatenate([free, ride, tail])
    return _finish(g, T0, T1, traj, control, h0, xbar)


def _finish(g, T0, T1, traj, control, h0, xbar) -> FillingTheBoxRun:
    traj.tail_zero = True
    cost = cost_J(traj)
    if control.kind == "open_loop":
        # Simpson cell integrals of the ride control; the trapezoid rule on
        # the samples is only second order
        cost = control.total()
    return FillingTheBoxRun(T0, T1, traj, control, cost, h0, xbar, g.mode, g.ybar)


# ---------------------------------------------------------------------------
# candidate value function
# ---------------------------------------------------------------------------

class ValueQuery(NamedTuple):
    state: EpidemicState
    value: float
    region: RegionLabel


def ride_cost(g: GeometryCache, h: float, panels: int = SIMPSON_PANELS) -> float:
    """``(1 / (gamma ybar)) * integral of rho(s, ybar) for s in [xbar, h]``."""
    if h <= g.xbar:
        return 0.0
    s = np.linspace(g.xbar, h, panels + 1)
    return float(integrate.simpson(g.model.rho(s, g.ybar), x=s)
                 / (g.gamma * g.ybar))


def _checked_ride_cost(g: GeometryCache, h: float) -> float:
    v = ride_cost(g, h, SIMPSON_PANELS)
    v2 = ride_cost(g, h, 2 * SIMPSON_PANELS)
    if abs(v - v2) > RICHARDSON_TOL:
        raise QuadratureError(f"Simpson 1000 vs 2000 panels differ by {abs(v - v2):.3g}")
    return v2


def value_function(g: GeometryCache, s, cfg: IntegratorConfig | None = None) -> ValueQuery:
    """Candidate value: zero on the safe region, ride cost from ``h(s)`` on DPlus."""
    x, y = check_state(s)
    if y > g.ybar + THRESHOLD_TOL:
        raise PreconditionViolated(f"V is defined for y <= ybar, got y={y}")
    st = EpidemicState(x, y)
    if g.mode == "direct":
        raise PreconditionViolated("V needs the monotonicity assumption")
    region = classify(g, (x, min(y, g.ybar)))
    if region is not RegionLabel.DPlus:
        return ValueQuery(st, 0.0, region)
    h, _ = hitting_abscissa_h(g, (x, min(y, g.ybar)), cfg)
    return ValueQuery(st, _checked_ride_cost(g, h), region)


def value_many(g: GeometryCache, X, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Vectorised value function over rows of ``X`` (no Richardson check)."""
    from .geometry import classify_many, hitting_abscissa_many

    X = np.asarray(X, dtype=np.float64)
    out = np.zeros(len(X))
    if g.mode != "separatrix":
        if g.mode == "direct":
            raise PreconditionViolated("V needs the monotonicity assumption")
        return out
    lab = classify_many(g, X)
    plus = lab == RegionLabel.DPlus.value
    if plus.any():
        hs, _ = hitting_abscissa_many(g, X[plus], cfg)
        out[plus] = [ride_cost(g, h) for h in hs]
    if np.any(X[:, 1] > g.ybar + THRESHOLD_TOL):
        out[X[:, 1] > g.ybar + THRESHOLD_TOL] = np.nan
    return out


class VPartials(NamedTuple):
    V_x: float
    V_y: float
    fd_V_x: float
    fd_V_y: float

    def consistent(self, rtol: float = 1e-3) -> bool:
        return bool(np.isclose(self.V_x, self.fd_V_x, rtol=rtol, atol=rtol * 1e-3)
                    and np.isclose(self.V_y, self.fd_V_y, rtol=rtol, atol=rtol * 1e-3))


def v_partials(g: GeometryCache, s, step: float = FD_STEP,
               cfg: IntegratorConfig | None = None) -> VPartials:
    """Partials of V at an interior DPlus state, two ways.

    ``V_x, V_y`` come from the chain rule through ``h``:
    ``dV = rho(h, ybar) / (gamma ybar) * dh``. ``fd_V_x, fd_V_y`` are finite
    differences of :func:`value_function` with the same stencils as
    :func:`~epictrl.geometry.h_partials`.
    """
    x, y = check_state(s)
    hx, hy = h_partials(g, (x, y), step, cfg)
    h, _ = hitting_abscissa_h(g, (x, y), cfg)
    scale = float(g.model.rho(h, g.ybar)) / (g.gamma * g.ybar)
    return VPartials(scale * hx, scale * hy,
                     _fd_value(g, x, y, step, 0, cfg), _fd_value(g, x, y, step, 1, cfg))


def _fd_value(g, x, y, d, axis, cfg):
    from .geometry import _inside

    def pt(k):
        return (x + k * d, y) if axis == 0 else (x, y + k * d)

    def ok(k):
        px, py = pt(k)
        return py <= g.ybar and _inside(g, px, py)

    def V(k):
        return value_function(g, pt(k), cfg).value

    if ok(1) and ok(-1):
        return (V(1) - V(-1)) / (2 * d)
    if ok(-1) and ok(-2):
        return (3 * V(0) - 4 * V(-1) + V(-2)) / (2 * d)
    if ok(1) and ok(2):
        return (-3 * V(0) + 4 * V(1) - V(2)) / (2 * d)
    raise PreconditionViolated(f"({x}, {y}) is too close to the boundary of DPlus")
