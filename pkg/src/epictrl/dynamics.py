"""Forward and backward integration of the controlled epidemic model.

The controlled system in terms of the reproduction number ``R`` is::

    dx/dt = -(1 - u) gamma R(x, y) y
    dy/dt =  gamma ((1 - u) R(x, y) - 1) y

Integration is fixed-step classical RK4 (see :mod:`epictrl._kernel`), with
steps split exactly at open-loop breakpoints and events refined by
bisection on the event function.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import _kernel as K
from .exceptions import (DomainError, HorizonExceeded, IncompleteTrajectory,
                         StepRejected)
from .rates import ModelInstance
from .state import SIMPLEX_TOL, EpidemicState, check_state

EVENT_KINDS = ("threshold_hit", "R_equals_one", "boundary_exit", "infection_extinct")
_EVENT_INDEX = {k: i for i, k in enumerate(EVENT_KINDS)}
CONTROL_TOL = 1e-12


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 1e-3
    event_bisection_tol: float = 1e-10
    extinction_eps: float = 1e-8
    max_time: float = 1e4
    record_every: int = 1

    def __post_init__(self):
        for name in ("step", "event_bisection_tol", "extinction_eps", "max_time"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"IntegratorConfig.{name} must be positive, got {v}")
        if int(self.record_every) < 1:
            raise DomainError("IntegratorConfig.record_every must be >= 1")

    def replace(self, **kw) -> "IntegratorConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return IntegratorConfig(**d)


DEFAULT_CONFIG = IntegratorConfig()


class ControlSignal:
    """A control ``u(t)`` in [0, 1].

    Three kinds exist: ``zero``; ``open_loop``, a right-continuous
    piecewise-constant signal equal to ``values[i]`` on
    ``[breakpoints[i], breakpoints[i+1])`` and to 0 before the first
    breakpoint; and ``feedback``, a policy ``(x, y) -> u`` evaluated at the
    start of every step.
    """

    def __init__(self, kind: str, breakpoints=(), values=(), policy=None):
        if kind not in ("zero", "open_loop", "feedback"):
            raise DomainError(f"unknown control kind {kind!r}")
        bp = np.asarray(breakpoints, dtype=np.float64).ravel()
        vals = np.asarray(values, dtype=np.float64).ravel()
        if bp.shape != vals.shape:
            raise DomainError("breakpoints and values must have equal length")
        if bp.size and np.any(np.diff(bp) <= 0):
            raise DomainError("breakpoints must be strictly increasing")
        if vals.size and (vals.min() < 0 or vals.max() > 1):
            raise DomainError("open-loop values must lie in [0, 1]")
        if kind == "feedback" and not callable(policy):
            raise DomainError("feedback control needs a callable policy")
        self.kind = kind
        self.breakpoints = bp
        self.values = vals
        self.policy = policy

    @classmethod
    def zero(cls) -> "ControlSignal":
        return cls("zero")

    @classmethod
    def open_loop(cls, breakpoints, values) -> "ControlSignal":
        return cls("open_loop", breakpoints, values)

    @classmethod
    def feedback(cls, policy: Callable[[float, float], float]) -> "ControlSignal":
        return cls("feedback", policy=policy)

    @classmethod
    def from_csv(cls, path) -> "ControlSignal":
        """Read ``t_start,u`` rows (header optional)."""
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].lstrip().startswith("#"):
                    continue
                try:
                    rows.append((float(rec[0]), float(rec[1])))
                except ValueError:
                    if rows:
                        raise DomainError(f"bad control row {rec!r}") from None
                except IndexError:
                    raise DomainError(f"bad control row {rec!r}") from None
        if not rows:
            return cls.zero()
        t, u = zip(*rows)
        return cls.open_loop(t, u)

    def __call__(self, t: float) -> float:
        if self.kind != "open_loop":
            if self.kind == "zero":
                return 0.0
            raise DomainError("feedback signals have no time-only value")
        i = np.searchsorted(self.breakpoints, t, side="right")
        return float(self.values[i - 1]) if i > 0 else 0.0

    def total(self, t_end: float = np.inf) -> float:
        """Exact integral of an open-loop signal over ``[0, t_end]``."""
        if self.kind == "zero":
            return 0.0
        if self.kind != "open_loop":
            raise DomainError("only open-loop signals can be integrated directly")
        ends = np.append(self.breakpoints[1:], np.inf)
        lo = np.clip(self.breakpoints, 0, t_end)
        hi = np.clip(ends, 0, t_end)
        nz = self.values > 0
        return float(np.sum(self.values[nz] * (hi[nz] - lo[nz])))

    def __repr__(self):
        if self.kind == "open_loop":
            return f"ControlSignal.open_loop({len(self.values)} segments)"
        return f"ControlSignal.{self.kind}()"


@dataclass
class Trajectory:
    """Sampled solution.

    ``controls[k]`` is the control applied right after ``times[k]``. On
    interval ``k`` the control is held constant when ``hold[k]`` is true and
    varies continuously otherwise (trapezoid rule applies).
    """

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    controls: np.ndarray
    events: list = field(default_factory=list)
    model: ModelInstance | None = None
    hold: np.ndarray | None = None
    tail_zero: bool = False
    status: str = "horizon"

    def __post_init__(self):
        n = len(self.times)
        if not (len(self.x) == len(self.y) == len(self.controls) == n):
            raise ValueError("trajectory arrays must be aligned")
        if self.hold is None:
            self.hold = np.ones(max(n - 1, 0), dtype=bool)

    def __len__(self):
        return len(self.times)

    @property
    def states(self) -> list[EpidemicState]:
        return [EpidemicState(float(a), float(b)) for a, b in zip(self.x, self.y)]

    @property
    def final(self) -> EpidemicState:
        return EpidemicState(float(self.x[-1]), float(self.y[-1]))

    def event_times(self, kind: str) -> list[float]:
        return [t for t, k in self.events if k == kind]

    def R(self) -> np.ndarray:
        if self.model is None:
            raise ValueError("trajectory has no model attached")
        return self.model.R(self.x, self.y)

    def to_csv(self, path=None) -> str:
        """``t,x,y,u,R`` rows at 12 significant digits plus an event block."""
        buf = io.StringIO()
        buf.write("t,x,y,u,R\n")
        R = self.R() if self.model is not None else np.full(len(self), np.nan)
        for row in zip(self.times, self.x, self.y, self.controls, R):
            buf.write(",".join(f"{v:.12g}" for v in row) + "\n")
        for t, kind in self.events:
            buf.write(f"# event,{t:.12g},{kind}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def concatenate(cls, parts: Iterable["Trajectory"], **kw) -> "Trajectory":
        """Join consecutive pieces; a shared endpoint keeps the later sample."""
        parts = [p for p in parts if len(p)]
        t, x, y, u = (list(a) for a in (parts[0].times, parts[0].x,
                                          parts[0].y, parts[0].controls))
        hold = list(parts[0].hold)
        for p in parts[1:]:
            if p.times[0] <= t[-1]:
                for arr in (t, x, y, u):
                    arr.pop()
            else:
                hold.append(True)
            t += list(p.times)
            x += list(p.x)
            y += list(p.y)
            u += list(p.controls)
            hold += list(p.hold)
        return cls(np.array(t), np.array(x), np.array(y), np.array(u),
                   events=[e for p in parts for e in p.events],
                   model=parts[0].model, hold=np.array(hold, dtype=bool), **kw)


# ---------------------------------------------------------------------------

def step(m: ModelInstance, s, u: float, dt: float) -> EpidemicState:
    """One RK4 step with the control held at ``u``."""
    x, y = check_state(s)
    if not dt > 0:
        raise DomainError("dt must be positive")
    _check_control(u)
    P, N, D = m.rate.coefficient_arrays()
    xn, yn = K.rk4(P, N, D, m.gamma, x, y, float(u), float(dt), 1.0)
    if xn < -K.REJECT_TOL or yn < -K.REJECT_TOL or xn + yn > 1 + K.REJECT_TOL:
        raise StepRejected(f"step of {dt} left the simplex: ({xn}, {yn})")
    xn, yn = min(max(xn, 0.0), 1.0), min(max(yn, 0.0), 1.0)
    return EpidemicState(min(xn, 1.0 - yn), yn)


def _check_control(u: float) -> float:
    if not (-CONTROL_TOL <= u <= 1 + CONTROL_TOL):
        raise DomainError(f"control value {u} outside [0, 1]")
    return min(max(float(u), 0.0), 1.0)


def _parse_stop(stop):
    """Return ``(t_end or None, stop_mask)``."""
    mask = np.zeros(K.N_EVENTS, dtype=np.bool_)
    if stop is None or stop == "extinction":
        mask[K.EV_EXTINCT] = True
        return None, mask
    if isinstance(stop, (int, float)):
        if not stop >= 0:
            raise DomainError("stop time must be non-negative")
        return float(stop), mask
    kinds = [stop] if isinstance(stop, str) else list(stop)
    t_end = None
    for kind in kinds:
        if isinstance(kind, (int, float)):
            t_end, _ = _parse_stop(kind)
        elif kind in _EVENT_INDEX:
            mask[_EVENT_INDEX[kind]] = True
        else:
            raise DomainError(f"unknown stop condition {kind!r}")
    return t_end, mask


def _run(m, x0, y0, t0, t_end, sign, brk, val, ybar, cfg, mask, settle):
    P, N, D = m.rate.coefficient_arrays()
    return K.integrate(
        P, N, D, float(m.gamma), float(x0), float(y0), float(t0), float(cfg.step),
        float(t_end), float(sign), brk, val, float(ybar), float(cfg.extinction_eps),
        float(cfg.event_bisection_tol), mask, bool(settle), int(cfg.record_every),
    )


def simulate(m: ModelInstance, c: ControlSignal | None, s0,
             cfg: IntegratorConfig = DEFAULT_CONFIG, stop="extinction", *,
             ybar: float | None = None, settle: bool = False,
             t0: float = 0.0) -> Trajectory:
    """Integrate the controlled system from ``s0``.

    Parameters
    ----------
    stop : "extinction", float, str or list
        End at extinction (``y`` below ``cfg.extinction_eps``), after a fixed
        duration, or at the first occurrence of the named event kind(s). A
        list may mix event kinds with one duration; whichever comes first
        ends the run.
    ybar : float, optional
        Threshold for ``threshold_hit`` events. Without it the event is off.
    settle : bool
        Also end once the control is zero for good and ``R <= 1``.

    Raises
    ------
    HorizonExceeded
        If an event stop is requested and not reached by ``cfg.max_time``.
    StepRejected
        If a step leaves the simplex by more than ``1e-6``.
    """
    x0, y0 = check_state(s0)
    c = c or ControlSignal.zero()
    t_end, mask = _parse_stop(stop)
    by_time = t_end is not None
    horizon = t0 + (t_end if by_time else cfg.max_time)
    yb = float(ybar) if ybar is not None else 2.0

    if mask[K.EV_EXTINCT] and y0 <= cfg.extinction_eps:
        return Trajectory(np.array([t0]), np.array([x0]), np.array([y0]),
                          np.array([0.0 if c.kind == "zero" else _u0(c, t0, x0, y0)]),
                          [(t0, "infection_extinct")], m, tail_zero=_quiet(c, t0),
                          status="event")

    if c.kind == "feedback":
        return _simulate_feedback(m, c, x0, y0, t0, horizon, by_time, mask, yb,
                                  cfg, settle)

    out = _run(m, x0, y0, t0, horizon, 1.0, c.breakpoints, c.values, yb, cfg,
               mask, settle)
    return _wrap(m, out, c, by_time)


def _u0(c, t, x, y):
    return _check_control(c.policy(x, y)) if c.kind == "feedback" else c(t)


def _quiet(c: ControlSignal, t: float) -> bool:
    if c.kind == "zero":
        return True
    if c.kind == "feedback":
        return False
    i = np.searchsorted(c.breakpoints, t, side="right")
    return not np.any(c.values[max(i - 1, 0):] > 0)


def _wrap(m, out, c, by_time) -> Trajectory:
    ts, xs, ys, us, evt, evk, status, kind, _, _, t_last = out
    events = [(float(t), EVENT_KINDS[int(k)]) for t, k in zip(evt, evk)]
    if status == K.ST_REJECTED:
        raise StepRejected(
            f"integration left the simplex near t={t_last:.6g}; reduce the step")
    if status == K.ST_HORIZON and not by_time:
        raise HorizonExceeded(f"stop condition not reached by t={t_last:.6g}")
    name = {K.ST_HORIZON: "horizon", K.ST_EVENT: "event",
            K.ST_SETTLED: "settled"}[int(status)]
    tail_zero = c.kind != "feedback" and _quiet(c, float(ts[-1])) and (
        status == K.ST_SETTLED
        or (status == K.ST_EVENT and kind == K.EV_EXTINCT))
    return Trajectory(ts.copy(), xs.copy(), ys.copy(), us.copy(), events, m,
                      tail_zero=bool(tail_zero), status=name)


def _simulate_feedback(m, c, x0, y0, t0, horizon, by_time, mask, yb, cfg, settle):
    P, N, D = m.rate.coefficient_arrays()
    ts, xs, ys, us, events = [t0], [x0], [y0], [], []
    t, x, y = t0, x0, y0
    k = 0
    status = "horizon"
    empty = np.empty(0)
    # steps also end at an upward threshold crossing so that the policy is
    # re-evaluated exactly there
    inner = mask.copy()
    inner[K.EV_THRESHOLD] = yb <= 1.0
    while t < horizon:
        u = _check_control(c.policy(x, y))
        nxt = min(t0 + (k + 1) * cfg.step, horizon)
        brk = np.array([t]) if u else empty
        val = np.array([u]) if u else empty
        out = K.integrate(P, N, D, float(m.gamma), x, y, t, nxt - t, nxt, 1.0,
                          brk, val, yb, float(cfg.extinction_eps),
                          float(cfg.event_bisection_tol), inner, False, 1)
        _, _, _, _, evt, evk, st, kind, x, y, t = out
        if st == K.ST_REJECTED:
            raise StepRejected(f"integration left the simplex near t={t:.6g}")
        events += [(float(a), EVENT_KINDS[int(b)]) for a, b in zip(evt, evk)]
        us.append(u)
        ts.append(t)
        xs.append(x)
        ys.append(y)
        if t >= nxt:
            k += 1
        if st == K.ST_EVENT and mask[kind]:
            status = "event"
            break
        if settle and u == 0 and m.R(x, y) <= 1:
            status = "settled"
            break
    us.append(_check_control(c.policy(x, y)))
    if status == "horizon" and not by_time:
        raise HorizonExceeded(f"stop condition not reached by t={t:.6g}")
    return Trajectory(np.array(ts), np.array(xs), np.array(ys), np.array(us),
                      events, m, status=status)


def simulate_backward(m: ModelInstance, s0, cfg: IntegratorConfig = DEFAULT_CONFIG,
                      t_end: float | None = None) -> Trajectory:
    """Integrate the time-reversed uncontrolled system from ``s0``.

    Runs until the orbit exits S through ``x + y = 1`` or ``y`` drops below
    ``cfg.extinction_eps`` (or for ``t_end`` units of reversed time when
    given). ``times`` are reversed time, increasing from 0.
    """
    x0, y0 = check_state(s0)
    mask = np.zeros(K.N_EVENTS, dtype=np.bool_)
    if t_end is None:
        mask[K.EV_BOUNDARY] = True
        mask[K.EV_EXTINCT] = True
    horizon = cfg.max_time if t_end is None else float(t_end)
    empty = np.empty(0)
    out = _run(m, x0, y0, 0.0, horizon, -1.0, empty, empty, 2.0, cfg, mask, False)
    return _wrap(m, out, ControlSignal.zero(), t_end is not None)


def cost_J(traj: Trajectory, require_complete: bool = True) -> float:
    """Integral of the control along ``traj``.

    Held intervals contribute ``u_k * dt`` exactly; continuous ones use the
    trapezoid rule. The tail after the last sample must be certified zero
    unless ``require_complete`` is false.
    """
    if require_complete and not traj.tail_zero:
        raise IncompleteTrajectory(
            "trajectory does not end with zero control at extinction or at rest")
    if len(traj) < 2:
        return 0.0
    dt = np.diff(traj.times)
    u = traj.controls
    seg = np.where(traj.hold, u[:-1] * dt, 0.5 * (u[:-1] + u[1:]) * dt)
    return float(seg.sum())


def in_simplex_all(traj: Trajectory, tol: float = SIMPLEX_TOL) -> bool:
    return bool(np.all(traj.x >= -tol) and np.all(traj.y >= -tol)
                and np.all(traj.x + traj.y <= 1 + tol))
