"""Phase-plane geometry of the uncontrolled model for a fixed threshold.

Objects computed here:

* ``tilde_y`` -- the infected level where the line ``x + y = 1`` meets ``R = 1``;
* ``kappa(y)`` -- the ``R = 1`` curve, ``R(kappa(y), y) = 1``;
* ``xbar = kappa(ybar)`` and the separatrix ``lambda(y)``, the backward orbit
  through ``(xbar, ybar)``, whose lowest point is ``yhat``;
* the split of ``{0 < y <= ybar}`` into the safe region (``DMinus``) and the
  region that needs intervention (``DPlus``);
* ``h(x, y)``, the susceptible fraction at which the uncontrolled orbit from a
  ``DPlus`` state first reaches the threshold.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from . import _kernel as K
from .dynamics import DEFAULT_CONFIG, IntegratorConfig, simulate_backward
from .exceptions import DomainError, PreconditionViolated
from .rates import ModelInstance, check_assumption1, check_rmax_condition
from .state import check_state

ROOT_TOL = 1e-12
TIE_TOL = 1e-12
LAMBDA_FLOOR = 1e-6
FD_STEP = 1e-5


class RegionLabel(str, enum.Enum):
    DMinus = "DMinus"
    DPlus = "DPlus"
    AboveThreshold = "AboveThreshold"
    Trivial = "Trivial"

    def __str__(self):
        return self.value


def compute_tilde_y(m: ModelInstance) -> float:
    """Root of ``R(1 - y, y) = 1`` on ``(0, 1)`` by bisection."""
    if not check_rmax_condition(m):
        raise PreconditionViolated("beta(1, 0) <= gamma: tilde_y is undefined")
    g = lambda y: m.R(1.0 - y, y) - 1.0  # noqa: E731
    return float(optimize.bisect(g, 0.0, 1.0, xtol=ROOT_TOL, maxiter=200))


def kappa(m: ModelInstance, y: float, tilde_y: float | None = None) -> float:
    """The ``x`` in ``[0, 1 - y]`` with ``R(x, y) = 1``, for ``0 <= y <= tilde_y``."""
    ty = compute_tilde_y(m) if tilde_y is None else tilde_y
    if not (0.0 <= y <= ty):
        raise PreconditionViolated(f"kappa needs 0 <= y <= {ty}, got {y}")
    f = lambda x: m.R(x, y) - 1.0  # noqa: E731
    b = 1.0 - y
    fb = f(b)
    if fb <= 0.0:
        # only reachable at y = tilde_y up to round-off
        return b
    return float(optimize.bisect(f, 0.0, b, xtol=ROOT_TOL, maxiter=200))


def kappa_curve(m: ModelInstance, ys, tilde_y: float | None = None) -> np.ndarray:
    """Vectorised :func:`kappa` (bisection on all points at once)."""
    ys = np.asarray(ys, dtype=np.float64)
    ty = compute_tilde_y(m) if tilde_y is None else tilde_y
    if ys.size and (ys.min() < 0 or ys.max() > ty):
        raise PreconditionViolated("kappa_curve needs 0 <= y <= tilde_y")
    lo = np.zeros_like(ys)
    hi = 1.0 - ys
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = m.R(mid, ys) >= 1.0
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class GeometryCache:
    """Precomputed geometry for one model and threshold.

    ``mode`` is ``"separatrix"`` in the regular case, ``"trivial"`` when zero
    control is optimal everywhere, and ``"direct"`` for rates that fail the
    monotonicity assumption: there the separatrix is not meaningful and
    filling-the-box runs are obtained by simulation alone.
    """

    model: ModelInstance
    ybar: float
    mode: str
    tilde_y: float | None = None
    xbar: float | None = None
    yhat: float | None = None
    kappa_samples: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    lambda_samples: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    lambda_extrapolated: bool = False
    cfg: IntegratorConfig = DEFAULT_CONFIG

    @property
    def trivial_regime(self) -> bool:
        return self.mode == "trivial"

    @property
    def gamma(self) -> float:
        return self.model.gamma

    def lam(self, y):
        """Linear interpolation of the separatrix (extrapolated below the samples)."""
        if self.mode != "separatrix":
            raise PreconditionViolated("no separatrix in this regime")
        ls = self.lambda_samples
        y = np.asarray(y, dtype=np.float64)
        if len(ls) == 1:
            return np.full_like(y, ls[0, 1])
        out = np.interp(y, ls[:, 0], ls[:, 1])
        low = y < ls[0, 0]
        if np.any(low):
            slope = (ls[1, 1] - ls[0, 1]) / (ls[1, 0] - ls[0, 0])
            out = np.where(low, ls[0, 1] + slope * (y - ls[0, 0]), out)
        return out

    def summary(self) -> dict:
        return {
            "model": self.model.rate.name,
            "gamma": self.model.gamma,
            "ybar": self.ybar,
            "regime": self.mode,
            "tilde_y": self.tilde_y,
            "xbar": self.xbar,
            "yhat": self.yhat,
            "lambda_extrapolated": self.lambda_extrapolated,
        }

    def curves_csv(self, path=None, n: int = 501) -> str:
        """``y,kappa,lambda`` on a shared grid; empty cells where undefined."""
        top = max(self.tilde_y or 0.0, self.ybar if self.mode == "separatrix" else 0.0)
        ys = np.linspace(0.0, top, n) if top > 0 else np.empty(0)
        kap = (kappa_curve(self.model, ys[ys <= self.tilde_y], self.tilde_y)
               if self.tilde_y is not None else np.empty(0))
        buf = io.StringIO()
        buf.write("y,kappa,lambda\n")
        for i, y in enumerate(ys):
            k = f"{kap[i]:.12g}" if i < len(kap) else ""
            lam = ""
            if self.mode == "separatrix" and self.yhat <= y <= self.ybar:
                lam = f"{float(self.lam(y)):.12g}"
            buf.write(f"{y:.12g},{k},{lam}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _assumption_holds(m: ModelInstance) -> bool:
    return check_assumption1(m, 100).satisfied


def compute_separatrix(m: ModelInstance, ybar: float,
                       cfg: IntegratorConfig = DEFAULT_CONFIG,
                       n_lambda: int = 4001, n_kappa: int = 1001) -> GeometryCache:
    """Build the geometry cache in the regular (non-trivial) regime.

    The separatrix is obtained by integrating the reversed dynamics from
    ``(xbar, ybar)`` until the orbit leaves S through ``x + y = 1`` (then
    ``yhat`` is that exit level) or approaches an equilibrium (then
    ``yhat = 0`` and the curve is sampled down to ``y = 1e-6`` only).
    """
    if not 0 < ybar <= 1:
        raise DomainError(f"threshold must lie in (0, 1], got {ybar}")
    if not check_rmax_condition(m):
        raise PreconditionViolated("trivial regime: beta(1, 0) <= gamma")
    ty = compute_tilde_y(m)
    if ybar > ty:
        raise PreconditionViolated(f"trivial regime: ybar={ybar} > tilde_y={ty}")
    xbar = kappa(m, ybar, ty)
    ks = np.linspace(0.0, ty, n_kappa)
    kappa_samples = np.column_stack([ks, kappa_curve(m, ks, ty)])

    if xbar + ybar >= 1.0 - TIE_TOL:
        return GeometryCache(m, ybar, "separatrix", ty, xbar, ybar, kappa_samples,
                             np.array([[ybar, xbar]]), False, cfg)

    back = simulate_backward(m, (xbar, ybar), cfg)
    stop = back.events[-1][1] if back.events else None
    # the orbit is a graph over y: reverse to have y increasing
    ys, xs = back.y[::-1], back.x[::-1]
    if stop == "boundary_exit":
        yhat = float(back.y[-1])
        extrapolated = False
        y_lo = yhat
    else:
        yhat = 0.0
        extrapolated = True
        y_lo = max(LAMBDA_FLOOR, float(ys[0]))
    grid = np.linspace(y_lo, ybar, n_lambda)
    lam = np.interp(grid, ys, xs)
    lam[-1] = xbar
    return GeometryCache(m, ybar, "separatrix", ty, xbar, yhat, kappa_samples,
                         np.column_stack([grid, lam]), extrapolated, cfg)


def build_geometry(m: ModelInstance, ybar: float,
                   cfg: IntegratorConfig = DEFAULT_CONFIG, **kw) -> GeometryCache:
    """Geometry cache for any regime (trivial, regular, or direct)."""
    if not 0 < ybar <= 1:
        raise DomainError(f"threshold must lie in (0, 1], got {ybar}")
    if not _assumption_holds(m):
        return GeometryCache(m, ybar, "direct", cfg=cfg)
    if not check_rmax_condition(m):
        return GeometryCache(m, ybar, "trivial", cfg=cfg)
    ty = compute_tilde_y(m)
    if ybar > ty:
        ks = np.linspace(0.0, ty, kw.get("n_kappa", 1001))
        return GeometryCache(m, ybar, "trivial", ty,
                             kappa_samples=np.column_stack([ks, kappa_curve(m, ks, ty)]),
                             cfg=cfg)
    return compute_separatrix(m, ybar, cfg, **kw)


def classify(g: GeometryCache, s) -> RegionLabel:
    """Region of ``s``; states within ``1e-12`` of the separatrix count as safe."""
    x, y = check_state(s)
    if y > g.ybar:
        return RegionLabel.AboveThreshold
    if g.mode == "trivial":
        return RegionLabel.Trivial
    if g.mode == "direct":
        raise PreconditionViolated("regions are undefined without the monotonicity assumption")
    if y < g.yhat or y <= 0.0:
        # no infection: the state is an equilibrium and never needs control
        return RegionLabel.DMinus
    if x > float(g.lam(y)) + TIE_TOL:
        return RegionLabel.DPlus
    return RegionLabel.DMinus


def classify_many(g: GeometryCache, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    x, y = X[:, 0], X[:, 1]
    out = np.full(len(X), RegionLabel.DMinus.value, dtype=object)
    if g.mode == "trivial":
        out[:] = RegionLabel.Trivial.value
    elif g.mode == "direct":
        raise PreconditionViolated("regions are undefined without the monotonicity assumption")
    else:
        plus = (y >= g.yhat) & (y > 0) & (y <= g.ybar) & (x > g.lam(y) + TIE_TOL)
        out[plus] = RegionLabel.DPlus.value
    out[y > g.ybar] = RegionLabel.AboveThreshold.value
    return out


def _hit(g: GeometryCache, xs, ys, cfg: IntegratorConfig):
    m = g.model
    P, N, D = m.rate.coefficient_arrays()
    return K.hit_threshold_many(
        P, N, D, float(m.gamma), np.asarray(xs, dtype=np.float64),
        np.asarray(ys, dtype=np.float64), float(g.ybar), float(cfg.step),
        float(cfg.max_time), float(cfg.event_bisection_tol), g.mode != "direct")


def hitting_abscissa_h(g: GeometryCache, s, cfg: IntegratorConfig | None = None):
    """``(h, T)``: where and when the uncontrolled orbit from ``s`` reaches ``ybar``."""
    x, y = check_state(s)
    lab = classify(g, (x, y))
    if lab is not RegionLabel.DPlus:
        raise PreconditionViolated(f"h is defined on DPlus only; ({x}, {y}) is {lab}")
    hs, Ts = _hit(g, [x], [y], cfg or g.cfg)
    return float(hs[0]), float(Ts[0])


def hitting_abscissa_many(g: GeometryCache, X, cfg: IntegratorConfig | None = None):
    """Vectorised ``h`` over rows of ``X``; NaN where the threshold is not reached."""
    X = np.asarray(X, dtype=np.float64)
    return _hit(g, X[:, 0], X[:, 1], cfg or g.cfg)


def _inside(g: GeometryCache, x: float, y: float) -> bool:
    return (x + y <= 1.0 and 0 < y <= g.ybar
            and classify(g, (x, y)) is RegionLabel.DPlus)


def h_partials(g: GeometryCache, s, step: float = FD_STEP,
               cfg: IntegratorConfig | None = None) -> tuple[float, float]:
    """Finite-difference partials ``(h_x, h_y)`` at an interior DPlus state.

    Central differences where both neighbours stay in DPlus, otherwise a
    second-order one-sided stencil pointing into the region.
    """
    x, y = check_state(s)
    if not _inside(g, x, y):
        raise PreconditionViolated(f"({x}, {y}) is not in DPlus")
    return (_partial(g, x, y, step, 0, cfg), _partial(g, x, y, step, 1, cfg))


def _partial(g, x, y, d, axis, cfg):
    def pt(k):
        return (x + k * d, y) if axis == 0 else (x, y + k * d)

    def ok(k):
        px, py = pt(k)
        return py <= g.ybar and _inside(g, px, py)

    if ok(1) and ok(-1):
        pts, w = [pt(1), pt(-1)], np.array([1.0, -1.0]) / (2 * d)
    elif ok(-1) and ok(-2):
        pts, w = [pt(0), pt(-1), pt(-2)], np.array([3.0, -4.0, 1.0]) / (2 * d)
    elif ok(1) and ok(2):
        pts, w = [pt(0), pt(1), pt(2)], np.array([-3.0, 4.0, -1.0]) / (2 * d)
    else:
        raise PreconditionViolated(
            f"({x}, {y}) is too close to the boundary of DPlus for step {d}")
    hs, _ = _hit(g, [p[0] for p in pts], [p[1] for p in pts], cfg or g.cfg)
    return float(w @ hs)
