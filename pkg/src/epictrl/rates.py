"""State-dependent infection rates and the quantities derived from them.

Every rate in this module has the separable rational form::

    beta(x, y) = P(x) * N(y) / D(y)

with polynomial ``P``, ``N`` and ``D`` (coefficients in ascending powers).
This covers the classical SIR model, the saturating and linearly damped
families with polynomial ``b(x)``, and the non-monotone counterexample
``(1 - 0.7 x) y``. Keeping the coefficients explicit lets the integrator
kernels evaluate the rate without calling back into Python.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .exceptions import ConfigError, DomainError
from .state import EpidemicState, check_state

FD_STEP = 1e-6


def _coeffs(c) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(c, dtype=np.float64))
    if arr.ndim != 1 or arr.size == 0 or not np.all(np.isfinite(arr)):
        raise ConfigError(f"invalid polynomial coefficients {c!r}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class RateModel:
    """An infection rate ``beta(x, y) = P(x) N(y) / D(y)``.

    Parameters
    ----------
    name : str
        Identifier used in reports and config files.
    p, n, d : sequence of float
        Ascending polynomial coefficients of ``P(x)``, ``N(y)`` and ``D(y)``.
    partials_mode : {"analytic", "fd"}
        How ``beta_x`` and ``beta_y`` are evaluated. ``"fd"`` uses central
        differences with step ``fd_step``, shifted to stay inside S.
    zero_on_boundary : bool
        Set for rates that vanish at ``y = 0`` (admitted with a warning).
    """

    name: str
    p: tuple[float, ...]
    n: tuple[float, ...] = (1.0,)
    d: tuple[float, ...] = (1.0,)
    partials_mode: str = "analytic"
    fd_step: float = FD_STEP
    zero_on_boundary: bool = False
    params: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "p", _coeffs(self.p))
        object.__setattr__(self, "n", _coeffs(self.n))
        object.__setattr__(self, "d", _coeffs(self.d))
        if self.partials_mode not in ("analytic", "fd"):
            raise ConfigError(f"unknown partials_mode {self.partials_mode!r}")
        if not self.fd_step > 0:
            raise ConfigError("fd_step must be positive")

    def coefficient_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (np.array(self.p), np.array(self.n), np.array(self.d))

    def with_partials(self, mode: str) -> "RateModel":
        return RateModel(
            self.name, self.p, self.n, self.d, mode, self.fd_step,
            self.zero_on_boundary, dict(self.params),
        )

    def beta(self, x, y):
        return (npoly.polyval(x, self.p) * npoly.polyval(y, self.n)
                / npoly.polyval(y, self.d))

    def beta_x(self, x, y):
        if self.partials_mode == "fd":
            return self._fd(x, y, axis=0)
        dp = npoly.polyder(self.p) if len(self.p) > 1 else (0.0,)
        return (npoly.polyval(x, dp) * npoly.polyval(y, self.n)
                / npoly.polyval(y, self.d))

    def beta_y(self, x, y):
        if self.partials_mode == "fd":
            return self._fd(x, y, axis=1)
        dn = npoly.polyder(self.n) if len(self.n) > 1 else (0.0,)
        dd = npoly.polyder(self.d) if len(self.d) > 1 else (0.0,)
        nv, dv = npoly.polyval(y, self.n), npoly.polyval(y, self.d)
        quot = (npoly.polyval(y, dn) * dv - nv * npoly.polyval(y, dd)) / dv**2
        return npoly.polyval(x, self.p) * quot

    def _fd(self, x, y, axis):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        eta = self.fd_step
        if axis == 0:
            lo = np.maximum(x - eta, 0.0)
            hi = np.minimum(x + eta, np.maximum(1.0 - y, x))
            return (self.beta(hi, y) - self.beta(lo, y)) / (hi - lo)
        lo = np.maximum(y - eta, 0.0)
        hi = np.minimum(y + eta, np.maximum(1.0 - x, y))
        return (self.beta(x, hi) - self.beta(x, lo)) / (hi - lo)


@dataclass(frozen=True)
class ModelInstance:
    """A rate model together with a recovery rate ``gamma``."""

    rate: RateModel
    gamma: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise DomainError(f"gamma must be strictly positive, got {self.gamma}")

    def R(self, x, y):
        return self.rate.beta(x, y) * x / self.gamma

    def R_x(self, x, y):
        return (self.rate.beta_x(x, y) * x + self.rate.beta(x, y)) / self.gamma

    def R_y(self, x, y):
        return self.rate.beta_y(x, y) * x / self.gamma

    def rho(self, x, y):
        return 1.0 - self.gamma / (x * self.rate.beta(x, y))


# ---------------------------------------------------------------------------
# b(x) forms and built-in constructors
# ---------------------------------------------------------------------------

_BFORM = re.compile(r"^\s*(constant|affine|polynomial)\s*\((.*)\)\s*$")


def parse_b(spec) -> tuple[float, ...]:
    """Parse a ``b(x)`` description into ascending polynomial coefficients.

    Accepts a number, a coefficient sequence, or one of the strings
    ``"constant(c)"``, ``"affine(c0, c1)"`` (``c0 + c1 x``) and
    ``"polynomial(c0, c1, ...)"``.
    """
    if isinstance(spec, (int, float)):
        return (float(spec),)
    if isinstance(spec, str):
        m = _BFORM.match(spec)
        if m is None:
            try:
                return (float(spec),)
            except ValueError:
                raise ConfigError(f"cannot parse b(x) = {spec!r}") from None
        kind, body = m.groups()
        try:
            args = [float(a) for a in body.split(",") if a.strip()]
        except ValueError:
            raise ConfigError(f"non-numeric argument in {spec!r}") from None
        expected = {"constant": 1, "affine": 2}.get(kind)
        if (expected and len(args) != expected) or not args:
            raise ConfigError(f"wrong number of arguments in {spec!r}")
        return tuple(args)
    return _coeffs(spec)


def _check_b(b: tuple[float, ...], name: str):
    xs = np.linspace(0.0, 1.0, 201)
    if np.any(npoly.polyval(xs, b) < 0):
        raise DomainError(f"{name}: b(x) must be non-negative on [0, 1]")


def constant(b: float) -> RateModel:
    """Classical SIR: ``beta = b``."""
    if not b > 0:
        raise DomainError("constant rate must be positive")
    return RateModel("constant", (float(b),), params={"b": float(b)})


def saturating(b, a: float) -> RateModel:
    """``beta = b(x) / (1 + a y)``."""
    bc = parse_b(b)
    _check_b(bc, "saturating")
    if a < 0:
        raise DomainError("saturating: a must be non-negative")
    return RateModel("saturating", bc, (1.0,), (1.0, float(a)),
                     params={"b": bc, "a": float(a)})


def linear_damped(b, a: float) -> RateModel:
    """``beta = b(x) (1 - a y)``."""
    bc = parse_b(b)
    _check_b(bc, "linear_damped")
    if not 0 <= a <= 1:
        raise DomainError("linear_damped: a must lie in [0, 1]")
    return RateModel("linear_damped", bc, (1.0, -float(a)),
                     params={"b": bc, "a": float(a)})


def fig1_model() -> RateModel:
    """``beta = 0.35 x (1 - y)``."""
    return RateModel("fig1_model", (0.0, 0.35), (1.0, -1.0))


def fig2_model() -> RateModel:
    """Linearly damped rate with ``b(x) = (x + 2) / 10`` and ``a = 0.5``."""
    m = linear_damped((0.2, 0.1), 0.5)
    return RateModel("fig2_model", m.p, m.n, m.d, params=m.params)


def counterexample_model() -> RateModel:
    """``beta = (1 - 0.7 x) y``; increasing in ``y`` and zero at ``y = 0``."""
    warnings.warn(
        "counterexample_model vanishes at y = 0; only use it with y0 > 0",
        stacklevel=2,
    )
    return RateModel("counterexample_model", (1.0, -0.7), (0.0, 1.0),
                     zero_on_boundary=True)


BUILTIN_MODELS = {
    "fig1_model": fig1_model,
    "fig2_model": fig2_model,
    "counterexample_model": counterexample_model,
}
FAMILIES = {"constant": constant, "saturating": saturating,
            "linear_damped": linear_damped}


def model_from_spec(kind: str, params: dict | None = None) -> RateModel:
    """Build a rate model from a constructor name and its parameters.

    >>> model_from_spec("linear_damped", {"b": "affine(0.2, 0.1)", "a": 0.5}).p
    (0.2, 0.1)
    """
    params = dict(params or {})
    kind = kind.strip()
    if kind in BUILTIN_MODELS:
        if params:
            raise ConfigError(f"{kind} takes no parameters")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return BUILTIN_MODELS[kind]()
    if kind == "constant":
        try:
            return constant(float(params.pop("b")))
        except KeyError:
            raise ConfigError("constant needs b") from None
    if kind in ("saturating", "linear_damped"):
        try:
            b, a = params.pop("b"), float(params.pop("a", 0.0))
        except KeyError:
            raise ConfigError(f"{kind} needs b") from None
        except ValueError:
            raise ConfigError(f"{kind}: a must be a number") from None
        if params:
            raise ConfigError(f"unexpected parameters {sorted(params)}")
        return FAMILIES[kind](b, a)
    raise ConfigError(f"unknown rate model {kind!r}")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def reproduction_number(m: ModelInstance, s) -> float:
    """``R(x, y) = beta(x, y) x / gamma``."""
    x, y = check_state(s)
    return float(m.R(x, y))


def rho(m: ModelInstance, s) -> float:
    """Minimum control intensity ``(R - 1) / R`` that freezes ``y``."""
    x, y = check_state(s)
    b = float(m.rate.beta(x, y))
    if x <= 0 or b == 0:
        raise DomainError(f"rho undefined at ({x}, {y}): x * beta = 0")
    return 1.0 - m.gamma / (x * b)


@dataclass
class AssumptionReport:
    grid_resolution: int
    min_of: float
    max_of: float
    satisfied: bool
    violations: np.ndarray

    def as_dict(self) -> dict:
        return {
            "grid_resolution": self.grid_resolution,
            "min_x_beta_x_plus_beta": self.min_of,
            "max_beta_y": self.max_of,
            "satisfied": self.satisfied,
            "n_violations": int(len(self.violations)),
        }


def simplex_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centred ``n x n`` sample of S (boundary lines excluded)."""
    c = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(c, c, indexing="ij")
    keep = X + Y <= 1.0
    return X[keep], Y[keep]


def check_assumption1(m: ModelInstance, n: int = 200) -> AssumptionReport:
    """Grid check of ``x beta_x + beta > 0`` and ``beta_y <= 0`` on S."""
    if n < 2:
        raise DomainError("grid resolution must be at least 2")
    x, y = simplex_grid(n)
    r = m.rate
    c1 = x * r.beta_x(x, y) + r.beta(x, y)
    c2 = r.beta_y(x, y)
    bad = (c1 <= 0) | (c2 > 0)
    lo, hi = float(c1.min()), float(c2.max())
    return AssumptionReport(
        grid_resolution=n,
        min_of=lo,
        max_of=hi,
        satisfied=bool(lo > 0 and hi <= 0),
        violations=np.column_stack([x[bad], y[bad]]),
    )


def check_rmax_condition(m: ModelInstance) -> bool:
    """True iff ``beta(1, 0) > gamma``."""
    return bool(m.rate.beta(1.0, 0.0) > m.gamma)


def check_positivity(m: ModelInstance, n: int = 200) -> bool:
    """``beta > 0`` on the sampled interior of S.

    Rates flagged ``zero_on_boundary`` are exempt on the line ``y = 0``,
    which the cell-centred grid never touches anyway.
    """
    x, y = simplex_grid(n)
    return bool(np.all(m.rate.beta(x, y) > 0))
