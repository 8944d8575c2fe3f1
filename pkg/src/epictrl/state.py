"""State type and input validation helpers shared across the package."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from sklearn.utils import check_array

from .exceptions import DomainError

#: numerical slack on the simplex constraint
SIMPLEX_TOL = 1e-9


class EpidemicState(NamedTuple):
    """Susceptible fraction ``x`` and infected fraction ``y``.

    The recovered fraction is implicit, ``z = 1 - x - y``.
    """

    x: float
    y: float

    @property
    def z(self) -> float:
        return 1.0 - self.x - self.y


def in_simplex(x: float, y: float, tol: float = SIMPLEX_TOL) -> bool:
    return x >= -tol and y >= -tol and x + y <= 1.0 + tol


def check_state(s, tol: float = SIMPLEX_TOL) -> EpidemicState:
    """Coerce ``s`` to an :class:`EpidemicState` and check it lies in S."""
    try:
        x, y = (float(v) for v in s)
    except (TypeError, ValueError) as exc:
        raise DomainError(f"expected an (x, y) pair, got {s!r}") from exc
    if not (np.isfinite(x) and np.isfinite(y)):
        raise DomainError(f"non-finite state ({x}, {y})")
    if not in_simplex(x, y, tol):
        raise DomainError(f"state ({x}, {y}) is outside the simplex")
    return EpidemicState(x, y)


def check_states(X, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Validate an ``(n, 2)`` array of states, one ``(x, y)`` row each."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if X.shape[1] != 2:
        raise DomainError(f"expected 2 columns (x, y), got {X.shape[1]}")
    x, y = X[:, 0], X[:, 1]
    bad = (x < -tol) | (y < -tol) | (x + y > 1.0 + tol)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"row {i} ({x[i]}, {y[i]}) is outside the simplex")
    return X


def clamp_to_simplex(x: float, y: float) -> tuple[float, float]:
    x = min(max(x, 0.0), 1.0)
    y = min(max(y, 0.0), 1.0)
    excess = x + y - 1.0
    if excess > 0.0:
        x -= excess / 2.0
        y -= excess / 2.0
    return x, y
