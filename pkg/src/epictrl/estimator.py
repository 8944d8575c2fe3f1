"""scikit-learn style wrapper around the filling-the-box controller.

Rows of ``X`` are states ``(x, y)``. ``predict`` returns the feedback control
``mu``, ``transform`` returns the columns ``[h, V]``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .controller import THRESHOLD_TOL, run_filling_the_box, value_many
from .dynamics import DEFAULT_CONFIG, IntegratorConfig
from .exceptions import DomainError
from .geometry import build_geometry, classify_many, hitting_abscissa_many
from .rates import ModelInstance, RateModel, fig1_model
from .state import check_states


class FillingTheBoxController(TransformerMixin, BaseEstimator):
    """Optimal threshold-constrained controller for a fixed model and ``ybar``.

    Parameters
    ----------
    rate : RateModel, default=fig1_model()
    gamma : float, default=0.05
    ybar : float, default=0.2
    config : IntegratorConfig, optional

    Attributes
    ----------
    geometry_ : GeometryCache
    regime_ : {"separatrix", "trivial", "direct"}
    xbar_, yhat_, tilde_y_ : float or None
    """

    def __init__(self, rate: RateModel | None = None, gamma: float = 0.05,
                 ybar: float = 0.2, config: IntegratorConfig | None = None):
        self.rate = rate
        self.gamma = gamma
        self.ybar = ybar
        self.config = config

    def fit(self, X=None, y=None):
        """Build the geometry. ``X`` and ``y`` are ignored."""
        if not isinstance(self.gamma, (int, float)) or not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma!r}")
        if not 0 < float(self.ybar) <= 1:
            raise DomainError(f"ybar must lie in (0, 1], got {self.ybar!r}")
        rate = self.rate if self.rate is not None else fig1_model()
        self.model_ = ModelInstance(rate, float(self.gamma))
        self.geometry_ = build_geometry(self.model_, float(self.ybar),
                                        self.config or DEFAULT_CONFIG)
        g = self.geometry_
        self.regime_ = g.mode
        self.xbar_, self.yhat_, self.tilde_y_ = g.xbar, g.yhat, g.tilde_y
        self.n_features_in_ = 2
        return self

    def _X(self, X):
        check_is_fitted(self, "geometry_")
        return check_states(X)

    def predict(self, X) -> np.ndarray:
        """Feedback control at each state (NaN above the threshold)."""
        X = self._X(X)
        yb = self.geometry_.ybar
        x, y = X[:, 0], X[:, 1]
        u = np.zeros(len(X))
        on = (np.abs(y - yb) <= THRESHOLD_TOL) & (x > 0)
        if on.any():
            u[on] = np.maximum(self.model_.rho(x[on], yb), 0.0)
        u[y > yb + THRESHOLD_TOL] = np.nan
        return u

    def classify(self, X) -> np.ndarray:
        return classify_many(self.geometry_, self._X(X))

    def transform(self, X) -> np.ndarray:
        """Columns ``[h, V]``; ``h`` is NaN outside DPlus."""
        X = self._X(X)
        g = self.geometry_
        h = np.full(len(X), np.nan)
        if g.mode == "separatrix":
            plus = classify_many(g, X) == "DPlus"
            if plus.any():
                h[plus] = hitting_abscissa_many(g, X[plus])[0]
        return np.column_stack([h, value_many(g, X)])

    def score(self, X, y=None) -> float:
        """Mean candidate value over ``X`` (lower means cheaper starts)."""
        return float(np.nanmean(self.transform(X)[:, 1]))

    def simulate(self, s0):
        """Run filling-the-box from ``s0``; see :func:`run_filling_the_box`."""
        check_is_fitted(self, "geometry_")
        return run_filling_the_box(self.geometry_, s0)

    def get_feature_names_out(self, input_features=None):
        return np.array(["h", "V"], dtype=object)
