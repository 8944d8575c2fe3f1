import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from epictrl import FillingTheBoxController, fig2_model, value_function
from epictrl.exceptions import DomainError


@pytest.fixture(scope="module")
def est():
    return FillingTheBoxController(ybar=0.2).fit()


def test_params_roundtrip():
    e = FillingTheBoxController(rate=fig2_model(), gamma=0.05, ybar=0.5)
    p = e.get_params()
    assert p["ybar"] == 0.5 and p["gamma"] == 0.05
    c = clone(e)
    assert c.get_params()["ybar"] == 0.5 and not hasattr(c, "geometry_")
    e.set_params(ybar=0.3)
    assert e.ybar == 0.3


def test_not_fitted():
    with pytest.raises(NotFittedError):
        FillingTheBoxController().predict([[0.5, 0.1]])


def test_fitted_attributes(est, g1):
    assert est.regime_ == "separatrix"
    assert est.xbar_ == pytest.approx(g1.xbar) and est.yhat_ == 0.0
    assert est.n_features_in_ == 2


def test_predict(est):
    u = est.predict([[0.7, 0.2], [0.9, 0.1], [0.3, 0.2], [0.5, 0.3]])
    assert u[0] == pytest.approx(1 - 0.05 / (0.7 * 0.35 * 0.7 * 0.8))
    assert u[1] == 0.0 and u[2] == 0.0 and np.isnan(u[3])


def test_transform_matches_scalar(est, g1):
    X = np.array([[0.99, 0.01], [0.3, 0.1], [0.8, 0.15]])
    out = est.transform(X)
    assert out.shape == (3, 2) and np.isnan(out[1, 0]) and out[1, 1] == 0.0
    for row, (h, v) in zip(X, out):
        assert v == pytest.approx(value_function(g1, row).value, abs=1e-8)
    assert list(est.get_feature_names_out()) == ["h", "V"]


def test_input_validation(est):
    with pytest.raises(DomainError):
        est.predict([[0.9, 0.2]])
    with pytest.raises(DomainError):
        est.predict([[0.1, 0.2, 0.3]])
    with pytest.raises(ValueError):
        est.predict([[np.nan, 0.1]])
    with pytest.raises(DomainError):
        FillingTheBoxController(gamma=-1).fit()
    with pytest.raises(DomainError):
        FillingTheBoxController(ybar=0).fit()


def test_simulate_and_score(est):
    run = est.simulate((0.99, 0.01))
    assert run.cost == pytest.approx(14.0528377856, abs=1e-6)
    assert est.score([[0.99, 0.01], [0.3, 0.1]]) == pytest.approx(run.cost / 2, abs=1e-4)
