import numpy as np
import pytest
from hypothesis import given, strategies as st

from epictrl import (ModelInstance, check_assumption1, check_rmax_condition, constant,
                     fig1_model, fig2_model, linear_damped, model_from_spec,
                     reproduction_number, rho, saturating)
from epictrl.exceptions import ConfigError, DomainError
from epictrl.rates import check_positivity, parse_b

ASSUMPTION_MODELS = [
    ("fig1", fig1_model(), 0.05),
    ("fig2", fig2_model(), 0.05),
    ("sir", constant(0.3), 0.1),
    ("saturating", saturating("affine(0.3, 0.1)", 2.0), 0.05),
    ("damped", linear_damped("polynomial(0.1, 0.2, 0.1)", 0.8), 0.05),
]


def test_reproduction_number_examples(fig1):
    assert reproduction_number(ModelInstance(constant(0.3), 0.1), (0.5, 0.1)) == pytest.approx(1.5)
    assert reproduction_number(fig1, (1.0, 0.0)) == pytest.approx(7.0)
    assert reproduction_number(fig1, (0.0, 0.3)) == 0.0


def test_rho_examples(fig1):
    m = ModelInstance(constant(0.3), 0.1)
    assert rho(m, (0.5, 0.2)) == pytest.approx(1 / 3)
    assert rho(m, (1 / 3, 0.2)) == pytest.approx(0.0, abs=1e-15)
    assert rho(m, (2 / 3, 0.3)) == pytest.approx(0.5)
    with pytest.raises(DomainError):
        rho(m, (0.0, 0.2))
    with pytest.raises(DomainError):
        rho(fig1, (0.0, 0.5))


def test_rho_zero_beta(cx_rate):
    with pytest.raises(DomainError):
        rho(ModelInstance(cx_rate, 0.025), (0.5, 0.0))


def test_assumption_reports(cx_rate):
    assert check_assumption1(ModelInstance(fig1_model(), 0.05), 100).satisfied
    assert check_assumption1(ModelInstance(constant(0.3), 0.1), 10).satisfied
    rep = check_assumption1(ModelInstance(cx_rate, 0.025), 100)
    assert not rep.satisfied and rep.max_of > 0 and len(rep.violations) > 0
    assert rep.as_dict()["n_violations"] == len(rep.violations)
    with pytest.raises(DomainError):
        check_assumption1(ModelInstance(constant(0.3), 0.1), 1)


@pytest.mark.parametrize("name,rate,gamma", ASSUMPTION_MODELS)
def test_builtins_satisfy_assumption_at_200(name, rate, gamma):
    rep = check_assumption1(ModelInstance(rate, gamma), 200)
    assert rep.satisfied and rep.min_of > 0
    assert check_positivity(ModelInstance(rate, gamma))


def test_rmax_condition():
    assert check_rmax_condition(ModelInstance(fig1_model(), 0.05))
    assert not check_rmax_condition(ModelInstance(constant(0.04), 0.05))
    assert check_rmax_condition(ModelInstance(fig2_model(), 0.05))
    assert fig2_model().beta(1.0, 0.0) == pytest.approx(0.3)


@pytest.mark.parametrize("name,rate,gamma", ASSUMPTION_MODELS)
def test_analytic_partials_match_fd(name, rate, gamma):
    c = (np.arange(50) + 0.5) / 50
    X, Y = np.meshgrid(c, c)
    keep = X + Y <= 1 - 2e-6
    x, y = X[keep], Y[keep]
    fd = rate.with_partials("fd")
    for a, b in ((rate.beta_x(x, y), fd.beta_x(x, y)), (rate.beta_y(x, y), fd.beta_y(x, y))):
        assert np.allclose(a, b, rtol=1e-6, atol=1e-9)


def test_fd_partials_stay_in_simplex():
    r = fig1_model().with_partials("fd")
    # at the corner the stencil is one-sided and still finite
    assert np.isfinite(r.beta_x(1.0, 0.0)) and np.isfinite(r.beta_y(0.0, 1.0))


@pytest.mark.parametrize("name,rate,gamma", ASSUMPTION_MODELS)
def test_R_monotone_along_grid_lines(name, rate, gamma):
    m = ModelInstance(rate, gamma)
    g = np.linspace(0.01, 0.98, 60)
    for y in g[::6]:
        xs = g[g + y <= 1]
        assert np.all(np.diff(m.R(xs, y)) > 0)
    for x in g[::6]:
        ys = g[g + x <= 1]
        assert np.all(np.diff(m.R(x, ys)) <= 1e-15)


@given(st.floats(0.01, 0.99), st.floats(0.0, 0.99))
def test_rho_equals_R_identity(x, y):
    if x + y > 1:
        x, y = 1 - y, 1 - x
    for _, rate, gamma in ASSUMPTION_MODELS:
        m = ModelInstance(rate, gamma)
        R = reproduction_number(m, (x, y))
        assert rho(m, (x, y)) == pytest.approx((R - 1) / R, abs=1e-12)


def test_independent_rho_reimplementation(fig1):
    # 1 - gamma / (x * 0.35 x (1 - y)) written out by hand
    assert rho(fig1, (0.7, 0.2)) == pytest.approx(1 - 0.05 / (0.7 * 0.35 * 0.7 * 0.8), abs=1e-14)
    assert rho(fig1, (0.7, 0.2)) == pytest.approx(0.6355685131195336, abs=1e-12)


def test_parse_b_and_model_from_spec():
    assert parse_b("affine(0.2, 0.1)") == (0.2, 0.1)
    assert parse_b("constant(0.3)") == (0.3,)
    assert parse_b("polynomial(1, 0, 2)") == (1.0, 0.0, 2.0)
    assert parse_b(0.4) == (0.4,)
    m = model_from_spec("linear_damped", {"b": "affine(0.2, 0.1)", "a": 0.5})
    assert m.beta(0.3, 0.4) == pytest.approx(fig2_model().beta(0.3, 0.4))
    assert model_from_spec("saturating", {"b": "0.3", "a": 1.0}).beta(0.5, 1.0) == pytest.approx(0.15)
    for bad in ("affine(1)", "cubic(1,2)", "affine(a, b)"):
        with pytest.raises(ConfigError):
            parse_b(bad)
    with pytest.raises(ConfigError):
        model_from_spec("nope")
    with pytest.raises(ConfigError):
        model_from_spec("fig1_model", {"a": 1})


def test_invalid_constructors():
    with pytest.raises(DomainError):
        constant(0.0)
    with pytest.raises(DomainError):
        linear_damped(0.3, 1.5)
    with pytest.raises(DomainError):
        saturating("affine(-1, 0.1)", 1.0)
    with pytest.raises(DomainError):
        ModelInstance(constant(0.3), 0.0)


def test_counterexample_warns():
    from epictrl import counterexample_model
    with pytest.warns(UserWarning):
        r = counterexample_model()
    assert r.beta(0.5, 0.0) == 0.0 and r.zero_on_boundary
    assert r.beta(1.0, 0.5) == pytest.approx(0.15)
