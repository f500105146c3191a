import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bachelier.errors import ConfigError, DomainError
from bachelier.model import (
    CoefficientFn,
    Constant,
    EsgInputs,
    MarketModel,
    Payoff,
    PiecewiseConstant,
    Tabulated,
    as_coefficient,
    constant_model,
    esg_adjusted_price,
    eval_coefficient,
    negate,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


# -- coefficients ------------------------------------------------------------------

def test_constant_evaluates_everywhere():
    assert eval_coefficient(Constant(2.0), 50.0, 0.3) == 2.0


def test_piecewise_interval_lookup():
    c = PiecewiseConstant([0.0, 1.0, 2.0], [1.0, 3.0])
    assert eval_coefficient(c, 0.0, 1.5) == 3.0
    assert eval_coefficient(c, 0.0, 1.0) == 3.0  # left-closed intervals
    assert eval_coefficient(c, 0.0, 0.999) == 1.0
    assert eval_coefficient(c, 0.0, 2.0) == 3.0  # last interval closed


def test_tabulated_flat_extrapolation_beyond_grid():
    c = Tabulated([0.0, 1.0], [0.0, 1.0], [[0.1, 0.1], [0.2, 0.2]])
    assert eval_coefficient(c, 5.0, 0.5) == pytest.approx(0.2)
    assert eval_coefficient(c, -5.0, 0.5) == pytest.approx(0.1)


def test_tabulated_bilinear_inside():
    # c(x, t) = x + 10 t is reproduced exactly by bilinear interpolation
    xs, ts = np.array([0.0, 1.0, 3.0]), np.array([0.0, 0.5, 1.0])
    table = xs[:, None] + 10.0 * ts[None, :]
    c = Tabulated(xs, ts, table)
    assert c(2.2, 0.7) == pytest.approx(2.2 + 7.0)
    assert c.depends_on_x


def test_tabulated_single_node_axis_is_constant_along_it():
    c = Tabulated([1.0], [0.0, 1.0], [[0.0, 2.0]])
    assert c(-100.0, 0.5) == pytest.approx(1.0)
    assert not c.depends_on_x


def test_evaluate_outside_horizon_raises():
    c = PiecewiseConstant([0.0, 1.0], [1.0])
    with pytest.raises(DomainError):
        eval_coefficient(c, 0.0, 1.5)
    with pytest.raises(DomainError):
        eval_coefficient(Constant(1.0), 0.0, -0.1)


def test_piecewise_time_integral_is_exact():
    c = PiecewiseConstant([0.0, 1.0, 2.0], [1.0, 2.0])
    assert c.time_integral(0.0, 1.5) == pytest.approx(2.0)
    assert c.time_integral(0.5, 2.0) == pytest.approx(2.5)


@pytest.mark.parametrize("bad", [
    lambda: PiecewiseConstant([0.0], []),
    lambda: PiecewiseConstant([0.5, 1.0], [1.0]),
    lambda: PiecewiseConstant([0.0, 1.0, 0.5], [1.0, 2.0]),
    lambda: PiecewiseConstant([0.0, 1.0], [1.0, 2.0]),
    lambda: Tabulated([1.0, 0.0], [0.0], [[1.0], [2.0]]),
    lambda: Constant(float("nan")),
])
def test_invalid_coefficients_rejected(bad):
    with pytest.raises(ConfigError):
        bad()


@pytest.mark.parametrize("c", [
    Constant(1.5),
    PiecewiseConstant([0.0, 1.0, 3.0], [0.5, -1.0]),
    Tabulated([0.0, 1.0], [0.0, 2.0], [[1.0, 2.0], [3.0, 4.0]], horizon=2.0),
])
def test_coefficient_serialisation_round_trip(c):
    d = json.loads(json.dumps(c.to_dict()))
    back = CoefficientFn.from_dict(d)
    xs, ts = np.linspace(-1, 2, 7), np.linspace(0, 1.9, 7)
    np.testing.assert_array_equal(back(xs, ts), c(xs, ts))
    assert back.kind == c.kind


def test_bare_number_parses_as_constant():
    assert as_coefficient(3).kind == "constant"
    assert CoefficientFn.from_dict(2.5)(0.0, 0.0) == 2.5


@given(finite, st.floats(0, 10))
def test_negate_flips_sign(value, t):
    c = negate(PiecewiseConstant([0.0, 5.0, 10.0], [value, 2 * value]))
    assert c(0.0, t) == -PiecewiseConstant([0.0, 5.0, 10.0], [value, 2 * value])(0.0, t)


@given(st.floats(0, 2), st.floats(0, 2), st.floats(0, 2))
def test_piecewise_integral_additive(a, b, c):
    lo, mid, hi = sorted((a, b, c))
    f = PiecewiseConstant([0.0, 0.3, 1.1, 2.0], [1.0, -2.0, 0.5])
    assert f.time_integral(lo, hi) == pytest.approx(f.time_integral(lo, mid) + f.time_integral(mid, hi),
                                                    abs=1e-12)


# -- market model ------------------------------------------------------------------

def test_model_rejects_rate_above_rho():
    with pytest.raises(ConfigError, match="rate exceeds rho"):
        constant_model(rho=1.0, vol=10.0, rate=2.0, A0=100.0)


def test_model_rejects_rate_above_rho_on_one_interval():
    with pytest.raises(ConfigError):
        MarketModel(rho=PiecewiseConstant([0, 1, 2], [3.0, 1.0]), vol=10.0,
                    rate=PiecewiseConstant([0, 1.5, 2], [2.0, 0.5]), A0=100.0)


@pytest.mark.parametrize("kwargs", [
    dict(rho=2, vol=10, rate=2, A0=0.0),
    dict(rho=2, vol=10, rate=2, A0=100.0, beta0=0.0),
    dict(rho=2, vol=0.0, rate=2, A0=100.0),
    dict(rho=2, vol=-1.0, rate=2, A0=100.0),
])
def test_model_invalid_inputs(kwargs):
    with pytest.raises(ConfigError):
        constant_model(**kwargs)


def test_degenerate_volatility_needs_flag():
    m = constant_model(rho=0.0, vol=0.0, rate=0.0, A0=100.0, allow_degenerate=True)
    assert m.vol.value == 0.0


def test_market_price_of_risk():
    m = constant_model(rho=3.0, vol=10.0, rate=2.0, A0=100.0)
    assert m.market_price_of_risk(100.0, 0.5) == pytest.approx(0.1)


def test_model_round_trip():
    m = MarketModel(rho=PiecewiseConstant([0, 1, 2], [3.0, 2.5]), vol=Tabulated([90, 110], [0], [[9.0], [11.0]]),
                    rate=2.0, dividend=1.0, A0=100.0, beta0=2.0)
    back = MarketModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back.to_dict() == m.to_dict()
    assert back.horizon == 2.0


def test_model_missing_field():
    with pytest.raises(ConfigError, match="missing"):
        MarketModel.from_dict({"rho": 1, "vol": 1})


# -- payoffs --------------------------------------------------------------------------

def test_payoff_values():
    x = np.array([90.0, 100.0, 110.0])
    np.testing.assert_array_equal(Payoff.call(100)(x), [0, 0, 10])
    np.testing.assert_array_equal(Payoff.put(100)(x), [10, 0, 0])
    np.testing.assert_array_equal(Payoff.forward(100)(x), [-10, 0, 10])


def test_tabulated_payoff_interpolates_and_extrapolates_flat():
    g = Payoff.tabulated([0.0, 1.0, 2.0], [0.0, 1.0, 4.0])
    assert g(1.5) == pytest.approx(2.5)
    assert g(10.0) == 4.0


@pytest.mark.parametrize("d", [
    {"kind": "call", "strike": -20.0},
    {"kind": "tabulated", "x_grid": [0, 1], "g_grid": [1, 2]},
])
def test_payoff_round_trip(d):
    p = Payoff.from_dict(d)
    assert Payoff.from_dict(p.to_dict()) == p


@pytest.mark.parametrize("d", [{"kind": "digital"}, {"strike": 1}, {"kind": "tabulated", "x_grid": [0, 1],
                                                                     "g_grid": [1]}])
def test_payoff_invalid(d):
    with pytest.raises(ConfigError):
        Payoff.from_dict(d)


# -- ESG adjustment --------------------------------------------------------------------

@pytest.mark.parametrize("price, score, affinity, expected", [
    (100, 0, 0.5, 100),
    (100, -0.5, 3.0, -50),
    (80, 0.25, 1.0, 100),
])
def test_esg_adjusted_price(price, score, affinity, expected):
    assert esg_adjusted_price(EsgInputs(price, score, affinity)) == pytest.approx(expected)


def test_esg_rejects_nonpositive_price():
    with pytest.raises(ConfigError):
        EsgInputs(0.0, 0.1, 1.0)


@given(st.floats(0.01, 1e4), st.floats(-5, 5), st.floats(-5, 5))
def test_esg_linear_in_score(price, score, affinity):
    base = esg_adjusted_price(EsgInputs(price, 0.0, affinity))
    assert base == price
    assert esg_adjusted_price(EsgInputs(price, score, affinity)) - base == pytest.approx(
        price * affinity * score, rel=1e-12, abs=1e-9)
