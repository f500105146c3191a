import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bachelier.analytic import bachelier_call, bachelier_put
from bachelier.errors import ConfigError, DomainError
from bachelier.model import Constant, MarketModel, Payoff, PiecewiseConstant, constant_model
from bachelier.pde import (
    CauchySpec,
    GridSpec,
    default_grid,
    delta,
    price_bachelier_pde,
    price_dividend_pde,
    solve_cauchy,
)

from conftest import A0, K, R, T, V


def test_linear_terminal_is_preserved():
    spec = CauchySpec(mu=0.0, sigma=10.0, a=0.0, h=0.0, terminal=lambda x: x, T=1.0)
    sol = solve_cauchy(spec, GridSpec(50, 150, 101, 20))
    np.testing.assert_allclose(sol.surface, np.broadcast_to(sol.x, sol.surface.shape), atol=1e-9)


def test_quadratic_terminal_matches_exact_solution():
    # f(x, t) = x^2 + (v^2 - r)(T - t) solves f_t + v^2/2 f_xx - r = 0 exactly
    v, r, Tm = 3.0, 2.0, 1.5
    spec = CauchySpec(mu=0.0, sigma=v, a=0.0, h=-r, terminal=lambda x: x * x, T=Tm)
    # the linear boundary condition is wrong for x^2, so keep the edges far away
    sol = solve_cauchy(spec, GridSpec(-40, 40, 401, 60))
    inner = np.abs(sol.x) <= 10.0
    for t in (0.0, 0.75):
        exact = sol.x ** 2 + (v * v - r) * (Tm - t)
        np.testing.assert_allclose(sol.row(t)[inner], exact[inner], rtol=0, atol=1e-8)


def test_discount_term():
    # f = exp(-k (T - t)) for g = 1, a = k
    spec = CauchySpec(mu=0.0, sigma=1.0, a=0.7, h=0.0, terminal=lambda x: np.ones_like(x), T=2.0)
    sol = solve_cauchy(spec, GridSpec(-5, 5, 51, 400))
    # two implicit start-up steps leave an O(dt^2) error of about 1e-5 relative
    assert sol.value_at(0.0) == pytest.approx(math.exp(-1.4), rel=5e-5)


def test_zero_rate_call_default_grid(zero_rate_model):
    res = price_bachelier_pde(zero_rate_model, Payoff.call(K), T, drift_mode="paper-eq7")
    assert res.method == "pde"
    assert res.value == pytest.approx(3.9894, abs=1e-3)
    assert res.value == pytest.approx(bachelier_call(A0, K, 0.0, V, T), abs=1e-3)


@pytest.mark.parametrize("mode", ["paper-eq7", "risk-neutral"])
def test_both_modes_agree_at_zero_rate(zero_rate_model, mode):
    assert price_bachelier_pde(zero_rate_model, Payoff.call(K), T, drift_mode=mode).value == pytest.approx(
        bachelier_call(A0, K, 0.0, V, T), abs=1e-3)


@pytest.mark.parametrize("kind, closed", [("call", bachelier_call), ("put", bachelier_put)])
@pytest.mark.parametrize("strike", [90.0, 100.0, 115.0])
def test_risk_neutral_mode_matches_closed_form(std_model, kind, closed, strike):
    payoff = Payoff(kind, strike)
    res = price_bachelier_pde(std_model, payoff, T, drift_mode="risk-neutral")
    assert res.value == pytest.approx(closed(A0, strike, R, V, T), abs=1e-3)


def test_driftless_mode_differs_from_closed_form_at_positive_rate(std_model):
    driftless = price_bachelier_pde(std_model, Payoff.call(K), T, drift_mode="paper-eq7").value
    # the driftless reading equals E[(A0 + vW - K)^+] - rT
    expected = bachelier_call(A0, K, 0.0, V, T) - R * T
    assert driftless == pytest.approx(expected, abs=1e-3)
    assert bachelier_call(A0, K, R, V, T) - driftless > 1.0


def test_second_order_convergence(zero_rate_model):
    exact = bachelier_call(A0, K, 0.0, V, T)
    grid = default_grid(A0, V, T, n_x=201, n_t=100)
    errors = []
    for _ in range(3):
        errors.append(abs(price_bachelier_pde(zero_rate_model, Payoff.call(K), T, grid).value - exact))
        grid = grid.refined()
    for coarse, fine in zip(errors, errors[1:]):
        assert 3.5 <= coarse / fine <= 4.5


def test_time_dependent_rate_matches_integrated_closed_form():
    rate = PiecewiseConstant([0.0, 0.5, 1.0], [1.0, 3.0])
    m = MarketModel(rho=4.0, vol=V, rate=rate, A0=A0)
    res = price_bachelier_pde(m, Payoff.call(K), 1.0, drift_mode="risk-neutral",
                              grid=default_grid(A0, V, 1.0, 3.0, n_x=801, n_t=800))
    # with a deterministic rate, A_T is normal with mean A0 + int r = A0 + 2
    assert res.value == pytest.approx(bachelier_call(A0, K, 2.0, V, 1.0), abs=2e-3)


def test_dividend_zero_reduces_to_driftless_mode():
    m = constant_model(rho=R, vol=V, rate=R, A0=A0, dividend=0.0)
    a = price_dividend_pde(m, Payoff.call(K), T).value
    b = price_bachelier_pde(m, Payoff.call(K), T, drift_mode="paper-eq7").value
    assert a == b


def test_dividend_deterministic_characteristic():
    m = constant_model(rho=0.0, vol=1e-3, rate=0.0, A0=10.0, dividend=1.0)
    grid = GridSpec(0.0, 20.0, 401, 200, theta=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = price_dividend_pde(m, Payoff.forward(0.0), 2.0, grid)
    assert res.value == pytest.approx(8.0, abs=1e-6)


def test_dividend_requires_dividend():
    with pytest.raises(ConfigError):
        price_dividend_pde(constant_model(rho=R, vol=V, rate=R, A0=A0), Payoff.call(K), T)


def test_peclet_switch_warns_and_uses_implicit():
    spec = CauchySpec(mu=50.0, sigma=0.1, a=0.0, h=0.0, terminal=lambda x: x, T=1.0)
    with pytest.warns(RuntimeWarning, match="Peclet"):
        sol = solve_cauchy(spec, GridSpec(0, 100, 101, 50))
    assert sol.diagnostics["switched_to_implicit"] and sol.diagnostics["theta_used"] == 1.0


def test_delta_surface_values(zero_rate_model):
    spec_sol = solve_cauchy(
        CauchySpec(mu=0.0, sigma=V, a=0.0, h=0.0, terminal=Payoff.call(K), T=T), default_grid(A0, V, T))
    assert delta(spec_sol, A0, 0.0) == pytest.approx(0.5, abs=1e-2)
    with pytest.warns(RuntimeWarning):
        assert delta(spec_sol, spec_sol.x[-1], T) == pytest.approx(1.0)
    with pytest.warns(RuntimeWarning):
        assert delta(spec_sol, spec_sol.x[0], T) == pytest.approx(0.0)
    res = price_bachelier_pde(zero_rate_model, Payoff.call(K), T)
    assert res.diagnostics["delta"] == pytest.approx(0.5, abs=1e-2)


def test_price_outside_grid_rejected(std_model):
    with pytest.raises(DomainError):
        price_bachelier_pde(std_model, Payoff.call(K), T, grid=GridSpec(0, 50, 101, 10))


@pytest.mark.parametrize("kwargs", [dict(x_min=1, x_max=0), dict(n_x=4), dict(n_t=0), dict(theta=1.5),
                                    dict(rannacher_steps=-1)])
def test_grid_validation(kwargs):
    base = dict(x_min=0.0, x_max=1.0, n_x=11, n_t=10)
    with pytest.raises(ConfigError):
        GridSpec(**{**base, **kwargs})


def test_unknown_drift_mode(std_model):
    with pytest.raises(ConfigError):
        price_bachelier_pde(std_model, Payoff.call(K), T, drift_mode="other")


def test_solution_csv_and_row_interpolation():
    spec = CauchySpec(mu=0.0, sigma=1.0, a=0.0, h=-1.0, terminal=lambda x: x, T=1.0)
    sol = solve_cauchy(spec, GridSpec(-1, 1, 5, 2, rannacher_steps=0))
    assert sol.to_csv().splitlines()[0] == "t,x,f"
    assert len(sol.to_csv().splitlines()) == 1 + 3 * 5
    np.testing.assert_allclose(sol.row(0.25), sol.x - 0.75, atol=1e-12)
    with pytest.raises(DomainError):
        sol.row(2.0)


@given(st.floats(-50, 50), st.floats(0.5, 20), st.floats(0.1, 3))
def test_affine_terminal_exact(slope, vol, maturity):
    spec = CauchySpec(mu=0.0, sigma=vol, a=0.0, h=-1.0, terminal=lambda x: slope * x + 3.0, T=maturity)
    sol = solve_cauchy(spec, GridSpec(-10, 10, 21, 5))
    np.testing.assert_allclose(sol.row(0.0), slope * sol.x + 3.0 - maturity, atol=1e-9 * max(1, abs(slope)))
