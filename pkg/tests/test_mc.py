import math

import numpy as np
import pytest

from bachelier import mc
from bachelier.analytic import bachelier_call, constant_hw, hw_bond_price
from bachelier.errors import ConfigError, DomainError
from bachelier.model import Constant, MarketModel, Payoff, Tabulated, constant_model
from bachelier.pde import CauchySpec, price_bachelier_pde, price_dividend_pde
from bachelier.simulate import SimConfig, simulate_asset, simulate_hw_rate

from conftest import A0, K, R, T, V, within


def cfg(n_paths=100_000, n_steps=250, t_end=1.0, seed=1):
    return SimConfig(seed=seed, n_paths=n_paths, n_steps=n_steps, t_end=t_end)


def test_estimate_statistics():
    est = mc.estimate(np.array([1.0, 2.0, 3.0, 4.0]), SimConfig(1, 4, 1, 1.0))
    assert est.value == 2.5
    assert est.stderr == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert mc.estimate(0.3, SimConfig(1, 4, 1, 1.0)).stderr == 0.0


def test_fk_martingale_of_driftless_diffusion():
    spec = CauchySpec(mu=0.0, sigma=10.0, a=0.0, h=0.0, terminal=lambda x: x, T=1.0)
    est = mc.fk_price(spec, 100.0, 0.0, cfg(50_000, 20))
    assert within(est.value, 100.0, est.stderr)


def test_fk_discounting():
    spec = CauchySpec(mu=0.0, sigma=1.0, a=0.7, h=0.0, terminal=lambda x: np.ones_like(x), T=2.0)
    est = mc.fk_price(spec, 0.0, 0.5, cfg(1000, 300))
    # constant discount: zero variance, trapezoid in time is exact for a constant rate
    assert est.value == pytest.approx(math.exp(-0.7 * 1.5), rel=1e-12)


def test_fk_state_dependent_discount_matches_pde():
    a = Tabulated([-50.0, 50.0], [0.0], [[0.0], [1.0]])  # a(x) rises linearly in x
    spec = CauchySpec(mu=0.0, sigma=5.0, a=a, h=0.0, terminal=lambda x: np.ones_like(x), T=1.0)
    from bachelier.pde import GridSpec, solve_cauchy

    pde_value = solve_cauchy(spec, GridSpec(-100, 100, 801, 400)).value_at(0.0)
    est = mc.fk_price(spec, 0.0, 0.0, cfg(50_000, 100))
    assert abs(est.value - pde_value) <= max(3 * est.stderr, 2e-3)


def test_fk_time_domain():
    spec = CauchySpec(mu=0.0, sigma=1.0, a=0.0, h=0.0, terminal=lambda x: x, T=1.0)
    with pytest.raises(DomainError):
        mc.fk_price(spec, 0.0, 1.0, cfg(10, 10))


def test_riskneutral_call_matches_closed_form(std_model):
    est = mc.price_ecc_riskneutral(std_model, Payoff.call(K), T, cfg(1_000_000))
    assert within(est.value, bachelier_call(A0, K, R, V, T), est.stderr)
    assert within(est.value, 3.0690, est.stderr)
    assert est.stderr < 0.02


def test_riskneutral_degenerate_volatility():
    m = constant_model(rho=R, vol=0.0, rate=R, A0=A0, allow_degenerate=True)
    est = mc.price_ecc_riskneutral(m, Payoff.call(K), T, cfg(1000, 50))
    assert est.value == pytest.approx(max(A0 + R * T - K, 0.0) - R * T, abs=1e-9)
    assert est.stderr < 1e-9


def test_forward_payoff_price(std_model):
    est = mc.price_ecc_riskneutral(std_model, Payoff.forward(95.0), T, cfg())
    assert within(est.value, A0 - 95.0, est.stderr)


def test_driftless_matches_driftless_mode_pde(std_model):
    est = mc.price_ecc_driftless(std_model, Payoff.call(K), T, cfg())
    pde_value = price_bachelier_pde(std_model, Payoff.call(K), T, drift_mode="paper-eq7").value
    assert abs(est.value - pde_value) <= max(3 * est.stderr, 2e-3)


def test_dividend_zero_reduces_to_driftless(std_model):
    m = constant_model(rho=R, vol=V, rate=R, A0=A0, dividend=0.0)
    a = mc.price_ecc_dividend(m, Payoff.call(K), T, cfg(20_000, 50))
    b = mc.price_ecc_driftless(m, Payoff.call(K), T, cfg(20_000, 50))
    assert a.value == b.value and a.stderr == b.stderr


def test_dividend_matches_pde():
    m = constant_model(rho=R, vol=V, rate=R, A0=A0, dividend=1.5)
    est = mc.price_ecc_dividend(m, Payoff.call(K), T, cfg())
    assert abs(est.value - price_dividend_pde(m, Payoff.call(K), T).value) <= max(3 * est.stderr, 2e-3)


def test_dividend_deterministic_characteristic():
    m = constant_model(rho=R, vol=1e-9, rate=R, A0=A0, dividend=1.5)
    est = mc.price_ecc_dividend(m, Payoff.forward(0.0), 2.0, cfg(100, 40, 2.0))
    assert est.value == pytest.approx(A0 - 1.5 * 2 - R * 2, abs=1e-6)


def test_price_on_paths_common_random_numbers(std_model):
    paths = simulate_asset(std_model, cfg(50_000, 50), store="ends")
    call = mc.price_on_paths(paths, Payoff.call(K))
    put = mc.price_on_paths(paths, Payoff.put(K))
    assert call.value - put.value == pytest.approx(paths.terminal.mean() - K, abs=1e-12)


def test_gain_security_cases(std_model):
    assert mc.price_gain_security(lambda a: a, 0.0, std_model, T, cfg(20_000, 50)).value == pytest.approx(
        mc.price_ecc_riskneutral(std_model, Payoff.forward(0.0), T, cfg(20_000, 50)).value, abs=1e-12)
    zero_rate = constant_model(rho=0.0, vol=V, rate=0.0, A0=A0)
    est = mc.price_gain_security(lambda a: np.zeros_like(a), 1.25, zero_rate, 2.0, cfg(100, 20, 2.0))
    assert est.value == pytest.approx(2.5, abs=1e-12) and est.stderr == 0.0
    est = mc.price_gain_security(lambda a: a, Constant(1.5), std_model, T, cfg(50_000, 50))
    assert within(est.value, A0 + R * T + 1.5 * T - R * T, est.stderr)


def test_martingale_excess(std_model):
    est = mc.martingale_excess(std_model, T, cfg())
    assert within(est.value, 0.0, est.stderr)


def test_bond_constant_rate_is_exact():
    m = constant_model(rho=0.03, vol=10.0, rate=0.03, A0=A0)
    est = mc.bond_price_mc(m, 1.0, 3.0, cfg(1000, 100, 3.0))
    assert est.value == pytest.approx(0.94, abs=1e-12)
    assert est.stderr == 0.0
    assert mc.bond_price_mc(m, 2.0, 2.0, cfg(10, 10)).value == 1.0


def test_bond_state_dependent_rate_seed_consistency():
    # rate r(x) = 0.01 + 0.0001 x, linear in the asset: E int r is available in closed form too
    rate = Tabulated([0.0, 200.0], [0.0], [[0.01], [0.03]])
    m = MarketModel(rho=1.0, vol=10.0, rate=rate, A0=A0)
    a = mc.bond_price_mc(m, 0.0, 1.0, cfg(20_000, 100, seed=1))
    b = mc.bond_price_mc(m, 0.0, 1.0, cfg(20_000, 100, seed=2))
    assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)
    # dE[A]/dt = r(E A) stays linear, so E A_t = A0 e^{0.0001 t} + ...; compare to the ODE solution
    k, c0 = 1e-4, 0.01
    mean_rate_integral = (c0 + k * A0) * (math.exp(k * 1.0) - 1.0) / k
    assert within(a.value, 1.0 - mean_rate_integral, a.stderr)
    assert "gamma_B" in a.diagnostics


def test_bond_replication_weights_for_linear_rate():
    rate = Tabulated([0.0, 200.0], [0.0], [[0.01], [0.03]])
    m = MarketModel(rho=1.0, vol=10.0, rate=rate, A0=A0)
    est = mc.bond_price_mc(m, 0.0, 1.0, cfg(50_000, 100))
    # B = 1 - int r; the loading on W is -k v int_0^T (T - s) ds = -k v T^2 / 2 to first order
    assert est.diagnostics["gamma_B"] == pytest.approx(-1e-4 * 10.0 * 0.5, rel=0.05)
    assert est.diagnostics["weight_asset"] + est.diagnostics["weight_account"] == pytest.approx(1.0)


def test_hw_bond_mc_matches_closed_form():
    p = constant_hw(0.1, 0.5, 0.02, 0.03)
    for t, T_, r_t in ((0.0, 1.0, None), (0.5, 2.0, 0.05)):
        c = SimConfig(1, 100_000, 250, T_, scheme="exact")
        est = mc.hw_bond_price_mc(p, t, T_, c, r_t)
        assert within(est.value, hw_bond_price(p, p.r0 if r_t is None else r_t, t, T_), est.stderr)


def test_hw_surface_matches_mc_on_stored_paths():
    p = constant_hw(0.1, 0.5, 0.02, 0.03)
    paths = simulate_hw_rate(p, SimConfig(3, 50_000, 100, 2.0, scheme="exact"), store="ends")
    est = mc.bond_price_on_paths(paths)
    assert within(est.value, hw_bond_price(p, p.r0, 0.0, 2.0), est.stderr)


def test_bond_domain(std_model):
    with pytest.raises(DomainError):
        mc.bond_price_mc(std_model, 2.0, 1.0, cfg(10, 10))


def test_price_on_paths_needs_integrals():
    from bachelier.simulate import simulate_fk_diffusion

    with pytest.raises(ConfigError):
        mc.price_on_paths(simulate_fk_diffusion(1.0, 0.0, 0.0, cfg(10, 10)), Payoff.call(0.0))


def test_default_config():
    c = mc.default_config(2.0)
    assert (c.n_paths, c.n_steps, c.t_end, c.seed) == (100_000, 500, 2.0, 1)
