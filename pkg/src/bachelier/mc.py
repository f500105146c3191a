"""Feynman-Kac Monte Carlo estimators.

Every estimator returns the sample mean with its standard error
``std / sqrt(n_paths)``.  Means use numpy's pairwise summation.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .analytic import HullWhiteParams
from .errors import ConfigError, DomainError
from .model import CoefficientFn, MarketModel, Payoff
from .pde import CauchySpec, bachelier_spec, dividend_spec
from .simulate import PathSet, SimConfig, _is_state_dependent, euler_steps, hw_steps, state_fn


@dataclass
class McEstimate:
    value: float
    stderr: float
    n_paths: int
    seed: int
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "stderr": self.stderr, "n_paths": self.n_paths,
                "seed": self.seed, "diagnostics": dict(self.diagnostics)}


def estimate(samples, cfg: SimConfig, **diagnostics) -> McEstimate:
    """Mean and standard error of per-path samples (a scalar means zero variance)."""
    n = cfg.n_paths
    if np.ndim(samples) == 0:
        return McEstimate(float(samples), 0.0, n, cfg.seed, diagnostics)
    samples = np.asarray(samples, dtype=float)
    mean = float(np.mean(samples))
    sd = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    return McEstimate(mean, sd / math.sqrt(n), n, cfg.seed, diagnostics)


def default_config(T: float, seed: int = 1, n_paths: int = 100_000, steps_per_year: int = 250,
                   t_start: float = 0.0) -> SimConfig:
    """Default Monte Carlo configuration: 10^5 paths and 250 steps per year."""
    n_steps = max(1, int(round(steps_per_year * (T - t_start))))
    return SimConfig(seed=seed, n_paths=n_paths, n_steps=n_steps, t_end=T, t_start=t_start)


def _span(cfg: SimConfig, t0: float, T: float) -> SimConfig:
    if cfg.t_start == t0 and cfg.t_end == T:
        return cfg
    return dataclasses.replace(cfg, t_start=t0, t_end=T)


def _is_zero(c) -> bool:
    if isinstance(c, (int, float)):
        return c == 0.0
    return isinstance(c, CoefficientFn) and c.kind == "constant" and c.value == 0.0


def fk_samples(spec: CauchySpec, x0: float, t0: float, cfg: SimConfig):
    """Per-path ``int phi h ds + phi_T g(X_T)`` with ``phi = exp(-int a)``, plus ``X_T``."""
    cfg = _span(cfg, t0, spec.T)
    dt = cfg.dt
    a_f, h_f = state_fn(spec.a), state_fn(spec.h)
    discount = not _is_zero(spec.a)
    h_vec = _is_state_dependent(spec.h)
    x = np.full(cfg.n_paths, float(x0)) if (discount or h_vec) else float(x0)
    a_prev = a_f(x, t0) if discount else 0.0
    phi_log = 0.0
    phi = 1.0
    h_prev = h_f(x, t0)
    source = 0.0
    x_T = None
    for step in euler_steps(spec.mu, spec.sigma, x0, cfg):
        x_T = step.x
        if discount:
            a_next = a_f(x_T, step.t)
            phi_log = phi_log + 0.5 * (a_prev + a_next) * dt
            a_prev = a_next
            phi_next = np.exp(-phi_log)
        else:
            phi_next = 1.0
        h_next = h_f(x_T, step.t)
        source = source + 0.5 * (phi * h_prev + phi_next * h_next) * dt
        phi, h_prev = phi_next, h_next
    return source + phi * spec.terminal(x_T), x_T


def fk_price(spec: CauchySpec, x0: float, t0: float, cfg: SimConfig) -> McEstimate:
    """Feynman-Kac estimate of ``f(x0, t0)`` for the Cauchy problem ``spec``."""
    if not 0.0 <= t0 < spec.T:
        raise DomainError(f"need 0 <= t0 < T, got t0={t0}, T={spec.T}")
    samples, _ = fk_samples(spec, x0, t0, cfg)
    return estimate(samples, cfg)


def price_ecc_riskneutral(model: MarketModel, payoff: Payoff, T: float, cfg: SimConfig) -> McEstimate:
    """Mean of ``g(A_T) - int_0^T r ds`` over risk-neutral asset paths."""
    est = fk_price(bachelier_spec(model, payoff, T, "risk-neutral"), model.A0, 0.0, cfg)
    est.diagnostics["measure"] = "risk-neutral"
    return est


def price_ecc_driftless(model: MarketModel, payoff: Payoff, T: float, cfg: SimConfig) -> McEstimate:
    """Mean of ``g(Z_T) - int_0^T r(Z_s, s) ds`` for the driftless diffusion ``dZ = vol dW``."""
    est = fk_price(bachelier_spec(model, payoff, T, "paper-eq7"), model.A0, 0.0, cfg)
    est.diagnostics["measure"] = "driftless"
    return est


def price_ecc_dividend(model: MarketModel, payoff: Payoff, T: float, cfg: SimConfig) -> McEstimate:
    """Mean of ``g(Z_T) - int r ds`` for ``dZ = -dividend dt + vol dW``."""
    est = fk_price(dividend_spec(model, payoff, T), model.A0, 0.0, cfg)
    est.diagnostics["measure"] = "dividend"
    return est


def price_on_paths(paths: PathSet, payoff: Callable) -> McEstimate:
    """Mean of ``g(A_T) - int r ds`` on stored paths (common random numbers)."""
    if paths.integrals is None:
        raise ConfigError("path set carries no rate integrals")
    cfg = SimConfig(**paths.meta["config"])
    return estimate(payoff(paths.terminal) - paths.integrals, cfg)


def price_gain_security(terminal_value: Callable, dividend_stream, model: MarketModel, T: float,
                        cfg: SimConfig) -> McEstimate:
    """Mean of ``X_T + int dividend ds - int r ds`` over risk-neutral asset paths.

    ``terminal_value`` maps terminal asset values to ``X_T``; ``dividend_stream``
    is a coefficient (or number) evaluated along the path.
    """
    cfg = _span(cfg, 0.0, T)
    div_f = state_fn(dividend_stream)
    dt = cfg.dt
    d_prev = div_f(np.full(cfg.n_paths, model.A0), 0.0)
    dividends = 0.0
    last = None
    for last in euler_steps(model.rate, model.vol, model.A0, cfg, rate=model.rate):
        d_next = div_f(last.x, last.t)
        dividends = dividends + 0.5 * (d_prev + d_next) * dt
        d_prev = d_next
    samples = terminal_value(last.x) + dividends - last.integral
    return estimate(samples, cfg)


def martingale_excess(model: MarketModel, T: float, cfg: SimConfig) -> McEstimate:
    """Mean of ``(A_T - beta_T) - (A_0 - beta_0)`` under the risk-neutral measure."""
    cfg = _span(cfg, 0.0, T)
    last = None
    for last in euler_steps(model.rate, model.vol, model.A0, cfg, rate=model.rate):
        pass
    return estimate(last.x - model.A0 - last.integral, cfg)


def _regress(y: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of ``y`` on ``w`` (both centred inside) and its standard error."""
    wc = w - np.mean(w)
    yc = y - np.mean(y)
    sxx = float(np.dot(wc, wc))
    if sxx == 0.0:
        return 0.0, 0.0
    slope = float(np.dot(wc, yc)) / sxx
    n = y.size
    resid = yc - slope * wc
    se = math.sqrt(float(np.dot(resid, resid)) / max(n - 2, 1) / sxx)
    return slope, se


def bond_price_mc(model: MarketModel, t: float, T: float, cfg: SimConfig, x_t: float | None = None) -> McEstimate:
    """Zero-coupon price ``1 - E[int_t^T r ds]`` from risk-neutral asset paths.

    Paths start at ``x_t`` (default ``A0``) at time ``t``.  The diagnostics
    hold the martingale loading ``gamma_B`` of the bond, estimated by
    regressing ``1 - int r`` on the Brownian increment over ``[t, T]``, and,
    for constant volatility, the replication weights ``gamma_B / vol`` (asset)
    and ``1 - gamma_B / vol`` (account).
    """
    if t > T:
        raise DomainError(f"t={t} exceeds T={T}")
    if t == T:
        return McEstimate(1.0, 0.0, cfg.n_paths, cfg.seed, {"gamma_B": 0.0, "gamma_B_stderr": 0.0})
    cfg = _span(cfg, t, T)
    x0 = model.A0 if x_t is None else float(x_t)
    w = np.zeros(cfg.n_paths)
    last = None
    for last in euler_steps(model.rate, model.vol, x0, cfg, rate=model.rate):
        w += last.dw
    samples = 1.0 - np.broadcast_to(last.integral, w.shape)
    est = estimate(samples if np.ndim(last.integral) else 1.0 - last.integral, cfg)
    gamma, gamma_se = _regress(np.asarray(samples, dtype=float), w)
    est.diagnostics.update({"gamma_B": gamma, "gamma_B_stderr": gamma_se})
    if model.vol.kind == "constant":
        v = model.vol.value
        est.diagnostics.update({"weight_asset": gamma / v, "weight_account": 1.0 - gamma / v})
    return est


def hw_bond_price_mc(p: HullWhiteParams, t: float, T: float, cfg: SimConfig, r_t: float | None = None) -> McEstimate:
    """``1 - E[int_t^T r ds]`` over short-rate paths started at ``r_t`` at time ``t``."""
    if t > T:
        raise DomainError(f"t={t} exceeds T={T}")
    if t == T:
        return McEstimate(1.0, 0.0, cfg.n_paths, cfg.seed)
    cfg = _span(cfg, t, T)
    last = None
    for last in hw_steps(p, cfg, r_t):
        pass
    return estimate(1.0 - last.integral, cfg)


def bond_price_on_paths(paths: PathSet) -> McEstimate:
    """``1 - mean(int r ds)`` from stored short-rate (or asset) paths."""
    if paths.integrals is None:
        raise ConfigError("path set carries no rate integrals")
    return estimate(1.0 - paths.integrals, SimConfig(**paths.meta["config"]))
