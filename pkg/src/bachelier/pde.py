"""Finite-difference solver for the backward Cauchy problem

    f_t + mu f_x + 0.5 sigma^2 f_xx - a f + h = 0,   f(x, T) = g(x),

with its Bachelier and dividend instances.

The scheme is a theta-method in time (Crank-Nicolson by default, with a few
fully implicit start-up steps to damp payoff kinks) and central differences
in space.  Both ends use the linearity condition ``f_xx = 0``.

Two drift conventions exist for the Bachelier equation.  The driftless mode
(identifier ``paper-eq7``) solves ``f_t + 0.5 v^2 f_xx - r = 0`` with no
first-order term, whose Feynman-Kac representation runs a driftless diffusion.  ``risk-neutral`` adds the term
``r f_x``, whose solution is the risk-neutral expectation and agrees with the
closed-form call.  For ``r != 0`` the two differ; both are provided.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy.linalg import solve_banded

from .analytic import PriceResult
from .errors import ConfigError, DomainError
from .model import CoefficientFn, MarketModel, Payoff, negate

DRIFT_MODES = ("paper-eq7", "risk-neutral")


@dataclass(frozen=True)
class CauchySpec:
    """Coefficients of the Cauchy problem.  Each may be a :class:`CoefficientFn`,
    a callable ``(x, t)`` or a number."""

    mu: Any
    sigma: Any
    a: Any
    h: Any
    terminal: Callable
    T: float

    def __post_init__(self):
        if not self.T > 0.0:
            raise ConfigError(f"T must be > 0, got {self.T}")


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    n_x: int
    n_t: int
    theta: float = 0.5
    rannacher_steps: int = 2

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ConfigError("x_min must be below x_max")
        if self.n_x < 5:
            raise ConfigError("n_x must be >= 5 (the boundary rows need three interior nodes)")
        if self.n_t < 1:
            raise ConfigError("n_t must be >= 1")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0, 1]")
        if self.rannacher_steps < 0:
            raise ConfigError("rannacher_steps must be >= 0")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    def refined(self, factor: int = 2) -> "GridSpec":
        """Grid with ``dx`` and ``dt`` divided by ``factor``; existing nodes are kept."""
        return GridSpec(self.x_min, self.x_max, (self.n_x - 1) * factor + 1, self.n_t * factor,
                        self.theta, self.rannacher_steps)

    def to_dict(self) -> dict[str, Any]:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_x": self.n_x, "n_t": self.n_t,
                "theta": self.theta, "rannacher_steps": self.rannacher_steps}


@dataclass
class PdeSolution:
    """``surface[j, i] = f(x[i], t[j])`` with ``t`` ascending from 0 to ``T``."""

    grid: GridSpec
    x: np.ndarray
    t: np.ndarray
    surface: np.ndarray
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def row(self, t: float) -> np.ndarray:
        if t < self.t[0] or t > self.t[-1]:
            raise DomainError(f"t={t} outside [{self.t[0]}, {self.t[-1]}]")
        j = int(np.searchsorted(self.t, t))
        if j < self.t.size and self.t[j] == t:
            return self.surface[j]
        w = (t - self.t[j - 1]) / (self.t[j] - self.t[j - 1])
        return (1.0 - w) * self.surface[j - 1] + w * self.surface[j]

    def value_at(self, x: float, t: float = 0.0) -> float:
        """Linear interpolation of the surface at ``(x, t)``."""
        if x < self.x[0] or x > self.x[-1]:
            raise DomainError(f"x={x} outside the grid [{self.x[0]}, {self.x[-1]}]")
        return float(np.interp(x, self.x, self.row(t)))

    def to_csv(self, fh=None) -> str | None:
        out = io.StringIO() if fh is None else fh
        out.write("t,x,f\n")
        xs = [format(v, ".9g") for v in self.x]
        for j, t in enumerate(self.t):
            ts = format(t, ".9g")
            out.writelines(f"{ts},{xs[i]},{self.surface[j, i]:.9g}\n" for i in range(self.x.size))
        return out.getvalue() if fh is None else None


def _evaluator(c) -> Callable[[np.ndarray, float], np.ndarray]:
    if isinstance(c, CoefficientFn):
        return lambda x, t: np.broadcast_to(np.asarray(c(x, t), dtype=float), x.shape)
    if callable(c):
        return lambda x, t: np.broadcast_to(np.asarray(c(x, t), dtype=float), x.shape)
    value = float(c)
    return lambda x, t: np.full(x.shape, value)


def _operator(mu, sig, a, dx):
    """Sub-, main and super-diagonal of the discrete generator on interior nodes."""
    diff = 0.5 * sig * sig / (dx * dx)
    adv = mu / (2.0 * dx)
    return diff - adv, -2.0 * diff - a, diff + adv


def _apply_linear_boundary(lo, d, up):
    """Fold ``f_0 = 2 f_1 - f_2`` and its mirror into the first and last interior rows."""
    d, lo, up = d.copy(), lo.copy(), up.copy()
    d[0] += 2.0 * lo[0]
    up[0] -= lo[0]
    d[-1] += 2.0 * up[-1]
    lo[-1] -= up[-1]
    lo[0] = 0.0
    up[-1] = 0.0
    return lo, d, up


def _matvec(lo, d, up, f):
    out = d * f
    out[1:] += lo[1:] * f[:-1]
    out[:-1] += up[:-1] * f[1:]
    return out


def solve_cauchy(spec: CauchySpec, grid: GridSpec) -> PdeSolution:
    """Solve backward from ``T`` to 0 and return the full surface."""
    x = grid.x()
    xi = x[1:-1]
    dx = grid.dx
    dt = spec.T / grid.n_t
    t = np.linspace(0.0, spec.T, grid.n_t + 1)
    mu_f, sig_f, a_f, h_f = (_evaluator(c) for c in (spec.mu, spec.sigma, spec.a, spec.h))

    def coeffs(tk):
        mu, sig = mu_f(xi, tk), sig_f(xi, tk)
        if np.any(sig <= 0.0):
            raise DomainError(f"sigma must be > 0 on the grid (t={tk})")
        return mu, sig, a_f(xi, tk), h_f(xi, tk)

    theta = grid.theta
    switched = False
    mu, sig, _, _ = coeffs(spec.T)
    peclet = float(np.max(np.abs(mu) * dx / (sig * sig)))
    if peclet > 1.0 and theta < 1.0:
        warnings.warn(
            f"cell Peclet number {peclet:.3g} > 1: central scheme not diagonally dominant, using theta = 1",
            RuntimeWarning, stacklevel=2,
        )
        theta, switched = 1.0, True

    surface = np.empty((grid.n_t + 1, grid.n_x))
    surface[-1] = spec.terminal(x)
    f = surface[-1, 1:-1].copy()
    c_next = coeffs(t[-1])
    op_next = _apply_linear_boundary(*_operator(c_next[0], c_next[1], c_next[2], dx))
    for j in range(grid.n_t - 1, -1, -1):
        th = 1.0 if (grid.n_t - 1 - j) < grid.rannacher_steps else theta
        c_now = coeffs(t[j])
        op_now = _apply_linear_boundary(*_operator(c_now[0], c_now[1], c_now[2], dx))
        rhs = f + (1.0 - th) * dt * _matvec(*op_next, f) + dt * (th * c_now[3] + (1.0 - th) * c_next[3])
        lo, d, up = op_now
        ab = np.empty((3, xi.size))
        ab[0, 1:] = -th * dt * up[:-1]
        ab[0, 0] = 0.0
        ab[1] = 1.0 - th * dt * d
        ab[2, :-1] = -th * dt * lo[1:]
        ab[2, -1] = 0.0
        f = solve_banded((1, 1), ab, rhs, check_finite=False)
        row = surface[j]
        row[1:-1] = f
        row[0] = 2.0 * f[0] - f[1]
        row[-1] = 2.0 * f[-1] - f[-2]
        c_next, op_next = c_now, op_now
    diagnostics = {"theta_used": theta, "switched_to_implicit": switched, "peclet": peclet,
                   "dx": dx, "dt": dt}
    return PdeSolution(grid, x, t, surface, diagnostics)


def default_grid(centre: float, vol_scale: float, T: float, drift_scale: float = 0.0,
                 n_x: int = 801, n_t: int = 400, width: float = 8.0) -> GridSpec:
    """Grid on ``centre +- (width vol_scale sqrt(T) + drift_scale T)`` with ``centre`` on a node."""
    if n_x % 2 == 0:
        n_x += 1
    half = width * vol_scale * math.sqrt(T) + abs(drift_scale) * T
    if not half > 0.0:
        raise ConfigError("cannot size a grid with zero volatility and drift")
    return GridSpec(centre - half, centre + half, n_x, n_t)


def model_grid(model: MarketModel, T: float, extra_drift: float = 0.0, **kw) -> GridSpec:
    """:func:`default_grid` sized from the model's volatility and rate (plus ``extra_drift``)."""
    drift = max(abs(model.rate.min_value()), abs(model.rate.max_value())) + extra_drift
    return default_grid(model.A0, model.vol.max_value(), T, drift, **kw)


def bachelier_spec(model: MarketModel, payoff: Payoff, T: float, drift_mode: str = "paper-eq7") -> CauchySpec:
    """Cauchy problem with ``sigma = vol``, ``a = 0``, ``h = -rate`` and
    ``mu = 0`` (``paper-eq7``) or ``mu = rate`` (``risk-neutral``)."""
    if drift_mode not in DRIFT_MODES:
        raise ConfigError(f"drift_mode must be one of {DRIFT_MODES}")
    mu = 0.0 if drift_mode == "paper-eq7" else model.rate
    return CauchySpec(mu=mu, sigma=model.vol, a=0.0, h=negate(model.rate), terminal=payoff, T=T)


def dividend_spec(model: MarketModel, payoff: Payoff, T: float) -> CauchySpec:
    """Cauchy problem with ``mu = -dividend``, ``sigma = vol``, ``a = 0``, ``h = -rate``."""
    if model.dividend is None:
        raise ConfigError("model has no dividend rate")
    return CauchySpec(mu=negate(model.dividend), sigma=model.vol, a=0.0, h=negate(model.rate),
                      terminal=payoff, T=T)


def _price(spec: CauchySpec, x0: float, grid: GridSpec, extra: dict[str, Any]) -> PriceResult:
    if not grid.x_min <= x0 <= grid.x_max:
        raise DomainError(f"A0={x0} outside the grid [{grid.x_min}, {grid.x_max}]")
    sol = solve_cauchy(spec, grid)
    value = sol.value_at(x0, 0.0)
    diag = {**extra, **sol.diagnostics, "delta": delta(sol, x0, 0.0), "grid": grid.to_dict(),
            "negative_price": value < 0.0}
    return PriceResult(value, "pde", diagnostics=diag)


def price_bachelier_pde(model: MarketModel, payoff: Payoff, T: float, grid: GridSpec | None = None,
                        drift_mode: str = "paper-eq7") -> PriceResult:
    """PDE price at ``(A0, 0)`` under the chosen drift convention."""
    spec = bachelier_spec(model, payoff, T, drift_mode)
    grid = grid or model_grid(model, T)
    return _price(spec, model.A0, grid, {"drift_mode": drift_mode})


def dividend_drift(model: MarketModel) -> float:
    """Largest absolute dividend rate, used to widen the grid."""
    div = model.dividend
    return 0.0 if div is None else max(abs(div.min_value()), abs(div.max_value()))


def price_dividend_pde(model: MarketModel, payoff: Payoff, T: float, grid: GridSpec | None = None) -> PriceResult:
    """PDE price at ``(A0, 0)`` of a claim on an asset paying the dividend rate."""
    spec = dividend_spec(model, payoff, T)
    if grid is None:
        grid = model_grid(model, T, dividend_drift(model))
    return _price(spec, model.A0, grid, {"drift_mode": "dividend"})


def delta(solution: PdeSolution, x: float, t: float = 0.0) -> float:
    """``df/dx`` at ``(x, t)`` by central differences; one-sided (with a warning) at the ends.

    A replicating portfolio holds minus this many units of the asset.
    """
    xs = solution.x
    if x < xs[0] or x > xs[-1]:
        raise DomainError(f"x={x} outside the grid")
    row = solution.row(t)
    dx = solution.grid.dx
    if x < xs[1] or x > xs[-2]:
        warnings.warn("delta requested at the grid boundary; using a one-sided difference",
                      RuntimeWarning, stacklevel=2)
    grad = np.gradient(row, dx)
    return float(np.interp(x, xs, grad))
