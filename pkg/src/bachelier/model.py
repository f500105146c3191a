"""Market-model data types: coefficient functions, the market model, payoffs.

Units follow Bachelier's additive conventions.  The simple interest rate
``rate`` and the drift ``rho`` are in currency per year (the riskless account
grows as ``beta_t = beta_0 + int_0^t r ds``), the volatility ``vol`` is in
currency per square-root year, and a dividend rate is in currency per year.
Asset levels and strikes may be negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import integrate

from .errors import ConfigError, DomainError

ArrayLike = float | np.ndarray


class CoefficientFn:
    """A deterministic coefficient ``c(x, t)``.

    Subclasses are immutable.  ``__call__`` evaluates without domain checks
    and broadcasts over array arguments; :meth:`evaluate` checks that ``t``
    lies in ``[0, horizon]`` first.
    """

    kind: str = ""
    horizon: float = math.inf

    def __call__(self, x: ArrayLike, t: ArrayLike) -> ArrayLike:
        raise NotImplementedError

    def evaluate(self, x: ArrayLike, t: ArrayLike) -> ArrayLike:
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0.0) or np.any(t_arr > self.horizon) or np.any(np.isnan(t_arr)):
            raise DomainError(f"t={t!r} outside the coefficient horizon [0, {self.horizon}]")
        return self(x, t)

    @property
    def depends_on_x(self) -> bool:
        return False

    @property
    def is_piecewise_constant_in_time(self) -> bool:
        return False

    def min_value(self) -> float:
        raise NotImplementedError

    def max_value(self) -> float:
        raise NotImplementedError

    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """Interpolation nodes ``(x_nodes, t_nodes)``; empty when there are none."""
        return np.empty(0), np.empty(0)

    def time_breakpoints(self) -> np.ndarray:
        return self.nodes()[1]

    def time_integral(self, t0: float, t1: float, x: float = 0.0) -> float:
        """``int_{t0}^{t1} c(x, s) ds``; exact for constant and piecewise kinds."""
        if t1 == t0:
            return 0.0
        pts = [p for p in self.time_breakpoints() if min(t0, t1) < p < max(t0, t1)]
        val, _ = integrate.quad(
            lambda s: float(self(x, s)), t0, t1, points=pts or None, epsabs=1e-12, limit=200
        )
        return val

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    @staticmethod
    def from_dict(d: Any) -> "CoefficientFn":
        """Build a coefficient from its JSON form; a bare number means constant."""
        if isinstance(d, CoefficientFn):
            return d
        if isinstance(d, (int, float)) and not isinstance(d, bool):
            return Constant(float(d))
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError(f"cannot parse coefficient from {d!r}")
        kind = d["kind"]
        horizon = d.get("horizon")
        horizon = math.inf if horizon is None else float(horizon)
        if kind == "constant":
            return Constant(float(d["values"]), horizon=horizon)
        if kind == "piecewise":
            return PiecewiseConstant(d["breakpoints"], d["values"])
        if kind == "tabulated":
            return Tabulated(d["x_grid"], d["t_grid"], d["values"], horizon=horizon)
        raise ConfigError(f"unknown coefficient kind {kind!r}")


def as_coefficient(c: Any) -> CoefficientFn:
    return CoefficientFn.from_dict(c)


class Constant(CoefficientFn):
    kind = "constant"

    def __init__(self, value: float, horizon: float = math.inf):
        if not math.isfinite(value):
            raise ConfigError(f"constant coefficient must be finite, got {value}")
        self.value = float(value)
        self.horizon = float(horizon)

    def __call__(self, x, t):
        if np.ndim(x) == 0 and np.ndim(t) == 0:
            return self.value
        return np.full(np.broadcast(np.asarray(x), np.asarray(t)).shape, self.value)

    @property
    def is_piecewise_constant_in_time(self) -> bool:
        return True

    def min_value(self) -> float:
        return self.value

    def max_value(self) -> float:
        return self.value

    def time_integral(self, t0: float, t1: float, x: float = 0.0) -> float:
        return self.value * (t1 - t0)

    def to_dict(self):
        d = {"kind": "constant", "values": self.value}
        if math.isfinite(self.horizon):
            d["horizon"] = self.horizon
        return d

    def __repr__(self):
        return f"Constant({self.value!r})"


class PiecewiseConstant(CoefficientFn):
    """Piecewise constant in time: ``values[i]`` on ``[breakpoints[i], breakpoints[i+1])``.

    The last interval is closed, so the horizon is ``breakpoints[-1]``.
    """

    kind = "piecewise"

    def __init__(self, breakpoints, values):
        b = np.asarray(breakpoints, dtype=float)
        v = np.asarray(values, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ConfigError("piecewise coefficient needs at least two breakpoints")
        if v.shape != (b.size - 1,):
            raise ConfigError("piecewise coefficient needs one value per interval")
        if np.any(np.diff(b) <= 0.0):
            raise ConfigError("piecewise breakpoints must be strictly increasing")
        if b[0] != 0.0:
            raise ConfigError("piecewise breakpoints must start at t = 0")
        if not np.all(np.isfinite(v)):
            raise ConfigError("piecewise values must be finite")
        self.breakpoints = b
        self.values = v
        self.horizon = float(b[-1])
        # cumulative integral at each breakpoint
        self._cum = np.concatenate([[0.0], np.cumsum(v * np.diff(b))])

    def _index(self, t):
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        return np.clip(idx, 0, self.values.size - 1)

    def __call__(self, x, t):
        out = self.values[self._index(t)]
        if np.ndim(x) == 0 and np.ndim(t) == 0:
            return float(out)
        return np.broadcast_to(out, np.broadcast(np.asarray(x), np.asarray(t)).shape).copy()

    @property
    def is_piecewise_constant_in_time(self) -> bool:
        return True

    def min_value(self) -> float:
        return float(self.values.min())

    def max_value(self) -> float:
        return float(self.values.max())

    def nodes(self):
        return np.empty(0), self.breakpoints.copy()

    def _primitive(self, t: float) -> float:
        t = min(max(t, 0.0), self.horizon)
        i = int(self._index(t))
        return float(self._cum[i] + self.values[i] * (t - self.breakpoints[i]))

    def time_integral(self, t0: float, t1: float, x: float = 0.0) -> float:
        return self._primitive(t1) - self._primitive(t0)

    def to_dict(self):
        return {"kind": "piecewise", "breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    def __repr__(self):
        return f"PiecewiseConstant({self.breakpoints.tolist()}, {self.values.tolist()})"


def _locate(grid: np.ndarray, q: np.ndarray):
    """Cell index and linear weight for ``q`` on ``grid``, clamped to the ends."""
    q = np.clip(q, grid[0], grid[-1])
    i = np.clip(np.searchsorted(grid, q, side="right") - 1, 0, grid.size - 2)
    w = (q - grid[i]) / (grid[i + 1] - grid[i])
    return i, w


class Tabulated(CoefficientFn):
    """Bilinear interpolation of ``values[i][j] = c(x_grid[i], t_grid[j])``.

    Outside the grid the nearest boundary value is used (flat extrapolation).
    An axis with a single node makes the coefficient constant along it.
    """

    kind = "tabulated"

    def __init__(self, x_grid, t_grid, values, horizon: float = math.inf):
        xg = np.atleast_1d(np.asarray(x_grid, dtype=float))
        tg = np.atleast_1d(np.asarray(t_grid, dtype=float))
        table = np.asarray(values, dtype=float).reshape(xg.size, tg.size)
        for name, g in (("x_grid", xg), ("t_grid", tg)):
            if g.ndim != 1 or g.size < 1 or np.any(np.diff(g) <= 0.0):
                raise ConfigError(f"tabulated {name} must be non-empty and strictly increasing")
        if not np.all(np.isfinite(table)):
            raise ConfigError("tabulated values must be finite")
        self.x_grid, self.t_grid, self.table = xg, tg, table
        self.horizon = float(horizon)
        # single-node axes are padded so the bilinear formula applies unchanged
        self._xg = xg if xg.size > 1 else np.array([xg[0], xg[0] + 1.0])
        self._tg = tg if tg.size > 1 else np.array([tg[0], tg[0] + 1.0])
        tab = table if xg.size > 1 else np.vstack([table, table])
        self._tab = tab if tg.size > 1 else np.hstack([tab, tab])

    def __call__(self, x, t):
        scalar = np.ndim(x) == 0 and np.ndim(t) == 0
        x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
        i, wx = _locate(self._xg, x)
        j, wt = _locate(self._tg, t)
        tab = self._tab
        out = (
            (1.0 - wx) * (1.0 - wt) * tab[i, j]
            + wx * (1.0 - wt) * tab[i + 1, j]
            + (1.0 - wx) * wt * tab[i, j + 1]
            + wx * wt * tab[i + 1, j + 1]
        )
        return float(out) if scalar else out

    @property
    def depends_on_x(self) -> bool:
        return self.x_grid.size > 1 and bool(np.any(np.ptp(self.table, axis=0) != 0.0))

    @property
    def is_piecewise_constant_in_time(self) -> bool:
        return self.t_grid.size == 1 or bool(np.all(np.ptp(self.table, axis=1) == 0.0))

    def min_value(self) -> float:
        return float(self.table.min())

    def max_value(self) -> float:
        return float(self.table.max())

    def nodes(self):
        return self.x_grid.copy(), self.t_grid.copy()

    def to_dict(self):
        d = {
            "kind": "tabulated",
            "x_grid": self.x_grid.tolist(),
            "t_grid": self.t_grid.tolist(),
            "values": self.table.tolist(),
        }
        if math.isfinite(self.horizon):
            d["horizon"] = self.horizon
        return d

    def __repr__(self):
        return f"Tabulated(x_grid={self.x_grid.size} nodes, t_grid={self.t_grid.size} nodes)"


def negate(c: CoefficientFn) -> CoefficientFn:
    """The coefficient ``-c`` of the same kind."""
    if isinstance(c, Constant):
        return Constant(-c.value, horizon=c.horizon)
    if isinstance(c, PiecewiseConstant):
        return PiecewiseConstant(c.breakpoints, -c.values)
    if isinstance(c, Tabulated):
        return Tabulated(c.x_grid, c.t_grid, -c.table, horizon=c.horizon)
    raise ConfigError(f"cannot negate {c!r}")


def eval_coefficient(c: CoefficientFn, x: ArrayLike, t: ArrayLike) -> ArrayLike:
    """Evaluate ``c`` at ``(x, t)``, raising :class:`DomainError` outside its horizon."""
    return c.evaluate(x, t)


def sample_grid(coeffs, n: int, centre: float = 0.0, horizon: float = math.inf):
    """Sampling grid on which bilinear/piecewise coefficients attain their extremes.

    The grid is the union of ``n`` uniform points and every interpolation node,
    so a comparison between two such coefficients on this grid is exact over
    the whole plane (all kinds are flat beyond their nodes).
    """
    xs, ts = [np.array([centre])], [np.array([0.0])]
    for c in coeffs:
        xn, tn = c.nodes()
        xs.append(xn)
        ts.append(tn)
    xn = np.concatenate(xs)
    tn = np.concatenate(ts)
    x_lo, x_hi = xn.min() - 1.0, xn.max() + 1.0
    t_hi = horizon if math.isfinite(horizon) else max(1.0, tn.max())
    tn = tn[(tn >= 0.0) & (tn <= t_hi)]
    x = np.union1d(np.linspace(x_lo, x_hi, n), xn)
    t = np.union1d(np.linspace(0.0, t_hi, n), tn)
    return x, t


@dataclass(frozen=True, kw_only=True)
class MarketModel:
    """Bachelier market: ``dA = rho dt + vol dB``, ``d beta = rate dt``.

    Construction rejects models where ``rate > rho`` anywhere on the sampling
    grid (see :func:`sample_grid`) and, unless ``allow_degenerate`` is set,
    volatilities that are not strictly positive.
    """

    rho: CoefficientFn
    vol: CoefficientFn
    rate: CoefficientFn
    dividend: CoefficientFn | None = None
    A0: float
    beta0: float = 1.0
    allow_degenerate: bool = False
    check_points: int = 256

    def __post_init__(self):
        for name in ("rho", "vol", "rate"):
            object.__setattr__(self, name, as_coefficient(getattr(self, name)))
        if self.dividend is not None:
            object.__setattr__(self, "dividend", as_coefficient(self.dividend))
        if not self.A0 > 0.0:
            raise ConfigError(f"A0 must be > 0, got {self.A0}")
        if not self.beta0 > 0.0:
            raise ConfigError(f"beta0 must be > 0, got {self.beta0}")
        vmin = self.vol.min_value()
        if vmin < 0.0 or (vmin == 0.0 and not self.allow_degenerate):
            raise ConfigError(f"volatility must be strictly positive, min is {vmin}")
        x, t = sample_grid((self.rho, self.rate), self.check_points, self.A0, self.horizon)
        X, T = np.meshgrid(x, t, indexing="ij")
        excess = np.asarray(self.rate(X, T)) - np.asarray(self.rho(X, T))
        if np.any(excess > 0.0):
            k = np.unravel_index(np.argmax(excess), excess.shape)
            raise ConfigError(f"rate exceeds rho at x={X[k]:.6g}, t={T[k]:.6g}")

    @property
    def horizon(self) -> float:
        cs = [self.rho, self.vol, self.rate] + ([self.dividend] if self.dividend else [])
        return min(c.horizon for c in cs)

    @property
    def has_constant_coefficients(self) -> bool:
        cs = [self.rho, self.vol, self.rate] + ([self.dividend] if self.dividend else [])
        return all(c.kind == "constant" for c in cs)

    def market_price_of_risk(self, x: ArrayLike, t: ArrayLike) -> ArrayLike:
        """``(rho - rate) / vol``; nonnegative by construction, not required positive."""
        return (np.asarray(self.rho(x, t)) - np.asarray(self.rate(x, t))) / np.asarray(self.vol(x, t))

    def to_dict(self) -> dict[str, Any]:
        return {
            "rho": self.rho.to_dict(),
            "vol": self.vol.to_dict(),
            "rate": self.rate.to_dict(),
            "dividend": None if self.dividend is None else self.dividend.to_dict(),
            "A0": self.A0,
            "beta0": self.beta0,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any], **kwargs) -> "MarketModel":
        try:
            return cls(
                rho=as_coefficient(d["rho"]),
                vol=as_coefficient(d["vol"]),
                rate=as_coefficient(d["rate"]),
                dividend=None if d.get("dividend") is None else as_coefficient(d["dividend"]),
                A0=float(d["A0"]),
                beta0=float(d.get("beta0", 1.0)),
                **kwargs,
            )
        except KeyError as exc:
            raise ConfigError(f"market model is missing field {exc}") from None


def constant_model(rho: float, vol: float, rate: float, A0: float, beta0: float = 1.0,
                   dividend: float | None = None, **kwargs) -> MarketModel:
    """Shorthand for a model with constant coefficients."""
    return MarketModel(
        rho=Constant(rho), vol=Constant(vol), rate=Constant(rate),
        dividend=None if dividend is None else Constant(dividend),
        A0=A0, beta0=beta0, **kwargs,
    )


_PAYOFF_KINDS = ("call", "put", "forward", "tabulated")


@dataclass(frozen=True)
class Payoff:
    """Terminal payoff ``g(A_T)``; instances are vectorised callables."""

    kind: str
    strike: float = 0.0
    x_grid: tuple[float, ...] = field(default=())
    g_grid: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in _PAYOFF_KINDS:
            raise ConfigError(f"unknown payoff kind {self.kind!r}")
        if not math.isfinite(self.strike):
            raise ConfigError("strike must be finite")
        if self.kind == "tabulated":
            xg = tuple(float(v) for v in self.x_grid)
            gg = tuple(float(v) for v in self.g_grid)
            if len(xg) < 1 or len(xg) != len(gg):
                raise ConfigError("tabulated payoff needs matching, non-empty x and g grids")
            if np.any(np.diff(xg) <= 0.0):
                raise ConfigError("tabulated payoff x grid must be strictly increasing")
            object.__setattr__(self, "x_grid", xg)
            object.__setattr__(self, "g_grid", gg)

    @classmethod
    def call(cls, strike: float) -> "Payoff":
        return cls("call", float(strike))

    @classmethod
    def put(cls, strike: float) -> "Payoff":
        return cls("put", float(strike))

    @classmethod
    def forward(cls, strike: float = 0.0) -> "Payoff":
        return cls("forward", float(strike))

    @classmethod
    def tabulated(cls, x_grid, g_grid) -> "Payoff":
        return cls("tabulated", 0.0, tuple(x_grid), tuple(g_grid))

    def __call__(self, x: ArrayLike) -> ArrayLike:
        if self.kind == "call":
            return np.maximum(np.subtract(x, self.strike), 0.0)
        if self.kind == "put":
            return np.maximum(np.subtract(self.strike, x), 0.0)
        if self.kind == "forward":
            return np.subtract(x, self.strike)
        return np.interp(x, self.x_grid, self.g_grid)

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "tabulated":
            return {"kind": "tabulated", "x_grid": list(self.x_grid), "g_grid": list(self.g_grid)}
        return {"kind": self.kind, "strike": self.strike}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Payoff":
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError(f"cannot parse payoff from {d!r}")
        if d["kind"] == "tabulated":
            return cls.tabulated(d["x_grid"], d["g_grid"])
        return cls(d["kind"], float(d.get("strike", 0.0)))


@dataclass(frozen=True)
class EsgInputs:
    stock_price: float
    relative_score: float
    affinity: float

    def __post_init__(self):
        if not self.stock_price > 0.0:
            raise ConfigError(f"stock price must be > 0, got {self.stock_price}")


def esg_adjusted_price(inputs: EsgInputs) -> float:
    """ESG-adjusted price ``S * (1 + affinity * score)``; may be negative."""
    return inputs.stock_price * (1.0 + inputs.affinity * inputs.relative_score)


def zero() -> Constant:
    return Constant(0.0)


StateFn = Callable[[ArrayLike, ArrayLike], ArrayLike]
