"""Term structures in the simple-interest setting.

Zero-coupon prices are linear in the expected accrued rate,
``B(t, T) = 1 - E_t[int_t^T r ds]``, so the no-interest loan rate
``l(t, T) = -dB(t, T)/dT`` integrates back to bonds without exponentials.
The classical forward rate ``f(t, T) = -d ln B(t, T)/dT`` is also exposed; it
needs ``B > 0`` and is a different object.

Surfaces live on uniform grids.  Derivatives along maturity use central
differences inside the grid and second-order one-sided stencils at its ends;
integrals along maturity use the trapezoidal rule.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .analytic import HullWhiteParams, hw_b_star, hw_c_a
from .errors import ConfigError, DomainError
from .rng import NormalStream
from .simulate import SimConfig

_TIME_TOL = 1e-12


def _increasing(g, name) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim != 1 or g.size < 1 or np.any(np.diff(g) <= 0.0):
        raise ConfigError(f"{name} must be a non-empty increasing grid")
    if g[0] < 0.0:
        raise ConfigError(f"{name} must be nonnegative")
    return g


def _row_nodes(t: float, T_grid: np.ndarray, row: np.ndarray, diagonal: float | None):
    """Maturities ``>= t`` of a row, with the diagonal point prepended if it is off-grid."""
    mask = T_grid >= t - _TIME_TOL
    Ts, vals = T_grid[mask], row[mask]
    if diagonal is not None and (Ts.size == 0 or abs(Ts[0] - t) > _TIME_TOL):
        Ts = np.concatenate([[t], Ts])
        vals = np.concatenate([[diagonal], vals])
    return Ts, vals


def _write_surface(kind: str, t_grid, T_grid, values, fh) -> str | None:
    out = io.StringIO() if fh is None else fh
    out.write(f"# kind: {kind}\n")
    out.write("t,T,value\n")
    for i, t in enumerate(t_grid):
        ts = format(t, ".9g")
        for j, T in enumerate(T_grid):
            if T >= t - _TIME_TOL:
                out.write(f"{ts},{T:.9g},{values[i, j]:.9g}\n")
    return out.getvalue() if fh is None else None


class _Surface:
    kind: str
    diagonal: float | None = None

    def _row_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[i] - t) > _TIME_TOL:
            raise DomainError(f"t={t} is not on the surface time grid")
        return i

    def row(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Maturities ``T >= t`` and the values along them."""
        i = self._row_index(t)
        return _row_nodes(self.t_grid[i], self.T_grid, self.values[i], self.diagonal)

    def value(self, t: float, T: float) -> float:
        """Linear interpolation along maturity; ``T < t`` is outside the surface."""
        if T < t - _TIME_TOL:
            raise DomainError(f"surface undefined for t={t} > T={T}")
        Ts, vals = self.row(t)
        if T > Ts[-1] + _TIME_TOL:
            raise DomainError(f"T={T} beyond the maturity grid")
        return float(np.interp(T, Ts, vals))

    def maturity_derivative(self, t: float, T: float) -> float:
        """``d value / dT`` at ``(t, T)``; central inside, second-order one-sided at the ends."""
        Ts, vals = self.row(t)
        if Ts.size < 3:
            raise DomainError("need at least three maturities to differentiate")
        if T < Ts[0] - _TIME_TOL or T > Ts[-1] + _TIME_TOL:
            raise DomainError(f"T={T} outside the row [{Ts[0]}, {Ts[-1]}]")
        grad = np.gradient(vals, Ts, edge_order=2)
        return float(np.interp(T, Ts, grad))

    def to_csv(self, fh=None) -> str | None:
        return _write_surface(self.kind, self.t_grid, self.T_grid, self.values, fh)


class BondSurface(_Surface):
    """Zero-coupon prices ``B(t, T)`` for ``t <= T``; entries with ``T < t`` are NaN.

    Each row also carries the exact diagonal point ``B(t, t) = 1`` even when
    ``t`` is not on the maturity grid.
    """

    kind = "bond"
    diagonal = 1.0

    def __init__(self, t_grid, T_grid, values):
        self.t_grid = _increasing(t_grid, "t_grid")
        self.T_grid = _increasing(T_grid, "T_grid")
        v = np.array(values, dtype=float).reshape(self.t_grid.size, self.T_grid.size)
        below = self.T_grid[None, :] < self.t_grid[:, None] - _TIME_TOL
        v[below] = np.nan
        diag = np.abs(self.T_grid[None, :] - self.t_grid[:, None]) <= _TIME_TOL
        v[diag] = 1.0
        self.values = v

    @classmethod
    def from_function(cls, t_grid, T_grid, fn: Callable[[float, float], float]) -> "BondSurface":
        t_grid, T_grid = np.asarray(t_grid, float), np.asarray(T_grid, float)
        vals = np.full((t_grid.size, T_grid.size), np.nan)
        for i, t in enumerate(t_grid):
            for j, T in enumerate(T_grid):
                if T >= t - _TIME_TOL:
                    vals[i, j] = fn(t, T)
        return cls(t_grid, T_grid, vals)


class RateSurface(_Surface):
    """Forward rates ``f(t, T)`` (``kind="forward"``) or loan rates ``l(t, T)`` (``kind="loan"``).

    The time grid must be contained in the maturity grid so that the
    diagonal ``l(t, t)`` is a node.
    """

    def __init__(self, t_grid, T_grid, values, kind: str):
        if kind not in ("forward", "loan"):
            raise ConfigError("rate surface kind must be 'forward' or 'loan'")
        self.kind = kind
        self.t_grid = _increasing(t_grid, "t_grid")
        self.T_grid = _increasing(T_grid, "T_grid")
        for t in self.t_grid:
            if np.min(np.abs(self.T_grid - t)) > _TIME_TOL:
                raise ConfigError("every t must also be a maturity node")
        v = np.array(values, dtype=float).reshape(self.t_grid.size, self.T_grid.size)
        v[self.T_grid[None, :] < self.t_grid[:, None] - _TIME_TOL] = np.nan
        self.values = v

    def diagonal_values(self) -> np.ndarray:
        """``value(t, t)`` for every ``t`` on the time grid."""
        return np.array([self.value(t, t) for t in self.t_grid])

    @classmethod
    def from_function(cls, t_grid, T_grid, fn: Callable[[float, float], float], kind: str) -> "RateSurface":
        t_grid, T_grid = np.asarray(t_grid, float), np.asarray(T_grid, float)
        vals = np.full((t_grid.size, T_grid.size), np.nan)
        for i, t in enumerate(t_grid):
            for j, T in enumerate(T_grid):
                if T >= t - _TIME_TOL:
                    vals[i, j] = fn(t, T)
        return cls(t_grid, T_grid, vals, kind)


def read_surface_csv(text: str) -> BondSurface | RateSurface:
    """Parse the ``t,T,value`` format written by ``to_csv`` (kind from the ``# kind:`` line)."""
    kind = None
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            if key.strip() == "kind":
                kind = val.strip()
            continue
        if line.replace(" ", "") == "t,T,value":
            continue
        try:
            rows.append(tuple(float(x) for x in line.split(",")))
        except ValueError:
            raise ConfigError(f"malformed surface row: {line!r}") from None
    if kind not in ("bond", "forward", "loan"):
        raise ConfigError("surface CSV needs a '# kind: bond|forward|loan' header")
    if not rows or any(len(r) != 3 for r in rows):
        raise ConfigError("surface CSV needs rows of three values t,T,value")
    data = np.array(rows)
    t_grid, T_grid = np.unique(data[:, 0]), np.unique(data[:, 1])
    vals = np.full((t_grid.size, T_grid.size), np.nan)
    vals[np.searchsorted(t_grid, data[:, 0]), np.searchsorted(T_grid, data[:, 1])] = data[:, 2]
    if kind == "bond":
        return BondSurface(t_grid, T_grid, vals)
    return RateSurface(t_grid, T_grid, vals, kind)


# -- bootstrap ------------------------------------------------------------------

def forward_rate_from_bonds(surface: BondSurface, t: float, T: float) -> float:
    """``-d ln B(t, T) / dT`` by finite differences on the maturity grid.

    Raises
    ------
    DomainError
        If a bond price used by the stencil is not positive.
    """
    Ts, vals = surface.row(t)
    near = np.abs(Ts - T) <= 2.0 * np.max(np.diff(Ts), initial=0.0) + _TIME_TOL
    if np.any(vals[near] <= 0.0):
        raise DomainError(f"bond price <= 0 near T={T}; the log forward rate is undefined")
    if np.any(vals <= 0.0):
        keep = vals > 0.0
        Ts, vals = Ts[keep], vals[keep]
    if Ts.size < 3:
        raise DomainError("need at least three positive bond prices to differentiate")
    grad = np.gradient(np.log(vals), Ts, edge_order=2)
    return float(-np.interp(T, Ts, grad))


def loan_rate_from_bonds(surface: BondSurface, t: float, T: float) -> float:
    """No-interest loan rate ``-dB(t, T) / dT``."""
    return -surface.maturity_derivative(t, T)


def bonds_from_loan_rates(rates: RateSurface) -> BondSurface:
    """``B(t, T) = 1 - int_t^T l(t, u) du`` by cumulative trapezoid along maturity."""
    if rates.kind != "loan":
        raise ConfigError("bonds are built from loan-rate surfaces only")
    vals = np.full(rates.values.shape, np.nan)
    for i, t in enumerate(rates.t_grid):
        mask = rates.T_grid >= t - _TIME_TOL
        Ts, ell = rates.T_grid[mask], rates.values[i, mask]
        vals[i, mask] = 1.0 - cumulative_trapezoid(ell, Ts, initial=0.0)
    return BondSurface(rates.t_grid, rates.T_grid, vals)


def loan_rates_from_bond_surface(surface: BondSurface) -> RateSurface:
    """Loan-rate surface on the bond surface's nodes."""
    vals = np.full(surface.values.shape, np.nan)
    for i, t in enumerate(surface.t_grid):
        mask = surface.T_grid >= t - _TIME_TOL
        for j in np.flatnonzero(mask):
            vals[i, j] = loan_rate_from_bonds(surface, t, surface.T_grid[j])
    return RateSurface(surface.t_grid, surface.T_grid, vals, "loan")


def forward_libor(rates: RateSurface, t: float, tau: float, delta: float) -> float:
    """Average ``(1/delta) int_tau^{tau+delta} l(t, t + u) du`` by the trapezoidal rule."""
    if not delta > 0.0:
        raise DomainError("tenor delta must be > 0")
    if tau < 0.0:
        raise DomainError("tau must be >= 0")
    Ts, vals = rates.row(t)
    lo, hi = t + tau, t + tau + delta
    if hi > Ts[-1] + _TIME_TOL:
        raise DomainError(f"window end {hi} beyond the maturity grid")
    inner = Ts[(Ts > lo + _TIME_TOL) & (Ts < hi - _TIME_TOL)]
    u = np.concatenate([[lo], inner, [hi]])
    return float(trapezoid(np.interp(u, Ts, vals), u) / delta)


# -- Hull-White type surfaces -------------------------------------------------------

def hw_curve(p: HullWhiteParams, t_grid, T_grid, r_t=None) -> BondSurface:
    """Bond surface ``1 - r_t c(t, T) - a(t, T)``.

    ``r_t`` is a scalar or one value per time node; it may be omitted only when
    the time grid is ``[0]``, in which case ``p.r0`` is used.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    T_grid = np.asarray(T_grid, dtype=float)
    if r_t is None:
        if np.any(t_grid > 0.0):
            raise ConfigError("a short-rate value r_t is required for t > 0")
        rates = np.full(t_grid.size, p.r0)
    else:
        rates = np.broadcast_to(np.asarray(r_t, dtype=float), t_grid.shape)
    vals = np.full((t_grid.size, T_grid.size), np.nan)
    for i, t in enumerate(t_grid):
        for j, T in enumerate(T_grid):
            if T >= t - _TIME_TOL:
                c, a = hw_c_a(p, t, max(T, t))
                vals[i, j] = 1.0 - rates[i] * c - a
    return BondSurface(t_grid, T_grid, vals)


def hw_noarb_residual(p: HullWhiteParams, r_t: float, t: float, T: float) -> float:
    """Evaluate ``a(t) - b(t) r_t + r_t dc/dt + da/dt + r_t`` with
    ``dc/dt = -exp(-b*(t))`` and ``da/dt = -exp(b*(t)) a(t) int_t^T exp(-b*(u)) du``.

    These derivative expressions treat ``c(t, T)`` as ``int_t^T exp(-b*(u)) du``;
    the value is returned for inspection only.
    """
    if not t < T:
        raise DomainError("need t < T")
    bs = hw_b_star(p, t)
    c_shifted, _ = hw_c_a(p, t, T)  # int_t^T exp(-(b*(u) - b*(t))) du
    tail = math.exp(-bs) * c_shifted  # int_t^T exp(-b*(u)) du
    a_t, b_t = float(p.a(0.0, t)), float(p.b(0.0, t))
    dc_dt = -math.exp(-bs)
    da_dt = -math.exp(bs) * a_t * tail
    return a_t - b_t * r_t + r_t * dc_dt + da_dt + r_t


# -- HJM forward-rate simulation ---------------------------------------------------

@dataclass
class HjmPaths:
    """Simulated forward curves ``f[path, k, j] = f(t_k, T_j)`` (NaN for ``T_j < t_k``)."""

    times: np.ndarray
    maturities: np.ndarray
    f: np.ndarray
    dW: np.ndarray

    def bonds(self) -> np.ndarray:
        """Exponential-representation bonds ``exp(-int_t^T f(t, u) du)`` (trapezoid)."""
        out = np.full(self.f.shape, np.nan)
        for k, t in enumerate(self.times):
            j0 = int(np.searchsorted(self.maturities, t - _TIME_TOL))
            seg = self.f[:, k, j0:]
            out[:, k, j0:] = np.exp(-cumulative_trapezoid(seg, self.maturities[j0:], axis=1, initial=0.0))
        return out

    def short_rate(self) -> np.ndarray:
        return np.stack([self.f[:, k, k] for k in range(self.times.size)], axis=1)


def _sigma_matrix(sigma, times, maturities, k) -> np.ndarray:
    if callable(sigma):
        return np.asarray([sigma(times[k], T) for T in maturities], dtype=float)
    return np.full(maturities.size, float(sigma))


def hjm_simulate_forward(sigma_f, f0, cfg: SimConfig) -> HjmPaths:
    """Euler paths of ``df = sigma sigma* dt + sigma dW`` for the whole curve.

    ``sigma_f`` is a number or a callable ``(t, T)``; ``f0`` is a callable of
    ``T`` or an array on the maturity grid, which equals the simulation time
    grid.  One Brownian increment per step drives all maturities.
    """
    times = cfg.times
    mats = times.copy()
    f = np.asarray([f0(T) for T in mats] if callable(f0) else f0, dtype=float)
    if f.shape != mats.shape:
        raise ConfigError("initial curve must have one value per maturity node")
    if not callable(sigma_f) and float(sigma_f) < 0.0:
        raise ConfigError("forward-rate volatility must be >= 0")
    n, m = cfg.n_paths, cfg.n_steps
    out = np.full((n, m + 1, mats.size), np.nan)
    cur = np.tile(f, (n, 1))
    out[:, 0, :] = cur
    normals = NormalStream(cfg.seed, n)
    dW = np.empty((n, m))
    dt, sq = cfg.dt, math.sqrt(cfg.dt)
    for k in range(m):
        sig = _sigma_matrix(sigma_f, times, mats, k)
        star = np.zeros(mats.size)
        star[k:] = cumulative_trapezoid(sig[k:], mats[k:], initial=0.0)
        dw = normals.block(k * cfg.brownian_substeps, cfg.brownian_substeps) * sq
        dW[:, k] = dw
        cur = cur + (sig * star) * dt + sig[None, :] * dw[:, None]
        out[:, k + 1, k + 1:] = cur[:, k + 1:]
    return HjmPaths(times, mats, out, dW)


# -- BHJM loan-rate simulation -------------------------------------------------------

@dataclass(frozen=True)
class BhjmSpec:
    """Loan-rate model ``dl(t, T) = sigma(t, T) dW`` under the risk-neutral measure.

    With ``proportional=True`` (default) the volatility is ``sigma_ell * l(t, T)``;
    otherwise ``sigma_ell`` is a number or a callable ``(t, T)`` used as is.
    ``initial_curve`` holds ``l(0, T)`` on ``T_grid``.
    """

    sigma_ell: Any
    initial_curve: Any
    T_grid: Any
    theta_ell: float | None = None
    proportional: bool = True

    def __post_init__(self):
        T_grid = _increasing(self.T_grid, "T_grid")
        curve = np.asarray(self.initial_curve, dtype=float)
        if curve.shape != T_grid.shape or not np.all(np.isfinite(curve)):
            raise ConfigError("initial curve must be finite with one value per maturity")
        if not callable(self.sigma_ell) and not float(self.sigma_ell) >= 0.0:
            raise ConfigError("sigma_ell must be >= 0")
        object.__setattr__(self, "T_grid", T_grid)
        object.__setattr__(self, "initial_curve", curve)


@dataclass
class BhjmPaths:
    """Per-path loan rates ``ell``, bonds and short rate on the simulation grid.

    ``ell[path, k, j] = l(t_k, T_j)`` and ``bonds[path, k, j] = B(t_k, T_j)``
    (NaN for ``T_j < t_k``); ``short_rate[path, k] = l(t_k, t_k)``.
    """

    times: np.ndarray
    maturities: np.ndarray
    ell: np.ndarray
    bonds: np.ndarray
    short_rate: np.ndarray
    dW: np.ndarray

    def rate_surface(self, path: int) -> RateSurface:
        return RateSurface(self.times, self.maturities, self.ell[path], "loan")

    def bond_surface(self, path: int) -> BondSurface:
        return BondSurface(self.times, self.maturities, self.bonds[path])

    def accrued_rate(self) -> np.ndarray:
        """Per-path trapezoidal ``int_0^t r ds`` at every time node."""
        return cumulative_trapezoid(self.short_rate, self.times, axis=1, initial=0.0)


def bhjm_simulate(spec: BhjmSpec, cfg: SimConfig, measure: str = "risk-neutral") -> BhjmPaths:
    """Euler paths of the loan-rate surface with ``r_t = l(t, t)`` and
    ``B(t, T) = 1 - int_t^T l(t, u) du`` built at every step.

    Every simulation time must be a node of ``spec.T_grid``.
    """
    if measure not in ("physical", "risk-neutral"):
        raise ConfigError("measure must be 'physical' or 'risk-neutral'")
    if measure == "physical" and spec.theta_ell is None:
        raise ConfigError("physical-measure simulation needs theta_ell")
    theta = spec.theta_ell if measure == "physical" else 0.0
    mats = spec.T_grid
    times = cfg.times
    idx = np.array([int(np.argmin(np.abs(mats - t))) for t in times])
    if np.any(np.abs(mats[idx] - times) > 1e-9):
        raise ConfigError("simulation times must lie on the maturity grid")
    n, m = cfg.n_paths, cfg.n_steps
    ell = np.full((n, m + 1, mats.size), np.nan)
    cur = np.tile(spec.initial_curve, (n, 1))
    ell[:, 0, :] = cur
    normals = NormalStream(cfg.seed, n)
    dW = np.empty((n, m))
    dt, sq = cfg.dt, math.sqrt(cfg.dt)
    for k in range(m):
        if spec.proportional:
            sig = float(spec.sigma_ell) * cur if not callable(spec.sigma_ell) else \
                np.asarray([spec.sigma_ell(times[k], T) for T in mats])[None, :] * cur
        elif callable(spec.sigma_ell):
            sig = np.asarray([spec.sigma_ell(times[k], T) for T in mats], dtype=float)[None, :]
        else:
            sig = np.full((1, mats.size), float(spec.sigma_ell))
        dw = normals.block(k * cfg.brownian_substeps, cfg.brownian_substeps) * sq
        dW[:, k] = dw
        cur = cur + sig * (dw[:, None] + theta * dt)
        j0 = idx[k + 1]
        ell[:, k + 1, j0:] = cur[:, j0:]
    bonds = np.full(ell.shape, np.nan)
    for k in range(m + 1):
        j0 = idx[k]
        bonds[:, k, j0:] = 1.0 - cumulative_trapezoid(ell[:, k, j0:], mats[j0:], axis=1, initial=0.0)
    short_rate = ell[:, np.arange(m + 1), idx]
    return BhjmPaths(times, mats, ell, bonds, short_rate, dW)


def maturity_shift_regression(paths: BhjmPaths, tau: float, sigma_ell: float) -> tuple[float, float]:
    """Slope (and standard error) of ``dr(t, tau) - dr/dtau dt`` on ``sigma_ell l dW``.

    ``r(t, tau) = l(t, t + tau)`` is read off the simulated surface in
    time-to-maturity coordinates and ``dr/dtau`` is a finite difference along
    maturity (central when possible).  A slope of 1 means the surface moves as
    ``dr = dr/dtau dt + sigma dW`` for the proportional volatility.
    """
    times, mats = paths.times, paths.maturities
    h = mats[1] - mats[0]
    shift = int(round(tau / h))
    xs, ys = [], []
    for k in range(times.size - 1):
        d = int(np.argmin(np.abs(mats - times[k])))
        j = d + shift
        if j + 2 >= mats.size:
            break
        row = paths.ell[:, k]
        if j > d:
            slope_tau = (row[:, j + 1] - row[:, j - 1]) / (2.0 * h)
        else:
            slope_tau = (-3.0 * row[:, j] + 4.0 * row[:, j + 1] - row[:, j + 2]) / (2.0 * h)
        dt = times[k + 1] - times[k]
        ys.append(paths.ell[:, k + 1, j + 1] - row[:, j] - slope_tau * dt)
        xs.append(sigma_ell * row[:, j] * paths.dW[:, k])
    if not xs:
        raise DomainError(f"tau={tau} leaves no room on the maturity grid")
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    sxx = float(np.dot(x, x))
    slope = float(np.dot(x, y)) / sxx
    resid = y - slope * x
    se = math.sqrt(float(np.dot(resid, resid)) / max(x.size - 1, 1) / sxx)
    return slope, se
