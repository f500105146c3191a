"""Closed-form prices: Bachelier calls and puts, forwards, futures, perpetual
claims, and the mean-reverting (Hull-White type) short-rate model in the
simple-interest setting.

In the short-rate model ``dr = (a(t) - b(t) r) dt + v(t) dW`` and bonds are
``B(t, T) = 1 - E_t[int_t^T r ds] = 1 - r_t c(t, T) - a(t, T)`` with

    c(t, T) = int_t^T exp(-(b*(u) - b*(t))) du,
    a(t, T) = int_t^T a(u) c(u, T) du,
    b*(t)   = int_0^t b(u) du.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import integrate
from scipy.special import ndtr, roots_hermitenorm

from .errors import ConfigError, ConsistencyError, DomainError, NumericalError, SingularityError
from .model import CoefficientFn, Constant, as_coefficient

QUAD_EPSABS = 1e-10
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_pdf(x):
    with np.errstate(over="ignore"):  # huge |x| gives a density of exactly 0
        return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def norm_cdf(x):
    return ndtr(x)


@dataclass
class PriceResult:
    """A price with its method tag; ``stderr`` is set exactly for Monte Carlo."""

    value: float
    method: str
    stderr: float | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in ("closed", "pde", "mc", "quadrature"):
            raise ConfigError(f"unknown price method {self.method!r}")
        if (self.stderr is not None) != (self.method == "mc"):
            raise ConfigError("stderr must be given for Monte Carlo results only")

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "stderr": self.stderr, "method": self.method,
                "diagnostics": dict(self.diagnostics)}


# -- Bachelier options ---------------------------------------------------------

def _check_vol_tau(v, tau, *levels):
    if not all(math.isfinite(x) for x in levels):
        raise DomainError(f"spot, strike and rate must be finite, got {levels}")
    if not v > 0.0:
        raise DomainError(f"volatility must be > 0, got {v}")
    if not tau >= 0.0:
        raise DomainError(f"time to maturity must be >= 0, got {tau}")


def bachelier_call(A: float, K: float, r: float, v: float, tau: float) -> float:
    """Call price ``l0 Phi(l0/l1) + l1 phi(l0/l1) - r tau``.

    Here ``l0 = A - K + r tau`` and ``l1 = v sqrt(tau)``.  The value is not
    floored and can be negative because of the ``-r tau`` term.
    """
    _check_vol_tau(v, tau, A, K, r)
    if tau == 0.0:
        return max(A - K, 0.0)
    l0 = A - K + r * tau
    l1 = v * math.sqrt(tau)
    d = l0 / l1
    return float(l0 * norm_cdf(d) + l1 * norm_pdf(d) - r * tau)


def bachelier_put(A: float, K: float, r: float, v: float, tau: float) -> float:
    """Put price from parity: ``call - (A - K + r tau)``."""
    _check_vol_tau(v, tau, A, K, r)
    if tau == 0.0:
        return max(K - A, 0.0)
    return bachelier_call(A, K, r, v, tau) - (A - K + r * tau)


def bachelier_price(kind: str, A: float, K: float, r: float, v: float, tau: float) -> PriceResult:
    """Closed-form price for ``call``, ``put`` or ``forward`` with diagnostics."""
    if kind == "call":
        value = bachelier_call(A, K, r, v, tau)
    elif kind == "put":
        value = bachelier_put(A, K, r, v, tau)
    elif kind == "forward":
        _check_vol_tau(v, tau, A, K, r)
        value = A - K
    else:
        raise ConfigError(f"no closed form for payoff kind {kind!r}")
    return PriceResult(value, "closed", diagnostics={"negative_price": value < 0.0})


def perpetual_gamma(v: float, r: float) -> float:
    """Exponent ``1 - v^2 / r`` making ``x^2 + gamma (beta0 + r t)`` a perpetual price."""
    if r == 0.0:
        raise SingularityError("perpetual exponent is singular at r = 0")
    return 1.0 - v * v / r


def perpetual_residual(v: float, r: float) -> float:
    """PDE residual ``gamma r + v^2 - r`` of the perpetual claim; zero in exact arithmetic."""
    return perpetual_gamma(v, r) * r + v * v - r


# -- forwards and futures ------------------------------------------------------

def forward_price(A_t: float, V_t: float) -> float:
    """Delivery price ``A_t - V_t`` of a forward whose value at inception is ``V_t``."""
    return A_t - V_t


@dataclass(frozen=True)
class ForwardValue:
    value: float
    decomposition: float
    printed_decomposition: float
    bond_identity_residual: float


def forward_value_at(s: float, A_s: float, F: float, bond_s_T: float, eq_r_integral: float,
                     t: float | None = None, T: float | None = None, tol: float = 1e-9) -> ForwardValue:
    """Value ``A_s - F`` at time ``s`` of a forward struck at ``F``.

    Also returns the bond decomposition ``A_s - F E[int r] - F B(s, T)``, which
    equals the value when ``B(s, T) = 1 - E[int r]``, and the variant without
    the ``F`` factor on ``E[int r]`` for comparison.

    Raises
    ------
    ConsistencyError
        If ``|B + E[int r] - 1| > tol``.
    """
    if t is not None and s < t:
        raise DomainError(f"s={s} precedes the contract start {t}")
    if T is not None and s > T:
        raise DomainError(f"s={s} is after delivery {T}")
    residual = bond_s_T + eq_r_integral - 1.0
    if abs(residual) > tol:
        raise ConsistencyError(
            f"bond price {bond_s_T} and expected rate integral {eq_r_integral} do not satisfy B = 1 - E[int r]"
        )
    value = A_s - F
    decomposition = A_s - F * eq_r_integral - F * bond_s_T
    printed = A_s - eq_r_integral - F * bond_s_T
    return ForwardValue(value, decomposition, printed, residual)


def futures_price(A_t: float, r_integral_t_T: float) -> float:
    """Futures price ``A_t + int_t^T r du`` (the risk-neutral mean of ``A_T``)."""
    return A_t + r_integral_t_T


def futures_delivery_price(A_ti: float, E_Q_A_T: float) -> float:
    return E_Q_A_T - A_ti


@dataclass(frozen=True)
class SpreadResult:
    spread: float
    classification: str | None


def forward_futures_spread(r_integral_0_T: float, futures_price_0: float | None = None,
                           expected_physical: float | None = None) -> SpreadResult:
    """Futures-minus-forward spread, equal to ``int_0^T r du``.

    When both the futures price and the physical expectation of ``A_T`` are
    given the market is classified as ``normal-backwardation`` (futures below
    the expectation), ``contango`` (above) or ``neutral``.
    """
    label = None
    if futures_price_0 is not None and expected_physical is not None:
        if futures_price_0 < expected_physical:
            label = "normal-backwardation"
        elif futures_price_0 > expected_physical:
            label = "contango"
        else:
            label = "neutral"
    return SpreadResult(r_integral_0_T, label)


# -- Hull-White type short rate --------------------------------------------------

@dataclass(frozen=True)
class HullWhiteParams:
    """Coefficients of ``dr = (a(t) - b(t) r) dt + v(t) dW`` and the initial rate.

    ``a``, ``b`` and ``v`` must be time-only and nonnegative.  Zero values are
    accepted so that deterministic and driftless limits can be priced.
    """

    a: CoefficientFn
    b: CoefficientFn
    v: CoefficientFn
    r0: float

    def __post_init__(self):
        for name in ("a", "b", "v"):
            c = as_coefficient(getattr(self, name))
            if c.depends_on_x:
                raise ConfigError(f"short-rate coefficient {name} must not depend on the state")
            if c.min_value() < 0.0:
                raise ConfigError(f"short-rate coefficient {name} must be nonnegative")
            object.__setattr__(self, name, c)
        if not math.isfinite(self.r0):
            raise ConfigError("r0 must be finite")

    @property
    def horizon(self) -> float:
        return min(self.a.horizon, self.b.horizon, self.v.horizon)

    @property
    def is_constant(self) -> bool:
        return all(c.kind == "constant" for c in (self.a, self.b, self.v))

    @property
    def is_piecewise(self) -> bool:
        return all(c.is_piecewise_constant_in_time for c in (self.a, self.b, self.v))

    def breakpoints(self, lo: float, hi: float) -> list[float]:
        pts = set()
        for c in (self.a, self.b, self.v):
            pts.update(float(p) for p in c.time_breakpoints() if lo < p < hi)
        return sorted(pts)

    def to_dict(self) -> dict[str, Any]:
        return {"a": self.a.to_dict(), "b": self.b.to_dict(), "v": self.v.to_dict(), "r0": self.r0}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "HullWhiteParams":
        try:
            return cls(as_coefficient(d["a"]), as_coefficient(d["b"]), as_coefficient(d["v"]), float(d["r0"]))
        except KeyError as exc:
            raise ConfigError(f"short-rate parameters are missing field {exc}") from None


def _quad(f, lo: float, hi: float, points=None, what: str = "integral") -> float:
    if hi <= lo:
        return 0.0
    out = integrate.quad(f, lo, hi, points=points or None, epsabs=QUAD_EPSABS, epsrel=1e-12,
                         limit=400, full_output=1)
    if len(out) > 3:
        raise NumericalError(f"quadrature for {what} did not converge: {out[3]}",
                             {"abserr": out[1], "neval": out[2].get("neval", 0), "lo": lo, "hi": hi})
    return out[0]


def _check_times(p: HullWhiteParams, t: float, T: float):
    if t < 0.0:
        raise DomainError(f"t={t} is negative")
    if t > T:
        raise DomainError(f"t={t} exceeds maturity T={T}")
    if T > p.horizon:
        raise DomainError(f"T={T} beyond the parameter horizon {p.horizon}")


def relative_decay(x: float) -> float:
    """``(1 - exp(-x)) / x``, accurate down to ``x = 0`` (where it is 1)."""
    if abs(x) < 1e-5:
        return 1.0 - x / 2.0 + x * x / 6.0 - x ** 3 / 24.0
    return -math.expm1(-x) / x


def _decay_factor(b: float, h: float) -> tuple[float, float]:
    """``(exp(-b h), (1 - exp(-b h)) / b)`` with the ``b -> 0`` limit."""
    return math.exp(-b * h), h * relative_decay(b * h)


def _mean_gap(b: float, h: float, g: float) -> float:
    """``int_0^h (1 - exp(-b u)) / b du = (h - g) / b`` with a series near ``b h = 0``."""
    x = b * h
    if abs(x) < 1e-4:
        return h * h * (0.5 - x / 6.0 + x * x / 24.0)
    return (h - g) / b


def hw_b_star(p: HullWhiteParams, t: float) -> float:
    """Cumulative mean-reversion ``int_0^t b(u) du``; exact for piecewise ``b``."""
    if t < 0.0 or t > p.b.horizon:
        raise DomainError(f"t={t} outside [0, {p.b.horizon}]")
    return p.b.time_integral(0.0, t)


def _pieces(p: HullWhiteParams, t: float, T: float):
    edges = [t] + p.breakpoints(t, T) + [T]
    return list(zip(edges[:-1], edges[1:]))


def hw_c_a(p: HullWhiteParams, t: float, T: float) -> tuple[float, float]:
    """Return ``(c(t, T), a(t, T))``; closed form when coefficients are piecewise constant."""
    _check_times(p, t, T)
    if T == t:
        return 0.0, 0.0
    if p.is_piecewise:
        c, acc = 0.0, 0.0
        for s0, s1 in reversed(_pieces(p, t, T)):
            mid = 0.5 * (s0 + s1)
            h = s1 - s0
            bi, ai = float(p.b(0.0, mid)), float(p.a(0.0, mid))
            e, g = _decay_factor(bi, h)
            acc += ai * (_mean_gap(bi, h, g) + g * c)
            c = g + e * c
        return c, acc
    pts = p.breakpoints(t, T)

    def c_of(u):
        bt = p.b.time_integral(0.0, u)
        return _quad(lambda w: math.exp(-(p.b.time_integral(0.0, w) - bt)), u, T, p.breakpoints(u, T), "c(t,T)")

    c = c_of(t)
    a = _quad(lambda u: float(p.a(0.0, u)) * c_of(u), t, T, pts, "a(t,T)")
    return c, a


def hw_bond_price(p: HullWhiteParams, r_t: float, t: float, T: float) -> float:
    """Zero-coupon price ``1 - r_t c(t, T) - a(t, T)``; not clamped to [0, 1]."""
    c, a = hw_c_a(p, t, T)
    return 1.0 - r_t * c - a


@dataclass(frozen=True)
class HwMoments:
    """Gaussian moments at ``tau`` of ``R = int_0^tau r ds`` and ``r_tau``."""

    mu_R: float
    var_R: float
    mu_r: float
    var_r: float
    cov: float

    @property
    def corr(self) -> float:
        den = math.sqrt(self.var_R * self.var_r)
        return self.cov / den if den > 0.0 else 0.0

    def as_tuple(self):
        return (self.mu_R, self.var_R, self.mu_r, self.var_r, self.cov)


def hw_moments(p: HullWhiteParams, tau: float) -> HwMoments:
    """Means, variances and covariance of ``(int_0^tau r ds, r_tau)`` given ``r_0``."""
    if not 0.0 < tau <= p.horizon:
        raise DomainError(f"tau={tau} outside (0, {p.horizon}]")
    if p.is_constant:
        a, b, v = p.a.value, p.b.value, p.v.value
        if b == 0.0:
            return HwMoments(
                mu_R=p.r0 * tau + 0.5 * a * tau * tau,
                var_R=v * v * tau ** 3 / 3.0,
                mu_r=p.r0 + a * tau,
                var_r=v * v * tau,
                cov=0.5 * v * v * tau * tau,
            )
        if b * tau >= 1e-4:
            e1 = -math.expm1(-b * tau)
            e2 = -math.expm1(-2.0 * b * tau)
            c = e1 / b
            return HwMoments(
                mu_R=p.r0 * c + (a / b) * (tau - c),
                var_R=(v * v / (b * b)) * (tau - 2.0 * e1 / b + e2 / (2.0 * b)),
                mu_r=math.exp(-b * tau) * p.r0 + (a / b) * e1,
                var_r=v * v * e2 / (2.0 * b),
                cov=v * v * e1 * e1 / (2.0 * b * b),
            )
    pts = p.breakpoints(0.0, tau)
    bt = p.b.time_integral(0.0, tau)

    def decay(u):
        return math.exp(-(bt - p.b.time_integral(0.0, u)))

    def c_to_tau(u):
        return hw_c_a(p, u, tau)[0]

    def vsq(u):
        return float(p.v(0.0, u)) ** 2

    mu_R = p.r0 * c_to_tau(0.0) + hw_c_a(p, 0.0, tau)[1]
    mu_r = math.exp(-bt) * p.r0 + _quad(lambda u: decay(u) * float(p.a(0.0, u)), 0.0, tau, pts, "mu_r")
    var_r = _quad(lambda u: decay(u) ** 2 * vsq(u), 0.0, tau, pts, "var_r")
    var_R = _quad(lambda u: vsq(u) * c_to_tau(u) ** 2, 0.0, tau, pts, "var_R")
    cov = _quad(lambda u: vsq(u) * c_to_tau(u) * decay(u), 0.0, tau, pts, "cov")
    return HwMoments(mu_R, var_R, mu_r, var_r, cov)


def _gauss_hermite_2d(m: HwMoments, payoff, n_r: int, n_R: int) -> float:
    """``E[payoff(r) - R]`` on a tensor Gauss-Hermite rule for the bivariate normal."""
    zr, wr = roots_hermitenorm(n_r)
    zR, wR = roots_hermitenorm(n_R)
    wr = wr / wr.sum()
    wR = wR / wR.sum()
    sd_r = math.sqrt(m.var_r)
    beta = m.cov / sd_r if sd_r > 0.0 else 0.0
    resid = math.sqrt(max(m.var_R - beta * beta, 0.0))
    r = m.mu_r + sd_r * zr
    R = m.mu_R + beta * zr[:, None] + resid * zR[None, :]
    integrand = payoff(r)[:, None] - R
    return float(wr @ integrand @ wR)


def hw_bond_call(p: HullWhiteParams, T_bond: float, tau_opt: float, K: float,
                 gh_nodes: tuple[int, int] = (16384, 16)) -> PriceResult:
    """Call on the bond ``B(tau, T)`` at ``tau``, net of the accrued rate cost.

    The value is ``E[(B(tau, T) - K)^+] - E[int_0^tau r ds]``.  The primary
    value uses the exact one-dimensional Gaussian reduction; a two-dimensional
    Gauss-Hermite evaluation over ``(R_tau, r_tau)`` is returned in the
    diagnostics.  The payoff has a kink in ``r``, so the tensor rule uses many
    nodes along ``r`` and few along the conditional ``R`` direction.
    """
    if not 0.0 < tau_opt < T_bond:
        raise DomainError(f"need 0 < tau_opt < T_bond, got {tau_opt}, {T_bond}")
    m = hw_moments(p, tau_opt)
    c, a = hw_c_a(p, tau_opt, T_bond)
    q = 1.0 - a - K
    mean = q - c * m.mu_r
    sd = c * math.sqrt(m.var_r)
    if sd == 0.0:
        value = max(mean, 0.0) - m.mu_R
        d = math.copysign(math.inf, mean) if mean != 0.0 else 0.0
    else:
        d = mean / sd
        value = mean * float(norm_cdf(d)) + sd * float(norm_pdf(d)) - m.mu_R
    diagnostics = {"c": c, "a": a, "q": q, "d": d, "mu_R": m.mu_R, "var_R": m.var_R,
                   "mu_r": m.mu_r, "var_r": m.var_r, "cov": m.cov}
    if sd > 0.0:
        gh = _gauss_hermite_2d(m, lambda r: np.maximum(q - c * r, 0.0), *gh_nodes)
        diagnostics["gauss_hermite_2d"] = gh
        diagnostics["gauss_hermite_gap"] = gh - value
    else:
        diagnostics["gauss_hermite_2d"] = value
        diagnostics["gauss_hermite_gap"] = 0.0
    diagnostics["negative_price"] = value < 0.0
    return PriceResult(value, "closed", diagnostics=diagnostics)


def constant_hw(a: float, b: float, v: float, r0: float) -> HullWhiteParams:
    return HullWhiteParams(Constant(a), Constant(b), Constant(v), r0)
