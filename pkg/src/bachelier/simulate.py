"""Sample paths for the asset, the Feynman-Kac diffusions and the short rate.

All simulators draw their Brownian increments from :class:`~bachelier.rng.NormalStream`
with stream id 0, so two calls with the same seed and path count see the same
increments.  The step generators (``*_steps``) expose the evolution one step
at a time for estimators that do not need to store whole paths.
"""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterator

import numpy as np

from .analytic import HullWhiteParams, relative_decay
from .errors import ConfigError
from .model import CoefficientFn, MarketModel
from .rng import NormalStream

SCHEMES = ("euler", "exact")
MEASURES = ("physical", "risk-neutral")


@dataclass(frozen=True)
class SimConfig:
    """Time grid and randomness of a simulation.

    ``brownian_substeps`` builds each step's increment from that many finer
    increments of the same stream, so a run with ``(n, 2)`` follows the same
    Brownian path as a run with ``(2 n, 1)``.
    """

    seed: int
    n_paths: int
    n_steps: int
    t_end: float
    t_start: float = 0.0
    scheme: str = "euler"
    brownian_substeps: int = 1

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if int(self.n_paths) < 1:
            raise ConfigError("n_paths must be >= 1")
        if int(self.n_steps) < 1:
            raise ConfigError("n_steps must be >= 1")
        if not self.t_end > self.t_start:
            raise ConfigError("t_end must exceed t_start")
        if self.t_start < 0.0:
            raise ConfigError("t_start must be >= 0")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if int(self.brownian_substeps) < 1:
            raise ConfigError("brownian_substeps must be >= 1")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def time(self, k: int) -> float:
        return self.t_end if k == self.n_steps else self.t_start + self.dt * k

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class PathSet:
    """Simulated trajectories.

    ``values`` has shape ``(n_paths, len(times))``.  ``integrals`` holds the
    trapezoidal ``int r ds`` over the whole horizon and ``running_integrals``
    the same integral up to each time (both ``None`` when not computed).
    With ``store="ends"`` only the initial and terminal columns are kept.
    """

    times: np.ndarray
    values: np.ndarray
    integrals: np.ndarray | None = None
    running_integrals: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    def to_csv(self, fh=None) -> str | None:
        """Write rows ``path,time,value[,integral]``; returns the text if ``fh`` is None."""
        out = io.StringIO() if fh is None else fh
        with_int = self.running_integrals is not None
        out.write("path,time,value,integral\n" if with_int else "path,time,value\n")
        times = [format(t, ".9g") for t in self.times]
        for i in range(self.n_paths):
            row = self.values[i]
            if with_int:
                ri = self.running_integrals[i]
                out.writelines(f"{i},{times[k]},{row[k]:.9g},{ri[k]:.9g}\n" for k in range(len(times)))
            else:
                out.writelines(f"{i},{times[k]},{row[k]:.9g}\n" for k in range(len(times)))
        return out.getvalue() if fh is None else None


StateFn = Callable[[Any, float], Any]


def state_fn(c: CoefficientFn | Callable | float | None) -> StateFn:
    """Turn a coefficient into a fast ``f(x, t)``; x-independent ones return scalars."""
    if c is None:
        return lambda x, t: 0.0
    if isinstance(c, CoefficientFn):
        if not c.depends_on_x:
            return lambda x, t: c(0.0, t)
        return c
    if callable(c):
        return c
    value = float(c)
    return lambda x, t: value


def _is_state_dependent(c) -> bool:
    if c is None or isinstance(c, (int, float)):
        return False
    if isinstance(c, CoefficientFn):
        return c.depends_on_x
    return True


@dataclass
class Step:
    """State after step ``k``: time ``t``, values ``x``, Brownian increments ``dw``
    and accumulated ``int r ds`` (a scalar when the rate is state-independent).

    ``x`` and ``dw`` are reused buffers; copy them to keep them.
    """

    k: int
    t: float
    x: np.ndarray
    dw: np.ndarray
    integral: np.ndarray | float


def euler_steps(drift, vol, x0: float, cfg: SimConfig, rate=None, stream: int = 0) -> Iterator[Step]:
    """Euler-Maruyama steps of ``dX = drift(X, t) dt + vol(X, t) dW`` from ``x0`` at ``cfg.t_start``.

    The state array may be updated in place between steps.
    """
    drift_f, vol_f, rate_f = state_fn(drift), state_fn(vol), state_fn(rate)
    rate_on_state = rate is not None and _is_state_dependent(rate)
    normals = NormalStream(cfg.seed, cfg.n_paths, stream)
    dt = cfg.dt
    sqdt = math.sqrt(dt)
    sub = cfg.brownian_substeps
    x = np.full(cfg.n_paths, float(x0))
    dw = np.empty(cfg.n_paths)
    integral: np.ndarray | float = np.zeros(cfg.n_paths) if rate_on_state else 0.0
    r_prev = rate_f(x, cfg.t_start) if rate is not None else 0.0
    for k in range(cfg.n_steps):
        t = cfg.time(k)
        mu = drift_f(x, t)
        sig = vol_f(x, t)
        if np.ndim(mu) == 0 and np.ndim(sig) == 0:
            normals.euler_update(k * sub, sub, sqdt, x, mu * dt, sig, dw)
        else:
            z = normals.block(k * sub, sub)
            np.multiply(z, sqdt, out=dw)
            x = x + mu * dt + sig * dw
        t_next = cfg.time(k + 1)
        if rate is not None:
            r_next = rate_f(x, t_next)
            integral = integral + 0.5 * (r_prev + r_next) * dt
            r_prev = r_next
        yield Step(k, t_next, x, dw, integral)


def _hw_transitions(p: HullWhiteParams, cfg: SimConfig):
    """Per-step exact Gaussian transition ``r' = D r + M + S z`` for piecewise parameters."""
    n = cfg.n_steps
    D, M, S = np.empty(n), np.empty(n), np.empty(n)
    for k in range(n):
        t0, t1 = cfg.time(k), cfg.time(k + 1)
        edges = [t0] + p.breakpoints(t0, t1) + [t1]
        d, m, var = 1.0, 0.0, 0.0
        for s0, s1 in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (s0 + s1)
            h = s1 - s0
            a, b, v = float(p.a(0.0, mid)), float(p.b(0.0, mid)), float(p.v(0.0, mid))
            e = math.exp(-b * h)
            d *= e
            m = m * e + a * h * relative_decay(b * h)
            var = var * e * e + v * v * h * relative_decay(2.0 * b * h)
        D[k], M[k], S[k] = d, m, math.sqrt(var)
    return D, M, S


def hw_steps(p: HullWhiteParams, cfg: SimConfig, r_start: float | None = None,
             stream: int = 0) -> Iterator[Step]:
    """Steps of the short rate; ``integral`` is the trapezoidal ``int r ds`` per path."""
    r0 = p.r0 if r_start is None else float(r_start)
    if cfg.t_end > p.horizon:
        raise ConfigError(f"simulation end {cfg.t_end} beyond parameter horizon {p.horizon}")
    if cfg.scheme == "euler" or not p.is_piecewise:
        yield from euler_steps(
            lambda x, t: p.a(0.0, t) - p.b(0.0, t) * x, lambda x, t: p.v(0.0, t), r0, cfg,
            rate=lambda x, t: x, stream=stream,
        )
        return
    if p.b.min_value() <= 0.0 or p.v.min_value() <= 0.0:
        raise ConfigError("exact short-rate scheme needs b > 0 and v > 0")
    D, M, S = _hw_transitions(p, cfg)
    normals = NormalStream(cfg.seed, cfg.n_paths, stream)
    sub = cfg.brownian_substeps
    dt = cfg.dt
    sqdt = math.sqrt(dt)
    r = np.full(cfg.n_paths, r0)
    integral = np.zeros(cfg.n_paths)
    for k in range(cfg.n_steps):
        z = normals.block(k * sub, sub)
        r_next = D[k] * r + M[k] + S[k] * z
        integral = integral + 0.5 * (r + r_next) * dt
        r = r_next
        yield Step(k, cfg.time(k + 1), r, z * sqdt, integral)


def _collect(steps: Iterator[Step], x0: float, cfg: SimConfig, with_integral: bool,
             store: str, meta: dict[str, Any]) -> PathSet:
    if store not in ("all", "ends"):
        raise ConfigError("store must be 'all' or 'ends'")
    n, m = cfg.n_paths, cfg.n_steps
    cols = m + 1 if store == "all" else 2
    values = np.empty((n, cols))
    values[:, 0] = x0
    running = np.zeros((n, cols)) if with_integral else None
    last = None
    for last in steps:
        j = last.k + 1 if store == "all" else (1 if last.k == m - 1 else None)
        if j is not None:
            values[:, j] = last.x
            if with_integral:
                running[:, j] = last.integral
    times = cfg.times if store == "all" else np.array([cfg.t_start, cfg.t_end])
    integrals = running[:, -1].copy() if with_integral else None
    return PathSet(times, values, integrals, running, {"config": cfg.to_dict(), **meta})


def simulate_asset(model: MarketModel, cfg: SimConfig, measure: str = "risk-neutral",
                   store: str = "all") -> PathSet:
    """Euler paths of the asset under the physical (drift ``rho``) or
    risk-neutral (drift ``rate``) measure, with the trapezoidal ``int r ds``."""
    if measure not in MEASURES:
        raise ConfigError(f"measure must be one of {MEASURES}")
    if cfg.t_end > model.horizon:
        raise ConfigError(f"simulation end {cfg.t_end} beyond model horizon {model.horizon}")
    drift = model.rho if measure == "physical" else model.rate
    steps = euler_steps(drift, model.vol, model.A0, cfg, rate=model.rate)
    return _collect(steps, model.A0, cfg, True, store, {"model": f"asset:{measure}"})


def simulate_fk_diffusion(vol, drift, x0: float, cfg: SimConfig, rate=None,
                          allow_degenerate: bool = False, store: str = "all") -> PathSet:
    """Euler paths of ``dZ = drift dt + vol dW`` started at ``x0`` at ``cfg.t_start``.

    ``drift`` is used as given; pass the negated dividend rate for the
    dividend diffusion.  When ``rate`` is given the path integral of the rate
    is accumulated as well.
    """
    if isinstance(vol, CoefficientFn):
        vmin = vol.min_value()
    elif callable(vol):
        vmin = math.inf
    else:
        vmin = float(vol)
    if vmin < 0.0 or (vmin == 0.0 and not allow_degenerate):
        raise ConfigError("diffusion volatility must be strictly positive")
    steps = euler_steps(drift, vol, x0, cfg, rate=rate)
    return _collect(steps, x0, cfg, rate is not None, store, {"model": "fk-diffusion"})


def simulate_hw_rate(p: HullWhiteParams, cfg: SimConfig, r_start: float | None = None,
                     store: str = "all") -> PathSet:
    """Short-rate paths from ``r_start`` (default ``p.r0``) at ``cfg.t_start``.

    ``scheme="exact"`` uses the Gaussian transition over each step when the
    parameters are piecewise constant; otherwise Euler is used.
    """
    r0 = p.r0 if r_start is None else float(r_start)
    steps = hw_steps(p, cfg, r_start)
    return _collect(steps, r0, cfg, True, store, {"model": "short-rate"})
