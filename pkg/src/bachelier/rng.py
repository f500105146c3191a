"""Counter-based normal variates keyed by (seed, stream, path, step).

Each path owns an independent substream, so the variates a path receives do
not depend on how paths are split across threads.  Uniforms come from a
SplitMix64 finaliser applied to a per-path key plus the step counter; normals
come from the AS241 (PPND16) inverse normal CDF, accurate to about 1e-16
relative over the open unit interval.
"""

from __future__ import annotations

import math
import warnings

import numba as nb
import numpy as np
from numba.core.errors import NumbaWarning

warnings.filterwarnings("ignore", message=".*TBB.*", category=NumbaWarning)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_PATH_MUL = np.uint64(0xD1B54A32D192ED03)
_TWO_M53 = 1.0 / 9007199254740992.0


@nb.njit(inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(inline='always')
def _ppnd16(p):
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r + 67265.770927008700853) * r + 45921.953931549871457) * r + 13731.693765509461125) * r + 1971.5909503065514427) * r + 133.14166789178437745) * r + 3.387132872796366608) / (((((((r * 5226.495278852545925 + 28729.085735721942674) * r + 39307.89580009271061) * r + 21213.794301586595867) * r + 5394.1960214247511077) * r + 687.1870074920579083) * r + 42.313330701600911252) * r + 1.0)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        v = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r + 0.24178072517745061177) * r + 1.27045825245236838258) * r + 3.64784832476320460504) * r + 5.7694972214606914055) * r + 4.6303378461565452959) * r + 1.42343711074968357734) / (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r + 0.14810397642748007459) * r + 0.68976733498510000455) * r + 1.6763848301838038494) * r + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        v = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r + 0.026532189526576123093) * r + 0.29656057182850489123) * r + 1.7848265399172913358) * r + 5.4637849111641143699) * r + 6.6579046435011037772) / (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r + 0.0148753612908506148525) * r + 0.13692988092273580531) * r + 0.59983220655588793769) * r + 1.0)
    return -v if q < 0 else v

@nb.njit(cache=True)
def _keys(seed, stream, n):
    base = _mix(np.uint64(seed) ^ _GOLDEN)
    s = np.uint64(stream) * _M2
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = _mix(base + np.uint64(i) * _PATH_MUL + s)
    return out


@nb.njit(parallel=True, cache=True)
def _fill(keys, step0, count, out):
    scale = 1.0 / math.sqrt(count)
    for i in nb.prange(keys.shape[0]):
        acc = 0.0
        for j in range(count):
            u = _mix(keys[i] + (np.uint64(step0 + j) + np.uint64(1)) * _GOLDEN)
            acc += _ppnd16(((u >> np.uint64(11)) + 0.5) * _TWO_M53)
        out[i] = acc * scale


@nb.njit(parallel=True, cache=True)
def _fill_euler(keys, step0, count, sqdt, x, mudt, sig, dw):
    # same operation order as the array expression x + mu*dt + sig*(z*sqdt)
    scale = 1.0 / math.sqrt(count)
    for i in nb.prange(keys.shape[0]):
        acc = 0.0
        for j in range(count):
            u = _mix(keys[i] + (np.uint64(step0 + j) + np.uint64(1)) * _GOLDEN)
            acc += _ppnd16(((u >> np.uint64(11)) + 0.5) * _TWO_M53)
        d = (acc * scale) * sqdt
        dw[i] = d
        x[i] = (x[i] + mudt) + sig * d


@nb.njit(cache=True)
def _ppnd16_vec(p):
    out = np.empty_like(p)
    for i in range(p.size):
        out[i] = _ppnd16(p[i])
    return out


def inverse_normal_cdf(p) -> np.ndarray:
    """Vectorised AS241 inverse of the standard normal CDF on (0, 1)."""
    p = np.asarray(p, dtype=float)
    return _ppnd16_vec(p.ravel()).reshape(p.shape)


def set_threads(n: int | None) -> int:
    """Set the numba worker count (clipped to what the runtime allows)."""
    limit = nb.config.NUMBA_NUM_THREADS
    n = limit if n is None or n <= 0 else min(int(n), limit)
    nb.set_num_threads(n)
    return n


class NormalStream:
    """Standard normal increments for ``n_paths`` independent paths.

    ``block(step, count)`` returns ``(z_step + ... + z_{step+count-1}) / sqrt(count)``
    per path, which is again standard normal; ``count > 1`` lets a coarse
    time grid reuse the Brownian path of a finer one.
    """

    def __init__(self, seed: int, n_paths: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream)
        self.keys = _keys(np.uint64(self.seed), np.uint64(self.stream), int(n_paths))
        self._buf = np.empty(int(n_paths))

    @property
    def n_paths(self) -> int:
        return self.keys.shape[0]

    def block(self, step: int, count: int = 1, out: np.ndarray | None = None) -> np.ndarray:
        out = self._buf if out is None else out
        _fill(self.keys, np.int64(step), np.int64(count), out)
        return out

    def euler_update(self, step: int, count: int, sqdt: float, x: np.ndarray, mudt: float,
                     sig: float, dw: np.ndarray) -> None:
        """In place ``dw = z sqdt`` and ``x = x + mudt + sig dw`` for scalar coefficients."""
        _fill_euler(self.keys, np.int64(step), np.int64(count), float(sqdt), x, float(mudt), float(sig), dw)

    def draw(self, step: int, count: int = 1) -> np.ndarray:
        """Like :meth:`block` but returns a fresh array."""
        return self.block(step, count, np.empty(self.n_paths)).copy()
