"""Acceptance suite shared by ``bachelier validate`` and the test-suite.

Each criterion produces one or more :class:`Check` rows.  A check passes when
``measured <= tolerance`` unless it is marked as a lower bound, in which case
it passes when ``measured > tolerance``.
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import sys
import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from . import analytic, curve, mc, pde, simulate
from .analytic import HullWhiteParams, constant_hw
from .model import Payoff, constant_model
from .simulate import SimConfig

STANDARD = {"A0": 100.0, "K": 100.0, "r": 2.0, "v": 10.0, "T": 1.0}
HW_PARAMS = {"a": 0.1, "b": 0.5, "v": 0.02, "r0": 0.03}


@dataclass
class Check:
    criterion: int
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: str = ""
    lower_bound: bool = False

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        rel = ">" if self.lower_bound else "<="
        return (f"[{status}] C{self.criterion:<2d} {self.name:<34s} measured={self.measured:.6g} "
                f"{rel} tol={self.tolerance:.6g}  {self.detail}").rstrip()


def _check(criterion, name, measured, tolerance, detail="", lower_bound=False) -> Check:
    measured, tolerance = float(measured), float(tolerance)
    passed = measured > tolerance if lower_bound else measured <= tolerance
    return Check(criterion, name, measured, tolerance, bool(passed), detail, lower_bound)


def _standard_model(r=None, dividend=None):
    r = STANDARD["r"] if r is None else r
    return constant_model(rho=r, vol=STANDARD["v"], rate=r, A0=STANDARD["A0"], dividend=dividend)


def _cfg(seed, n_paths, T=1.0, steps_per_year=250, t_start=0.0, scheme="euler"):
    n_steps = max(1, int(round(steps_per_year * (T - t_start))))
    return SimConfig(seed=seed, n_paths=n_paths, n_steps=n_steps, t_end=T, t_start=t_start, scheme=scheme)


def _hw() -> HullWhiteParams:
    return constant_hw(**HW_PARAMS)


# -- criteria ------------------------------------------------------------------------------

def closed_vs_mc(seed: int = 1) -> list[Check]:
    s = STANDARD
    closed = analytic.bachelier_call(s["A0"], s["K"], s["r"], s["v"], s["T"])
    t0 = time.perf_counter()
    est = mc.price_ecc_riskneutral(_standard_model(), Payoff.call(s["K"]), s["T"], _cfg(seed, 1_000_000))
    elapsed = time.perf_counter() - t0
    diff = abs(est.value - closed)
    return [
        _check(1, "closed-vs-mc |diff| vs 3 stderr", diff, 3.0 * est.stderr,
               f"mc={est.value:.6f} closed={closed:.6f}"),
        _check(1, "closed-vs-mc stderr", est.stderr, 0.02),
        _check(1, "closed-vs-mc runtime seconds", elapsed, 10.0),
    ]


def pde_vs_fk(seed: int = 1) -> list[Check]:
    s = STANDARD
    payoff = Payoff.call(s["K"])
    rows = []
    model = _standard_model()
    p = pde.price_bachelier_pde(model, payoff, s["T"], drift_mode="paper-eq7").value
    est = mc.price_ecc_driftless(model, payoff, s["T"], _cfg(seed, 100_000))
    rows.append(_check(2, "driftless pde vs driftless fk (r=2)", abs(p - est.value), max(3 * est.stderr, 2e-3),
                       f"pde={p:.6f} mc={est.value:.6f}"))
    zero = _standard_model(r=0.0)
    closed0 = analytic.bachelier_call(s["A0"], s["K"], 0.0, s["v"], s["T"])
    for mode in pde.DRIFT_MODES:
        v = pde.price_bachelier_pde(zero, payoff, s["T"], drift_mode=mode).value
        rows.append(_check(2, f"pde {mode} vs closed (r=0)", abs(v - closed0), 1e-3, f"pde={v:.6f}"))
    est0 = mc.price_ecc_driftless(zero, payoff, s["T"], _cfg(seed, 100_000))
    rows.append(_check(2, "driftless fk vs closed (r=0)", abs(est0.value - closed0), 3 * est0.stderr,
                       f"mc={est0.value:.6f}"))
    return rows


def drift_mode_gap(seeds: Iterable[int] = (1, 2, 3)) -> list[Check]:
    s = STANDARD
    payoff = Payoff.call(s["K"])
    model = _standard_model()
    closed = analytic.bachelier_call(s["A0"], s["K"], s["r"], s["v"], s["T"])
    p = pde.price_bachelier_pde(model, payoff, s["T"], drift_mode="paper-eq7").value
    rows = []
    gaps, ses = [], []
    for seed in seeds:
        est = mc.price_ecc_driftless(model, payoff, s["T"], _cfg(seed, 100_000))
        rows.append(_check(3, f"driftless gap / mc stderr (seed {seed})", abs(p - closed) / est.stderr, 10.0,
                           f"gap={closed - p:.6f}", lower_bound=True))
        gaps.append(closed - est.value)
        ses.append(est.stderr)
    signs = {math.copysign(1.0, g) for g in gaps}
    spread = max(gaps) - min(gaps)
    joint = math.sqrt(2.0) * max(ses)
    rows.append(_check(3, "driftless gap sign changes", len(signs) - 1, 0))
    rows.append(_check(3, "driftless gap spread across seeds", spread, 6.0 * joint,
                       f"gaps={', '.join(f'{g:.4f}' for g in gaps)}"))
    return rows


def parity(seed: int = 1) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(1000):
        A, K = rng.uniform(-200, 200, 2)
        r = rng.uniform(-5, 5)
        v = rng.uniform(0.1, 50)
        tau = rng.uniform(0, 5) if rng.random() > 0.05 else 0.0
        c = analytic.bachelier_call(A, K, r, v, tau)
        p = analytic.bachelier_put(A, K, r, v, tau)
        target = A - K + r * tau
        worst = max(worst, abs(c - p - target) / max(1.0, abs(target)))
    s = STANDARD
    paths = simulate.simulate_asset(_standard_model(), _cfg(seed, 100_000), "risk-neutral", store="ends")
    call = mc.price_on_paths(paths, Payoff.call(s["K"]))
    put = mc.price_on_paths(paths, Payoff.put(s["K"]))
    mean_terminal = float(np.mean(paths.terminal))
    pathwise = abs((call.value - put.value) - (mean_terminal - s["K"]))
    se_terminal = float(np.std(paths.terminal, ddof=1)) / math.sqrt(paths.n_paths)
    drift = abs(mean_terminal - (s["A0"] + s["r"] * s["T"]))
    return [
        _check(4, "parity closed form (relative)", worst, 1e-10),
        _check(4, "parity crn on one path set", pathwise, 1e-12, f"C-P={call.value - put.value:.9f}"),
        _check(4, "crn mean(A_T) vs A0+rT", drift, 3 * se_terminal),
    ]


def martingale(seed: int = 1) -> list[Check]:
    est = mc.martingale_excess(_standard_model(), STANDARD["T"], _cfg(seed, 100_000))
    return [_check(5, "martingale excess", abs(est.value), 3 * est.stderr, f"mean={est.value:.5f}")]


def perpetual(seed: int = 1) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        v = rng.uniform(0.1, 20.0)
        r = rng.uniform(0.01, 5.0) * rng.choice([-1.0, 1.0])
        worst = max(worst, abs(analytic.perpetual_residual(v, r)))
    return [_check(6, "perpetual residual (100 pairs)", worst, 1e-12)]


def convergence_errors(levels: int = 3, n_x: int = 201, n_t: int = 100) -> list[float]:
    s = STANDARD
    model = _standard_model(r=0.0)
    exact = analytic.bachelier_call(s["A0"], s["K"], 0.0, s["v"], s["T"])
    grid = pde.default_grid(s["A0"], s["v"], s["T"], n_x=n_x, n_t=n_t)
    errors = []
    for _ in range(levels):
        errors.append(abs(pde.price_bachelier_pde(model, Payoff.call(s["K"]), s["T"], grid).value - exact))
        grid = grid.refined()
    return errors


def pde_convergence() -> list[Check]:
    e = convergence_errors()
    rows = []
    for i in range(len(e) - 1):
        ratio = e[i] / e[i + 1]
        rows.append(_check(7, f"pde error ratio level {i + 1}", abs(ratio - 4.0), 0.5, f"ratio={ratio:.4f}"))
    return rows


def dividend(seed: int = 1) -> list[Check]:
    s = STANDARD
    model = _standard_model(dividend=1.5)
    payoff = Payoff.call(s["K"])
    p = pde.price_dividend_pde(model, payoff, s["T"]).value
    est = mc.price_ecc_dividend(model, payoff, s["T"], _cfg(seed, 100_000))
    return [_check(8, "dividend pde vs fk", abs(p - est.value), max(3 * est.stderr, 2e-3),
                   f"pde={p:.6f} mc={est.value:.6f}")]


def hw_bond(seed: int = 1) -> list[Check]:
    p = _hw()
    rows = []
    for t, T, r_t in ((0.0, 1.0, p.r0), (0.0, 2.0, p.r0), (0.5, 2.0, 0.05)):
        closed = analytic.hw_bond_price(p, r_t, t, T)
        est = mc.hw_bond_price_mc(p, t, T, _cfg(seed, 100_000, T, t_start=t, scheme="exact"), r_t)
        rows.append(_check(9, f"hw bond ({t:g},{T:g}) closed vs mc", abs(closed - est.value), 3 * est.stderr,
                           f"closed={closed:.8f} mc={est.value:.8f}"))
    flat = constant_hw(0.0, 0.0, HW_PARAMS["v"], HW_PARAMS["r0"])
    worst = max(abs(analytic.hw_bond_price(flat, flat.r0, 0.0, T) - (1.0 - flat.r0 * T)) for T in (0.5, 1, 2, 5))
    rows.append(_check(9, "hw bond a=b=0 vs 1 - r0 T", worst, 1e-12))
    return rows


def _hw_terminal(p: HullWhiteParams, cfg: SimConfig):
    last = None
    for last in simulate.hw_steps(p, cfg):
        pass
    return last.integral.copy(), last.x.copy()


def _var_se(x: np.ndarray) -> float:
    c = x - x.mean()
    return float(np.std(c * c, ddof=1)) / math.sqrt(x.size)


def hw_moments(seed: int = 1) -> list[Check]:
    p = _hw()
    tau = 1.0
    m = analytic.hw_moments(p, tau)
    R, r = _hw_terminal(p, _cfg(seed, 100_000, tau, scheme="exact"))
    n = R.size
    cR, cr = R - R.mean(), r - r.mean()
    prod = cR * cr
    stats = {
        "mu_R": (R.mean(), m.mu_R, R.std(ddof=1) / math.sqrt(n)),
        "var_R": (R.var(ddof=1), m.var_R, _var_se(R)),
        "mu_r": (r.mean(), m.mu_r, r.std(ddof=1) / math.sqrt(n)),
        "var_r": (r.var(ddof=1), m.var_r, _var_se(r)),
        "cov": (prod.sum() / (n - 1), m.cov, prod.std(ddof=1) / math.sqrt(n)),
    }
    return [_check(10, f"hw moment {k}", abs(mc_v - ex), 3 * se, f"mc={mc_v:.6g} formula={ex:.6g}")
            for k, (mc_v, ex, se) in stats.items()]


def hw_option(seed: int = 1) -> list[Check]:
    p = _hw()
    tau, T = 1.0, 2.0
    m = analytic.hw_moments(p, tau)
    c, a = analytic.hw_c_a(p, tau, T)
    K = 1.0 - a - c * m.mu_r  # at the money in expectation
    res = analytic.hw_bond_call(p, T, tau, K)
    R, r = _hw_terminal(p, _cfg(seed, 100_000, tau, scheme="exact"))
    samples = np.maximum(1.0 - r * c - a - K, 0.0) - R
    mc_v = float(samples.mean())
    se = float(samples.std(ddof=1)) / math.sqrt(samples.size)
    return [
        _check(11, "bond option 1-D vs 2-D quadrature", abs(res.diagnostics["gauss_hermite_gap"]), 1e-6,
               f"value={res.value:.9f}"),
        _check(11, "bond option closed vs mc", abs(res.value - mc_v), 3 * se, f"mc={mc_v:.9f}"),
    ]


def term_structure(seed: int = 1) -> list[Check]:
    p = _hw()
    T_grid = np.linspace(0.0, 3.0, 61)
    step = T_grid[1] - T_grid[0]
    t_grid = np.array([0.0, 0.5, 1.0])
    r_t = np.array([p.r0, 0.05, 0.04])
    surf = curve.hw_curve(p, t_grid, T_grid, r_t)
    rows = []
    worst_f = worst_l = 0.0
    ratio_f = ratio_l = 0.0
    for t, r in zip(t_grid, r_t):
        Ts, _ = surf.row(t)
        loans = np.array([curve.loan_rate_from_bonds(surf, t, T) for T in Ts])
        slope = abs(np.gradient(loans, Ts, edge_order=2)[0])
        tol = 2.0 * step * slope
        ef = abs(curve.forward_rate_from_bonds(surf, t, t) - r)
        el = abs(curve.loan_rate_from_bonds(surf, t, t) - r)
        worst_f, worst_l = max(worst_f, ef), max(worst_l, el)
        ratio_f, ratio_l = max(ratio_f, ef / tol), max(ratio_l, el / tol)
    rows.append(_check(12, "f(t,t)=r_t error / (2 dT |r'|)", ratio_f, 1.0, f"max err={worst_f:.3g}"))
    rows.append(_check(12, "l(t,t)=r_t error / (2 dT |r'|)", ratio_l, 1.0, f"max err={worst_l:.3g}"))
    loans = curve.RateSurface.from_function(t_grid, T_grid, lambda t, T: 0.03 + 0.01 * np.sin(T) + 0.005 * t, "loan")
    bhjm = curve.bhjm_simulate(
        curve.BhjmSpec(0.2, 0.03 + 0.01 * T_grid, T_grid), SimConfig(seed, 200, 20, 1.0))
    diag = [surf, curve.bonds_from_loan_rates(loans)] + [bhjm.bond_surface(i) for i in range(3)]
    off = max(float(np.max(np.abs(np.array([s.value(t, t) for t in s.t_grid]) - 1.0))) for s in diag)
    rows.append(_check(12, "B(t,t)=1 exactly", off, 0.0))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        A0, V, rint = rng.uniform(-200, 200), rng.uniform(0, 10), rng.uniform(-5, 5)
        phi0 = analytic.futures_price(A0, rint)
        F = analytic.forward_price(A0, V)
        worst = max(worst, abs((phi0 - (F + V)) - analytic.forward_futures_spread(rint).spread))
    rows.append(_check(12, "futures-forward spread = int r", worst, 1e-12))
    return rows


def roundtrip_errors(levels: int = 3, n0: int = 21) -> list[float]:
    def ell(t, T):
        return 0.03 + 0.02 * np.sin(T) + 0.01 * t

    errors = []
    n = n0
    for _ in range(levels):
        T = np.linspace(0.0, 2.0, n)
        t = T[: (n - 1) // 2 + 1: (n - 1) // 4]
        rates = curve.RateSurface.from_function(t, T, ell, "loan")
        back = curve.loan_rates_from_bond_surface(curve.bonds_from_loan_rates(rates))
        errors.append(float(np.nanmax(np.abs(back.values - rates.values))))
        n = 2 * (n - 1) + 1
    return errors


def bhjm(seed: int = 1) -> list[Check]:
    T_grid = np.linspace(0.0, 2.0, 41)
    spec = curve.BhjmSpec(0.2, 0.03 + 0.01 * T_grid, T_grid)
    paths = curve.bhjm_simulate(spec, SimConfig(seed=seed, n_paths=10_000, n_steps=20, t_end=1.0))
    rows = []
    n = paths.ell.shape[0]
    for T in (1.0, 1.5, 2.0):
        j = int(np.argmin(np.abs(T_grid - T)))
        d = paths.ell[:, -1, j] - paths.ell[:, 0, j]
        se = float(np.std(d, ddof=1)) / math.sqrt(n)
        rows.append(_check(13, f"bhjm l martingale T={T:g}", abs(float(np.mean(d))), 3 * se))
    accrued = paths.accrued_rate()[:, -1]
    j = int(np.argmin(np.abs(T_grid - 1.0)))
    bond_side = 1.0 - paths.bonds[0, 0, j]
    se = float(np.std(accrued, ddof=1)) / math.sqrt(n)
    rows.append(_check(13, "bhjm 1-B(0,T) vs E int r", abs(bond_side - float(np.mean(accrued))), 3 * se,
                       f"1-B={bond_side:.6f}"))
    e = roundtrip_errors()
    for i in range(len(e) - 1):
        ratio = e[i] / e[i + 1]
        rows.append(_check(13, f"round-trip ratio level {i + 1}", abs(ratio - 4.0), 0.5, f"ratio={ratio:.4f}"))
    return rows


_RENDER_ALL = (
    "import json, sys\n"
    "from bachelier import cli\n"
    "from bachelier.rng import set_threads\n"
    "set_threads(int(sys.argv[2]))\n"
    "print(json.dumps([cli.render(a) for a in cli.determinism_commands(int(sys.argv[1]))]))\n"
)


def _render_in_subprocess(seed: int, threads: int) -> list[str]:
    env = dict(os.environ)
    env["NUMBA_NUM_THREADS"] = str(threads)
    env.pop("BACHELIER_SEED", None)
    proc = subprocess.run([sys.executable, "-c", _RENDER_ALL, str(seed), str(threads)],
                          capture_output=True, text=True, env=env, check=False)
    if proc.returncode != 0:
        raise RuntimeError(f"determinism subprocess failed: {proc.stderr.strip()}")
    return json.loads(proc.stdout)


def determinism(seed: int = 1, threads: int | None = None) -> list[Check]:
    """Render every simulation command in separate processes with 1 and N worker
    threads (N defaults to max(4, cores)), plus once more in this process."""
    from . import cli

    n = threads or max(4, os.cpu_count() or 1)
    single = _render_in_subprocess(seed, 1)
    multi = _render_in_subprocess(seed, n)
    local = [cli.render(a) for a in cli.determinism_commands(seed)]
    thread_mismatch = sum(a != b for a, b in zip(single, multi))
    run_mismatch = sum(a != b for a, b in zip(single, local))
    count = len(local)
    return [
        _check(14, f"byte mismatches threads 1 vs {n}", thread_mismatch, 0, f"{count} commands"),
        _check(14, "byte mismatches across runs", run_mismatch, 0, f"{count} commands"),
    ]


CRITERIA: dict[int, tuple[str, Callable[..., list[Check]]]] = {
    1: ("closed-vs-mc", closed_vs_mc),
    2: ("pde-vs-fk", pde_vs_fk),
    3: ("drift-mode-gap", drift_mode_gap),
    4: ("parity", parity),
    5: ("martingale", martingale),
    6: ("perpetual", perpetual),
    7: ("pde-convergence", pde_convergence),
    8: ("dividend", dividend),
    9: ("hw-bond", hw_bond),
    10: ("hw-moments", hw_moments),
    11: ("hw-option", hw_option),
    12: ("term-structure", term_structure),
    13: ("bhjm", bhjm),
    14: ("determinism", determinism),
}


def select(filter_text: str | None = None) -> list[int]:
    if not filter_text:
        return sorted(CRITERIA)
    key = filter_text.lower()
    return [k for k, (name, _) in sorted(CRITERIA.items()) if key in name or key == str(k)]


def run(filter_text: str | None = None, overrides: dict[str, float] | None = None) -> list[Check]:
    """Run the selected criteria; ``overrides`` replaces tolerances by check name."""
    overrides = overrides or {}
    rows: list[Check] = []
    for k in select(filter_text):
        for row in CRITERIA[k][1]():
            if row.name in overrides:
                row = _check(row.criterion, row.name, row.measured, overrides[row.name], row.detail,
                             row.lower_bound)
            rows.append(row)
    return rows


def format_table(rows: list[Check]) -> str:
    return "\n".join(r.line() for r in rows)
