"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 input error, 3 numerical error.
Floating-point output carries 9 significant digits.  ``BACHELIER_SEED``
overrides ``--seed``.
"""

from __future__ import annotations

import contextlib
import dataclasses
import io
import json
import math
import os
import sys
from typing import Any

import click
import numpy as np

from . import analytic, curve, mc, pde, simulate
from .errors import BachelierError, ConfigError, DomainError, NumericalError
from .model import MarketModel, Payoff
from .rng import set_threads
from .simulate import SimConfig

METHODS = ("closed", "pde", "mc")
PRICE_DRIFT_MODES = (*pde.DRIFT_MODES, "dividend")
PRICE_DEFAULTS: dict[str, Any] = {
    "method": "closed", "drift_mode": "risk-neutral", "seed": 1, "paths": 100_000, "steps": None,
    "n_x": 801, "n_t": 400, "theta": 0.5,
}
STANDARD_MODEL = {"A0": 100.0, "rho": 2.0, "rate": 2.0, "vol": 10.0}
STANDARD_PAYOFF = {"kind": "call", "strike": 100.0}
STANDARD_MATURITY = 1.0


# -- output helpers ------------------------------------------------------------------------

def _round(obj):
    """Round every float to 9 significant digits; non-finite values become strings."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(format(x, ".9g")) if math.isfinite(x) else str(x)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_round(v) for v in obj]
    return obj


def _emit(text: str, output: str | None) -> None:
    if output:
        with open(output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


def _emit_json(report: dict[str, Any], output: str | None) -> None:
    _emit(json.dumps(_round(report), indent=2, sort_keys=True) + "\n", output)


def _seed(seed: int | None, default: int = 1) -> int:
    env = os.environ.get("BACHELIER_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"BACHELIER_SEED must be an integer, got {env!r}") from None
    return default if seed is None else seed


def _floats(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _grid(end: float, step: float, start: float = 0.0) -> np.ndarray:
    if not step > 0.0 or not end > start:
        raise ConfigError("grid needs step > 0 and end > start")
    n = int(round((end - start) / step))
    if n < 2 or abs(start + n * step - end) > 1e-9 * max(1.0, abs(end)):
        raise ConfigError(f"grid step {step} must divide [{start}, {end}] into at least two cells")
    return start + step * np.arange(n + 1)


def _load_json(path: str) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return data


def _model_inputs(model_file: str | None) -> tuple[dict, dict, float, dict]:
    """Model dict, payoff dict, maturity and stored knobs from a model or report file.

    Accepted layouts: a bare market model, ``{"model", "payoff", "maturity"}``,
    or a price report whose ``inputs`` holds the latter plus knobs.
    """
    model, payoff, maturity, knobs = dict(STANDARD_MODEL), dict(STANDARD_PAYOFF), STANDARD_MATURITY, {}
    if model_file is None:
        return model, payoff, maturity, knobs
    data = _load_json(model_file)
    if "inputs" in data:
        data = data["inputs"]
    if "model" in data:
        model = data["model"]
        payoff = data.get("payoff", payoff)
        maturity = float(data.get("maturity", maturity))
        knobs = {k: data[k] for k in PRICE_DEFAULTS if k in data}
    else:
        model = data
    return dict(model), dict(payoff), maturity, knobs


def _build_model(model: dict, overrides: dict[str, float | None], allow_degenerate: bool = False) -> MarketModel:
    model = dict(model)
    for key, value in overrides.items():
        if value is not None:
            model[key] = value
    rate, rho = overrides.get("rate"), overrides.get("rho")
    if rate is not None and rho is None and isinstance(model.get("rho"), (int, float)):
        # keep the physical drift admissible when only the rate is changed
        model["rho"] = max(float(model["rho"]), rate)
    return MarketModel.from_dict(model, allow_degenerate=allow_degenerate)


def _build_payoff(payoff: dict, kind: str | None, strike: float | None) -> Payoff:
    payoff = dict(payoff)
    if kind is not None:
        payoff["kind"] = kind
        if kind != "tabulated":
            payoff.pop("x_grid", None)
            payoff.pop("g_grid", None)
    if strike is not None:
        payoff["strike"] = strike
    return Payoff.from_dict(payoff)


def _json_safe(d: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        if isinstance(v, (bool, int, float, str, np.floating, np.integer, np.bool_)) or v is None:
            out[k] = v
        elif isinstance(v, dict):
            out[k] = _json_safe(v)
    return out


# -- commands --------------------------------------------------------------------------------

model_options = [
    click.option("--model", "model_file", type=click.Path(dir_okay=False),
                 help="JSON market model, model bundle or earlier price report."),
    click.option("--A0", "A0", type=float, help="Initial asset value."),
    click.option("--rho", type=float, help="Physical drift."),
    click.option("--rate", type=float, help="Riskless rate."),
    click.option("--vol", type=float, help="Volatility."),
    click.option("--dividend", type=float, help="Dividend rate."),
    click.option("--maturity", type=float, help="Maturity T."),
]


def _with_model_options(fn):
    for opt in reversed(model_options):
        fn = opt(fn)
    return fn


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--threads", type=int, default=None,
              help="Worker threads for Monte Carlo kernels (default: all cores).")
def cli(threads: int | None) -> None:
    """Pricing and term-structure engine for Bachelier's market model."""
    if threads is not None:
        if threads < 1:
            raise ConfigError("--threads must be >= 1")
        set_threads(threads)


@cli.command()
@_with_model_options
@click.option("--kind", type=click.Choice(["call", "put", "forward"]), help="Payoff kind.")
@click.option("--strike", type=float, help="Strike K.")
@click.option("--method", type=click.Choice(METHODS), help="Pricing backend [closed].")
@click.option("--drift-mode", type=click.Choice(PRICE_DRIFT_MODES), help="Equation variant [risk-neutral].")
@click.option("--seed", type=int, help="Monte Carlo seed [1].")
@click.option("--paths", type=int, help="Monte Carlo paths [100000].")
@click.option("--steps", type=int, help="Monte Carlo time steps [250 per year].")
@click.option("--n-x", type=int, help="PDE space nodes [801].")
@click.option("--n-t", type=int, help="PDE time steps [400].")
@click.option("--theta", type=float, help="PDE theta [0.5].")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json")
@click.option("--output", type=click.Path(dir_okay=False), help="Write to this file instead of stdout.")
def price(model_file, A0, rho, rate, vol, dividend, maturity, kind, strike, method, drift_mode, seed, paths,
          steps, n_x, n_t, theta, fmt, output):
    """Price a European claim with the closed form, the PDE or Monte Carlo."""
    base_model, base_payoff, base_T, stored = _model_inputs(model_file)
    given = {"method": method, "drift_mode": drift_mode, "seed": seed, "paths": paths, "steps": steps,
             "n_x": n_x, "n_t": n_t, "theta": theta}
    knobs = {**PRICE_DEFAULTS, **stored, **{k: v for k, v in given.items() if v is not None}}
    knobs["seed"] = _seed(knobs["seed"])
    model = _build_model(base_model, {"A0": A0, "rho": rho, "rate": rate, "vol": vol, "dividend": dividend})
    payoff = _build_payoff(base_payoff, kind, strike)
    T = base_T if maturity is None else maturity
    if not T > 0.0:
        raise ConfigError("maturity must be > 0")
    method, mode = knobs["method"], knobs["drift_mode"]
    if knobs["steps"] is None:
        knobs["steps"] = max(1, int(round(250 * T)))
    result = _price(model, payoff, T, method, mode, knobs)
    inputs = {"model": model.to_dict(), "payoff": payoff.to_dict(), "maturity": T, **knobs}
    if fmt == "csv":
        stderr = "" if result["stderr"] is None else format(result["stderr"], ".9g")
        _emit(f"method,drift_mode,value,stderr\n{method},{mode},{result['value']:.9g},{stderr}\n", output)
        return 0
    report = {"value": result["value"], "method": method, "drift_mode": mode, "inputs": inputs,
              "diagnostics": result["diagnostics"]}
    if result["stderr"] is not None:
        report["stderr"] = result["stderr"]
    _emit_json(report, output)
    return 0


def _price(model: MarketModel, payoff: Payoff, T: float, method: str, mode: str, knobs: dict) -> dict:
    if mode == "dividend" and model.dividend is None:
        raise ConfigError("drift mode 'dividend' needs a model with a dividend rate")
    if method == "closed":
        if mode != "risk-neutral":
            raise ConfigError("the closed form exists for the risk-neutral drift mode only")
        if not model.has_constant_coefficients:
            raise ConfigError("the closed form needs constant coefficients")
        r, v = model.rate.value, model.vol.value
        res = analytic.bachelier_price(payoff.kind, model.A0, payoff.strike, r, v, T)
        return {"value": res.value, "stderr": None, "diagnostics": _json_safe(res.diagnostics)}
    if method == "pde":
        extra = pde.dividend_drift(model) if mode == "dividend" else 0.0
        grid = pde.model_grid(model, T, extra, n_x=knobs["n_x"], n_t=knobs["n_t"])
        grid = dataclasses.replace(grid, theta=knobs["theta"])
        if mode == "dividend":
            res = pde.price_dividend_pde(model, payoff, T, grid)
        else:
            res = pde.price_bachelier_pde(model, payoff, T, grid, drift_mode=mode)
        diag = _json_safe(res.diagnostics)
        return {"value": res.value, "stderr": None, "diagnostics": diag}
    cfg = SimConfig(seed=knobs["seed"], n_paths=knobs["paths"], n_steps=knobs["steps"], t_end=T)
    pricer = {"risk-neutral": mc.price_ecc_riskneutral, "paper-eq7": mc.price_ecc_driftless,
              "dividend": mc.price_ecc_dividend}[mode]
    est = pricer(model, payoff, T, cfg)
    if not math.isfinite(est.value):
        raise NumericalError("Monte Carlo estimate is not finite", diagnostics=est.diagnostics)
    return {"value": est.value, "stderr": est.stderr, "diagnostics": _json_safe(est.diagnostics)}


@cli.group(name="curve")
def curve_group() -> None:
    """Emit term-structure surfaces as CSV (``t,T,value``)."""


@curve_group.command(name="hw")
@click.option("--a", "a", type=float, default=0.1, show_default=True, help="Mean-reversion level term.")
@click.option("--b", "b", type=float, default=0.5, show_default=True, help="Mean-reversion speed.")
@click.option("--v", "v", type=float, default=0.02, show_default=True, help="Short-rate volatility.")
@click.option("--r0", type=float, default=0.03, show_default=True, help="Initial short rate.")
@click.option("--t-grid", default="0", show_default=True, help="Comma-separated valuation times.")
@click.option("--r-t", help="Short rate at each valuation time (default: its model mean).")
@click.option("--T-max", "T_max", type=float, default=5.0, show_default=True)
@click.option("--dT", "dT", type=float, default=0.1, show_default=True, help="Maturity spacing.")
@click.option("--kind", type=click.Choice(["bond", "loan", "forward"]), default="bond", show_default=True)
@click.option("--output", type=click.Path(dir_okay=False))
def curve_hw(a, b, v, r0, t_grid, r_t, T_max, dT, kind, output):
    """Bond (or derived rate) surface of the Hull-White type short-rate model."""
    p = analytic.constant_hw(a, b, v, r0)
    times = np.array(_floats(t_grid))
    rates = _floats(r_t)
    if rates is None:
        rates = [p.r0 if t == 0.0 else analytic.hw_moments(p, t).mu_r for t in times]
    if len(rates) not in (1, times.size):
        raise ConfigError("--r-t needs one value or one per valuation time")
    bonds = curve.hw_curve(p, times, _grid(T_max, dT), np.broadcast_to(rates, times.shape))
    _emit(_derive(bonds, kind).to_csv(), output)
    return 0


def _derive(bonds: curve.BondSurface, kind: str):
    if kind == "bond":
        return bonds
    for t in bonds.t_grid:
        if bonds.row(t)[0].size < 3:
            raise ConfigError(f"rates at t={t:g} need at least three maturities T >= t; extend the maturity grid")
    if kind == "loan":
        return curve.loan_rates_from_bond_surface(bonds)
    vals = np.full(bonds.values.shape, np.nan)
    for i, t in enumerate(bonds.t_grid):
        for j, T in enumerate(bonds.T_grid):
            if T >= t - 1e-12:
                vals[i, j] = curve.forward_rate_from_bonds(bonds, t, T)
    return curve.RateSurface(bonds.t_grid, bonds.T_grid, vals, "forward")


@curve_group.command(name="bhjm")
@click.option("--sigma", type=float, default=0.2, show_default=True, help="Proportional loan-rate volatility.")
@click.option("--ell0", type=float, default=0.03, show_default=True, help="Initial loan rate at T=0.")
@click.option("--ell-slope", type=float, default=0.01, show_default=True, help="Initial curve slope in T.")
@click.option("--T-max", "T_max", type=float, default=2.0, show_default=True)
@click.option("--dT", "dT", type=float, default=0.05, show_default=True)
@click.option("--t-end", type=float, default=1.0, show_default=True)
@click.option("--steps", type=int, default=20, show_default=True)
@click.option("--seed", type=int, help="Seed [1].")
@click.option("--path", "path_index", type=int, default=0, show_default=True, help="Path to emit.")
@click.option("--kind", type=click.Choice(["loan", "bond"]), default="loan", show_default=True)
@click.option("--output", type=click.Path(dir_okay=False))
def curve_bhjm(sigma, ell0, ell_slope, T_max, dT, t_end, steps, seed, path_index, kind, output):
    """One simulated path of the loan-rate surface (or its bonds)."""
    mats = _grid(T_max, dT)
    spec = curve.BhjmSpec(sigma, ell0 + ell_slope * mats, mats)
    if path_index < 0:
        raise ConfigError("--path must be >= 0")
    cfg = SimConfig(seed=_seed(seed), n_paths=path_index + 1, n_steps=steps, t_end=t_end)
    paths = curve.bhjm_simulate(spec, cfg)
    surface = paths.rate_surface(path_index) if kind == "loan" else paths.bond_surface(path_index)
    _emit(surface.to_csv(), output)
    return 0


@curve_group.command(name="hjm")
@click.option("--sigma", type=float, default=0.01, show_default=True, help="Forward-rate volatility.")
@click.option("--f0", type=float, default=0.03, show_default=True, help="Flat initial forward rate.")
@click.option("--T-max", "T_max", type=float, default=2.0, show_default=True)
@click.option("--steps", type=int, default=40, show_default=True)
@click.option("--seed", type=int, help="Seed [1].")
@click.option("--path", "path_index", type=int, default=0, show_default=True)
@click.option("--kind", type=click.Choice(["forward", "bond"]), default="forward", show_default=True)
@click.option("--output", type=click.Path(dir_okay=False))
def curve_hjm(sigma, f0, T_max, steps, seed, path_index, kind, output):
    """One simulated path of the classical one-factor forward-rate surface."""
    if path_index < 0:
        raise ConfigError("--path must be >= 0")
    cfg = SimConfig(seed=_seed(seed), n_paths=path_index + 1, n_steps=steps, t_end=T_max)
    paths = curve.hjm_simulate_forward(sigma, np.full(steps + 1, f0), cfg)
    if kind == "forward":
        surface = curve.RateSurface(paths.times, paths.maturities, paths.f[path_index], "forward")
    else:
        surface = curve.BondSurface(paths.times, paths.maturities, paths.bonds()[path_index])
    _emit(surface.to_csv(), output)
    return 0


@curve_group.command(name="bootstrap")
@click.option("--input", "input_file", type=click.Path(dir_okay=False), required=True,
              help="Surface CSV with a '# kind:' header.")
@click.option("--to", "target", type=click.Choice(["bond", "loan", "forward"]), required=True)
@click.option("--output", type=click.Path(dir_okay=False))
def curve_bootstrap(input_file, target, output):
    """Convert between bond and rate surfaces."""
    try:
        with open(input_file, encoding="utf-8") as fh:
            surface = curve.read_surface_csv(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read {input_file}: {exc.strerror}") from None
    if surface.kind == target:
        result = surface
    elif surface.kind == "bond":
        result = _derive(surface, target)
    elif surface.kind == "loan" and target == "bond":
        result = curve.bonds_from_loan_rates(surface)
    else:
        raise ConfigError(f"cannot convert a {surface.kind} surface to {target}")
    _emit(result.to_csv(), output)
    return 0


@cli.command()
@click.option("--spot", type=float, required=True, help="Asset value A_t at inception.")
@click.option("--value", "value_t", type=float, default=0.0, show_default=True,
              help="Contract value V_t at inception.")
@click.option("--spot-s", type=float, help="Asset value A_s at a later time s.")
@click.option("--bond", type=float, help="Bond price B(s, T).")
@click.option("--rate-integral", type=float, help="Expected int_s^T r du.")
@click.option("--output", type=click.Path(dir_okay=False))
def forward(spot, value_t, spot_s, bond, rate_integral, output):
    """Forward delivery price, and optionally the contract value at a later time."""
    F = analytic.forward_price(spot, value_t)
    report: dict[str, Any] = {"forward_price": F, "inputs": {"spot": spot, "value": value_t}}
    later = (spot_s, bond, rate_integral)
    if any(x is not None for x in later):
        if any(x is None for x in later):
            raise ConfigError("--spot-s, --bond and --rate-integral must be given together")
        fv = analytic.forward_value_at(0.0, spot_s, F, bond, rate_integral)
        report["value_at_s"] = fv.value
        report["decomposition"] = fv.decomposition
        report["bond_identity_residual"] = fv.bond_identity_residual
        report["inputs"].update({"spot_s": spot_s, "bond": bond, "rate_integral": rate_integral})
    _emit_json(report, output)
    return 0


@cli.command()
@click.option("--spot", type=float, required=True, help="Asset value A_0.")
@click.option("--rate-integral", type=float, required=True, help="int_0^T r du.")
@click.option("--forward-value", type=float, help="Forward contract value V_0, for the spread.")
@click.option("--expected-physical", type=float, help="Physical expectation of A_T, for the market label.")
@click.option("--output", type=click.Path(dir_okay=False))
def futures(spot, rate_integral, forward_value, expected_physical, output):
    """Futures price and its spread over the forward price."""
    phi = analytic.futures_price(spot, rate_integral)
    spread = analytic.forward_futures_spread(rate_integral, phi, expected_physical)
    report: dict[str, Any] = {"futures_price": phi, "spread": spread.spread,
                              "classification": spread.classification,
                              "inputs": {"spot": spot, "rate_integral": rate_integral,
                                         "expected_physical": expected_physical}}
    if forward_value is not None:
        F = analytic.forward_price(spot, forward_value)
        report["forward_price"] = F
        report["spread_check"] = phi - (F + forward_value)
        report["inputs"]["forward_value"] = forward_value
    _emit_json(report, output)
    return 0


@cli.command(name="simulate")
@_with_model_options
@click.option("--measure", type=click.Choice(["physical", "risk-neutral", "driftless"]),
              default="risk-neutral", show_default=True)
@click.option("--seed", type=int, help="Seed [1].")
@click.option("--paths", type=int, default=10, show_default=True)
@click.option("--steps", type=int, help="Time steps [250 per year].")
@click.option("--output", type=click.Path(dir_okay=False))
def simulate_cmd(model_file, A0, rho, rate, vol, dividend, maturity, measure, seed, paths, steps, output):
    """Asset paths as CSV (``path,time,value[,integral]``)."""
    base_model, _, base_T, _ = _model_inputs(model_file)
    model = _build_model(base_model, {"A0": A0, "rho": rho, "rate": rate, "vol": vol, "dividend": dividend},
                         allow_degenerate=True)
    T = base_T if maturity is None else maturity
    n_steps = steps if steps is not None else max(1, int(round(250 * T)))
    cfg = SimConfig(seed=_seed(seed), n_paths=paths, n_steps=n_steps, t_end=T)
    if measure == "driftless":
        ps = simulate.simulate_fk_diffusion(model.vol, 0.0, model.A0, cfg, allow_degenerate=True)
    else:
        ps = simulate.simulate_asset(model, cfg, measure)
    _emit(ps.to_csv(), output)
    return 0


@cli.command()
@click.option("--filter", "filter_text", help="Run only criteria whose name (or number) matches.")
@click.option("--override", "overrides", multiple=True, hidden=True,
              help="NAME=TOL replaces the tolerance of a named check.")
def validate(filter_text, overrides):
    """Run the acceptance suite and print one row per check."""
    from . import validation

    parsed = {}
    for item in overrides:
        name, sep, tol = item.rpartition("=")
        if not sep:
            raise ConfigError(f"--override expects NAME=TOL, got {item!r}")
        try:
            parsed[name] = float(tol)
        except ValueError:
            raise ConfigError(f"--override tolerance must be a number, got {tol!r}") from None
    if not validation.select(filter_text):
        raise ConfigError(f"no criterion matches {filter_text!r}")
    rows = validation.run(filter_text, parsed)
    click.echo(validation.format_table(rows))
    failed = [r for r in rows if not r.passed]
    click.echo(f"{len(rows) - len(failed)}/{len(rows)} checks passed")
    return 1 if failed else 0


# -- entry points ----------------------------------------------------------------------------

def run(args: list[str]) -> int:
    """Invoke the CLI in-process and return its exit code."""
    try:
        rv = cli.main(args=list(args), prog_name="bachelier", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 2
    except click.Abort:
        click.echo("aborted", err=True)
        return 2
    except (NumericalError, ArithmeticError) as exc:
        click.echo(f"numerical error: {exc}", err=True)
        return 3
    except (BachelierError, DomainError, ValueError) as exc:
        click.echo(f"input error: {exc}", err=True)
        return 2
    return rv if isinstance(rv, int) else 0


def render(args: list[str]) -> str:
    """Stdout of an in-process invocation (raises if the command fails)."""
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = run(args)
    if code != 0:
        raise RuntimeError(f"command {args} exited with {code}")
    return buf.getvalue()


def determinism_commands(seed: int = 1) -> list[list[str]]:
    """Every Monte Carlo or simulation command, at a size suitable for repeated runs."""
    s = str(seed)
    return [
        ["price", "--method", "mc", "--seed", s, "--paths", "100000"],
        ["price", "--method", "mc", "--drift-mode", "paper-eq7", "--seed", s, "--paths", "20000"],
        ["price", "--method", "mc", "--drift-mode", "dividend", "--dividend", "1.5", "--seed", s,
         "--paths", "20000"],
        ["simulate", "--seed", s, "--paths", "20", "--steps", "50"],
        ["simulate", "--measure", "physical", "--rho", "3", "--seed", s, "--paths", "20", "--steps", "50"],
        ["simulate", "--measure", "driftless", "--seed", s, "--paths", "20", "--steps", "50"],
        ["curve", "bhjm", "--seed", s, "--path", "3"],
        ["curve", "hjm", "--seed", s, "--path", "3"],
    ]


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
