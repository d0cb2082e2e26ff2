#!/usr/bin/env python3
"""
cli.py - Command-line entry point for short-maturity Asian option pricing

Commands:
- smile   quadratic equivalent-vol smile on an x-grid
- price   asymptotic prices (smile fed to Black-Scholes with the Asian forward)
- mc      Monte Carlo prices and implied vols next to the asymptotic smile
- oracle  rate function from the variational solver next to the series
- table1  smile coefficients of the built-in SABR / Heston / Tanh setups

Flow:
1) Parse flags, configure logging on stderr
2) Load and validate the key=value config (all problems reported at once)
3) Run the command, collecting CSV rows
4) Write CSV to --out (default stdout)

Exit codes: 0 ok (possibly with warnings), 1 unexpected failure,
2 configuration error, 3 partial numerical failure (rows left empty).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import List, Optional, Sequence

from asymptotics import SMILE_WARN_RADIUS, rate_at, rate_series, smile_quadratic
from blackscholes import asian_price, forward_price
from errors import ConfigurationError, NumericalError, ValidationError
from mc_engine import price_fixed_ladder, price_floating_ladder
from model_catalog import MarketState, expansion_inputs, make_heston, make_sabr, make_tanh
from run_config import (
    RunConfig,
    build_kappas,
    build_market,
    build_maturity,
    build_mc_config,
    build_model,
    build_oracle_options,
    build_side,
    build_sign,
    build_x_grid,
    load_config,
)
from variational_oracle import lv_rate, rho_pm_rate, solve_fixed, solve_floating

logger = logging.getLogger(__name__)

COMMANDS = ("smile", "price", "mc", "oracle", "table1")
MODES = ("fixed", "floating", "rho-pm", "local-vol")
MC_MODES = ("fixed", "floating")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

TABLE1_RHOS = (-0.7, 0.0, 0.7)


@dataclass
class CommandResult:
    header: Sequence[str]
    rows: List[Sequence] = field(default_factory=list)
    exit_code: int = EXIT_OK


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_csv(result: CommandResult, out) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(result.header)
    for row in result.rows:
        writer.writerow([_fmt(v) for v in row])


def _model_and_market(config: RunConfig):
    market = build_market(config)
    model = build_model(config, market)
    return model, market


def _warn_outside_radius(x: float, command: str):
    if abs(x) > SMILE_WARN_RADIUS:
        logger.warning("[CLI] %s: |x|=%.4f beyond %.1f, the quadratic smile is extrapolated",
                       command, abs(x), SMILE_WARN_RADIUS)


# ========== 1) ASYMPTOTIC COMMANDS ==========

def cmd_smile(config: RunConfig) -> CommandResult:
    model, market = _model_and_market(config)
    smile = smile_quadratic(expansion_inputs(model, market))
    result = CommandResult(header=("x", "K", "sigma_asym"))
    for x, strike in build_x_grid(config, market):
        _warn_outside_radius(x, "smile")
        result.rows.append((x, strike, smile.at(x)))
    return result


def _sides(side: str, strike: float, forward: float) -> List[bool]:
    if side == "both":
        return [True, False]
    if side == "otm":
        return [strike >= forward]
    return [side == "call"]


def cmd_price(config: RunConfig) -> CommandResult:
    model, market = _model_and_market(config)
    maturity = build_maturity(config)
    side = build_side(config, "both")
    smile = smile_quadratic(expansion_inputs(model, market))
    forward = forward_price(market, maturity)
    result = CommandResult(header=("K", "T", "side", "price_asym", "sigma_asym", "floored"))
    for x, strike in build_x_grid(config, market):
        _warn_outside_radius(x, "price")
        for is_call in _sides(side, strike, forward):
            quote = asian_price(smile, market, strike, maturity, is_call)
            result.rows.append((strike, maturity, quote.side, quote.price, quote.implied_vol, quote.vol_floored))
    return result


# ========== 2) MONTE CARLO ==========

def cmd_mc(config: RunConfig, mode: str = "fixed", seed: Optional[int] = None) -> CommandResult:
    if mode not in MC_MODES:
        raise ConfigurationError(f"mc supports --mode {' or '.join(MC_MODES)}, got '{mode}'")
    model, market = _model_and_market(config)
    maturity = build_maturity(config)
    mc_config = build_mc_config(config, seed)
    side = build_side(config, "otm")
    if side == "both":
        raise ConfigurationError("request.side=both is not supported by mc; use call, put or otm")

    if mode == "floating":
        result = CommandResult(header=("kappa", "side", "price_mc", "stderr", "price_over_sqrt_t"))
        kappas = build_kappas(config)
        sides = [kappa <= 1.0 if side == "otm" else side == "call" for kappa in kappas]
        estimates = price_floating_ladder(model, market, kappas, maturity, sides, mc_config)
        for kappa, is_call, est in zip(kappas, sides, estimates):
            result.rows.append((kappa, "call" if is_call else "put", est.price, est.std_error,
                                est.price / math.sqrt(maturity)))
        return result

    smile = smile_quadratic(expansion_inputs(model, market))
    forward = forward_price(market, maturity)
    result = CommandResult(header=("x", "K", "side", "price_mc", "stderr", "sigma_mc", "sigma_asym", "diff"))
    grid = build_x_grid(config, market)
    sides = [_sides(side, strike, forward)[0] for _, strike in grid]
    estimates = price_fixed_ladder(model, market, [strike for _, strike in grid], maturity, sides, mc_config)
    for (x, strike), is_call, est in zip(grid, sides, estimates):
        sigma_asym = smile.at(x)
        if est.implied_vol is None:
            logger.warning("[MC] implied vol not invertible at K=%.6g (price %.6g); row left empty",
                           strike, est.price)
            result.exit_code = EXIT_NUMERICAL
            diff = None
        else:
            diff = est.implied_vol - sigma_asym
        result.rows.append((x, strike, "call" if is_call else "put", est.price, est.std_error,
                            est.implied_vol, sigma_asym, diff))
    return result


# ========== 3) VARIATIONAL ORACLE ==========

def cmd_oracle(config: RunConfig, mode: str = "fixed") -> CommandResult:
    if mode not in MODES:
        raise ConfigurationError(f"--mode must be one of {MODES}, got '{mode}'")
    model, market = _model_and_market(config)
    options = build_oracle_options(config)
    grid = build_x_grid(config, market)
    if any(x == 0.0 for x, _ in grid):
        raise ConfigurationError("oracle x-grid must not contain 0 (the rate vanishes at the money)")

    inputs = expansion_inputs(model, market)
    sign = build_sign(config) if mode == "rho-pm" else None
    if mode == "rho-pm":
        series = rate_series(expansion_inputs(model.with_rho(sign), market))
    elif mode == "local-vol":
        series = rate_series(replace(inputs, sigma0=0.0, sigma1=0.0, sigma2=0.0, rho=0.0))
    elif mode == "fixed":
        series = rate_series(inputs)
    else:
        series = None
    floating_lead = 1.5 / (inputs.eta0 ** 2 * inputs.v0)

    result = CommandResult(header=("x", "rate_series", "rate_oracle", "abs_diff", "converged"))
    for x, strike in grid:
        expected = floating_lead * x * x if series is None else rate_at(series, x)
        try:
            if mode == "fixed":
                solution = solve_fixed(model, market, strike, options)
            elif mode == "floating":
                solution = solve_floating(model, market, math.exp(x), options)
            elif mode == "rho-pm":
                solution = rho_pm_rate(model, market, strike, sign, options)
            else:
                solution = lv_rate(model, market.s0, strike, v0=market.v0, options=options)
        except (NumericalError, ValidationError) as e:
            logger.warning("[ORACLE] x=%.4f failed: %s", x, e)
            result.exit_code = EXIT_NUMERICAL
            result.rows.append((x, expected, None, None, False))
            continue
        if not solution.converged:
            logger.warning("[ORACLE] x=%.4f did not meet tolerances (C=%.3g, stationarity=%.3g)",
                           x, solution.constraint_residual, solution.stationarity)
        result.rows.append((x, expected, solution.rate, abs(solution.rate - expected), solution.converged))
    return result


# ========== 4) BUILT-IN TABLE ==========

def table1_setups():
    """(name, model at rho=0, market) for the three reference setups."""
    sabr_market = MarketState(s0=1.0, v0=0.1)
    heston_market = MarketState(s0=1.0, v0=0.04)
    return [
        ("SABR", make_sabr(2.0), sabr_market),
        ("Heston", make_heston(kappa=2.0, theta=0.09, xi=0.2), heston_market),
        ("Tanh", make_tanh(f0=1.0, f1=-0.5, x0=0.0, s0=1.0, sigma_const=2.0), sabr_market),
    ]


def _round3(value: float) -> str:
    rounded = Decimal(repr(value)).quantize(Decimal("0.001"), rounding=ROUND_HALF_UP)
    if rounded == 0:
        rounded = abs(rounded)
    return f"{rounded:.3f}"


def cmd_table1() -> CommandResult:
    result = CommandResult(header=("model", "rho", "sigma_atm", "skew", "convexity"))
    for name, model, market in table1_setups():
        for rho in TABLE1_RHOS:
            smile = smile_quadratic(expansion_inputs(model.with_rho(rho), market))
            result.rows.append((name, f"{rho:+.1f}" if rho else "0.0", _round3(smile.sigma_atm),
                                _round3(smile.skew), _round3(smile.convexity)))
    return result


# ========== 5) ENTRY POINT ==========

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="-", help="CSV output path, '-' for stdout")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    configured = argparse.ArgumentParser(add_help=False, parents=[common])
    configured.add_argument("--config", required=True, help="key=value run configuration")

    parser = argparse.ArgumentParser(prog="asian-lsv", description="Short-maturity Asian options under LSV models")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("smile", parents=[configured], help="quadratic smile on the x-grid")
    sub.add_parser("price", parents=[configured], help="asymptotic Black-Scholes prices")
    mc = sub.add_parser("mc", parents=[configured], help="Monte Carlo comparison")
    mc.add_argument("--mode", choices=MC_MODES, default="fixed")
    mc.add_argument("--seed", type=int, default=None, help="overrides mc.seed")
    oracle = sub.add_parser("oracle", parents=[configured], help="variational rate function")
    oracle.add_argument("--mode", choices=MODES, default="fixed")
    sub.add_parser("table1", parents=[common], help="built-in smile coefficient table")
    return parser


def run(args: argparse.Namespace) -> CommandResult:
    if args.command == "table1":
        return cmd_table1()
    config = load_config(args.config)
    if args.command == "smile":
        return cmd_smile(config)
    if args.command == "price":
        return cmd_price(config)
    if args.command == "mc":
        return cmd_mc(config, args.mode, args.seed)
    return cmd_oracle(config, args.mode)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    logger.debug("[CLI] command=%s", args.command)
    try:
        result = run(args)
        if args.out == "-":
            write_csv(result, sys.stdout)
        else:
            with open(args.out, "w", newline="") as fh:
                write_csv(result, fh)
        logger.info("[CLI] %s: %d rows", args.command, len(result.rows))
        return result.exit_code
    except (ConfigurationError, ValidationError) as e:
        logger.error("[CLI] %s", e)
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error("[CLI] numerical failure: %s", e)
        return EXIT_NUMERICAL
    except Exception as e:
        logger.exception("[CLI] unhandled exception: %s", e)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
