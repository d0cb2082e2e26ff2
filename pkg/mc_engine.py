#!/usr/bin/env python3
"""
mc_engine.py - Monte Carlo pricer for fixed- and floating-strike Asian options

Handles:
- Correlated Euler / log-Euler asset paths under any ModelSpec
- Variance schemes: exact log-normal step, full truncation, generic Euler
- Continuous-average quadrature (trapezoid or left rectangle)
- Antithetic pairing, standard errors, implied vols of the MC prices
- Per-path CSV dump for debugging

Paths are generated in fixed-size blocks. Block b draws from a Philox stream
keyed by SeedSequence(seed, spawn_key=(b,)), so the output depends on
(seed, n_paths, block_size, n_steps) only and never on the worker count.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from blackscholes import OptionQuote, forward_price, implied_vol
from errors import ArbitrageBoundsError, NumericalError, ValidationError
from model_catalog import MarketState, ModelSpec

logger = logging.getLogger(__name__)

ASSET_SCHEMES = ("euler", "log-euler")
VARIANCE_SCHEMES = ("exact-gbm", "full-truncation", "generic-euler")
AVERAGING_RULES = ("trapezoid", "left-rectangle")

DEFAULT_N_PATHS = 100_000
DEFAULT_N_STEPS = 200
DEFAULT_BLOCK_SIZE = 10_000
DEFAULT_STD_ERROR_WARN_RATIO = 0.05


@dataclass(frozen=True)
class McConfig:
    seed: int
    n_paths: int = DEFAULT_N_PATHS
    n_steps: int = DEFAULT_N_STEPS
    asset_scheme: str = "euler"
    variance_scheme: Optional[str] = None
    averaging: str = "trapezoid"
    antithetic: bool = False
    block_size: int = DEFAULT_BLOCK_SIZE
    n_workers: int = 1
    show_progress: bool = False
    std_error_warn_ratio: Optional[float] = DEFAULT_STD_ERROR_WARN_RATIO

    def __post_init__(self):
        if not isinstance(self.seed, (int, np.integer)) or not (0 <= int(self.seed) < 2 ** 64):
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.n_paths < 2:
            raise ValidationError(f"n_paths must be >= 2, got {self.n_paths}")
        if self.n_steps < 1:
            raise ValidationError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.block_size < 2:
            raise ValidationError(f"block_size must be >= 2, got {self.block_size}")
        if self.n_workers < 1:
            raise ValidationError(f"n_workers must be >= 1, got {self.n_workers}")
        if self.asset_scheme not in ASSET_SCHEMES:
            raise ValidationError(f"asset_scheme must be one of {ASSET_SCHEMES}, got '{self.asset_scheme}'")
        if self.variance_scheme is not None and self.variance_scheme not in VARIANCE_SCHEMES:
            raise ValidationError(f"variance_scheme must be one of {VARIANCE_SCHEMES}, got '{self.variance_scheme}'")
        if self.averaging not in AVERAGING_RULES:
            raise ValidationError(f"averaging must be one of {AVERAGING_RULES}, got '{self.averaging}'")
        if self.antithetic and (self.n_paths % 2 or self.block_size % 2):
            raise ValidationError("antithetic sampling needs even n_paths and block_size")


@dataclass(frozen=True)
class McEstimate:
    price: float
    std_error: float
    implied_vol: Optional[float]
    n_effective: int


# ========== 1) SCHEME SELECTION ==========

def resolve_variance_scheme(model: ModelSpec, config: McConfig) -> str:
    scheme = config.variance_scheme
    if scheme is None:
        if model.has_constant_sigma and model.has_zero_drift:
            return "exact-gbm"
        if model.kind == "heston":
            return "full-truncation"
        return "generic-euler"
    if scheme == "exact-gbm" and not (model.has_constant_sigma and model.has_zero_drift):
        raise ValidationError(f"exact-gbm variance step needs constant sigma and zero drift; model kind is '{model.kind}'")
    if scheme == "full-truncation" and model.variance_drift is None and model.kind == "generic":
        logger.debug("[MC] full truncation on a generic model uses V*mu(V) and V*sigma(V)")
    return scheme


# ========== 2) PATH BLOCKS ==========

def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(block,))))


def _normals(rng: np.random.Generator, size: int, antithetic: bool) -> np.ndarray:
    if not antithetic:
        return rng.standard_normal(size)
    half = rng.standard_normal(size // 2)
    return np.concatenate((half, -half))


def correlated_increments(rng: np.random.Generator, size: int, rho: float, dt: float,
                          antithetic: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Variance increment dZ and asset increment dB = rho dZ + sqrt(1 - rho^2) dW."""
    root_dt = math.sqrt(dt)
    dz = root_dt * _normals(rng, size, antithetic)
    dw = root_dt * _normals(rng, size, antithetic)
    return dz, rho * dz + math.sqrt(max(1.0 - rho * rho, 0.0)) * dw


def _simulate_block(model: ModelSpec, market: MarketState, maturity: float, config: McConfig,
                    scheme: str, block: int, size: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = _block_rng(config.seed, block)
    n_steps = config.n_steps
    dt = maturity / n_steps
    rho = model.rho
    carry = market.carry

    s = np.full(size, market.s0)
    v = np.full(size, market.v0)
    if config.averaging == "trapezoid":
        total = 0.5 * s
    else:
        total = s.copy()

    sigma_const = float(model.sigma(market.v0)) if scheme == "exact-gbm" else 0.0

    for step in range(n_steps):
        dz, db = correlated_increments(rng, size, rho, dt, config.antithetic)

        v_pos = np.maximum(v, 0.0)
        local = model.eta(s) * np.sqrt(v_pos)

        if config.asset_scheme == "euler":
            s = np.maximum(s * (1.0 + carry * dt + local * db), 0.0)
        else:
            s = s * np.exp((carry - 0.5 * local * local) * dt + local * db)

        if scheme == "exact-gbm":
            v = v * np.exp(-0.5 * sigma_const * sigma_const * dt + sigma_const * dz)
        elif scheme == "full-truncation":
            v = v + model.drift_of_variance(v_pos) * dt + model.diffusion_of_variance(v_pos) * dz
        else:
            v = np.maximum(v + model.drift_of_variance(v_pos) * dt + model.diffusion_of_variance(v_pos) * dz, 0.0)

        if step < n_steps - 1:
            total = total + s
        elif config.averaging == "trapezoid":
            total = total + 0.5 * s

    averages = total / n_steps
    return averages, s


def simulate_batch(model: ModelSpec, market: MarketState, maturity: float,
                   config: McConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Per-path continuous-average estimate A and terminal value S_T."""
    if not (maturity > 0.0):
        raise ValidationError(f"maturity must be > 0, got {maturity}")
    scheme = resolve_variance_scheme(model, config)

    n_blocks = -(-config.n_paths // config.block_size)
    sizes = [min(config.block_size, config.n_paths - b * config.block_size) for b in range(n_blocks)]
    logger.debug("[MC] %d paths x %d steps in %d blocks, scheme=%s/%s",
                 config.n_paths, config.n_steps, n_blocks, config.asset_scheme, scheme)

    def run(block: int):
        return _simulate_block(model, market, maturity, config, scheme, block, sizes[block])

    if config.n_workers == 1:
        results = [run(b) for b in tqdm(range(n_blocks), disable=not config.show_progress, desc="MC blocks")]
    else:
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            results = list(tqdm(pool.map(run, range(n_blocks)), total=n_blocks,
                                disable=not config.show_progress, desc="MC blocks"))

    averages = np.concatenate([r[0] for r in results])
    terminals = np.concatenate([r[1] for r in results])
    return averages, terminals


# ========== 3) ESTIMATORS ==========

def _pair_average(values: np.ndarray, config: McConfig) -> np.ndarray:
    """Antithetic partners sit in the two halves of every block."""
    if not config.antithetic:
        return values
    pieces = []
    for start in range(0, values.size, config.block_size):
        block = values[start:start + config.block_size]
        half = block.size // 2
        pieces.append(0.5 * (block[:half] + block[half:]))
    return np.concatenate(pieces)


def _estimate(payoff: np.ndarray, discount: float, config: McConfig, label: str) -> Tuple[float, float, int]:
    samples = discount * _pair_average(payoff, config)
    n = samples.size
    mean = math.fsum(samples) / n
    if np.all(samples == samples[0]):
        std_error = 0.0
    else:
        centred = samples - mean
        std_error = math.sqrt(math.fsum(centred * centred) / (n - 1)) / math.sqrt(n)
    if config.std_error_warn_ratio is not None and mean != 0.0:
        ratio = std_error / max(abs(mean), 1e-12)
        if ratio > config.std_error_warn_ratio:
            logger.warning("[MC] %s standard error high: %.6g (ratio %.3g) with %d samples", label, std_error, ratio, n)
    return mean, std_error, n


def _implied_vol_or_none(price: float, strike: float, maturity: float, is_call: bool,
                         market: MarketState) -> Optional[float]:
    if price <= 0.0:
        return None
    try:
        quote = OptionQuote(strike=strike, maturity=maturity, is_call=is_call, price=price)
        return implied_vol(quote, forward_price(market, maturity), market.r)
    except (ArbitrageBoundsError, NumericalError) as e:
        logger.info("[MC] no implied vol at K=%.6g: %s", strike, e)
        return None


def _fixed_estimate(averages: np.ndarray, market: MarketState, strike: float, maturity: float, is_call: bool,
                    config: McConfig) -> McEstimate:
    theta = 1.0 if is_call else -1.0
    payoff = np.maximum(theta * (averages - strike), 0.0)
    price, std_error, n_eff = _estimate(payoff, math.exp(-market.r * maturity), config, f"K={strike:.6g}")
    vol = _implied_vol_or_none(price, strike, maturity, is_call, market)
    return McEstimate(price=price, std_error=std_error, implied_vol=vol, n_effective=n_eff)


def _floating_estimate(averages: np.ndarray, terminals: np.ndarray, market: MarketState, kappa: float,
                       maturity: float, is_call: bool, config: McConfig) -> McEstimate:
    theta = 1.0 if is_call else -1.0
    payoff = np.maximum(theta * (kappa * terminals - averages), 0.0)
    price, std_error, n_eff = _estimate(payoff, math.exp(-market.r * maturity), config, f"kappa={kappa:.6g}")
    return McEstimate(price=price, std_error=std_error, implied_vol=None, n_effective=n_eff)


def _check_ladder(values: Sequence[float], sides: Sequence[bool], what: str):
    if len(values) != len(sides):
        raise ValidationError(f"need one side per {what}, got {len(values)} {what}s and {len(sides)} sides")
    bad = [v for v in values if not (v > 0.0)]
    if bad:
        raise ValidationError(f"{what} must be > 0, got {bad}")


def price_fixed(model: ModelSpec, market: MarketState, strike: float, maturity: float, is_call: bool,
                config: McConfig) -> McEstimate:
    """e^{-rT} E[(theta (A - K))^+]."""
    return price_fixed_ladder(model, market, [strike], maturity, [is_call], config)[0]


def price_fixed_ladder(model: ModelSpec, market: MarketState, strikes: Sequence[float], maturity: float,
                       sides: Sequence[bool], config: McConfig) -> List[McEstimate]:
    """Every strike priced from one batch of paths (common random numbers across the ladder)."""
    _check_ladder(strikes, sides, "strike")
    averages, _ = simulate_batch(model, market, maturity, config)
    return [_fixed_estimate(averages, market, k, maturity, c, config) for k, c in zip(strikes, sides)]


def price_floating(model: ModelSpec, market: MarketState, kappa: float, maturity: float, is_call: bool,
                   config: McConfig) -> McEstimate:
    """e^{-rT} E[(theta (kappa S_T - A))^+]."""
    return price_floating_ladder(model, market, [kappa], maturity, [is_call], config)[0]


def price_floating_ladder(model: ModelSpec, market: MarketState, kappas: Sequence[float], maturity: float,
                          sides: Sequence[bool], config: McConfig) -> List[McEstimate]:
    _check_ladder(kappas, sides, "kappa")
    averages, terminals = simulate_batch(model, market, maturity, config)
    return [_floating_estimate(averages, terminals, market, k, maturity, c, config) for k, c in zip(kappas, sides)]


def dump_paths_csv(path: str, averages: np.ndarray, terminals: np.ndarray) -> None:
    if averages.shape != terminals.shape:
        raise ValidationError("averages and terminals must have the same length")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path_id", "A", "S_T"])
        for i, (a, s) in enumerate(zip(averages, terminals)):
            writer.writerow([i, f"{a:.12g}", f"{s:.12g}"])
