#!/usr/bin/env python3
"""
run_config.py - Flat key=value run configuration

Handles:
- Parsing `section.key = value` text (blank lines and # comments skipped)
- Locale-tolerant numbers ("0,5" is read as 0.5)
- Per-key validation; every problem is collected into one ConfigurationError
- Builders for ModelSpec, MarketState, McConfig, OracleOptions and the
  request grids used by the CLI commands

Lists are comma-separated. Use ';' as the separator when the items
themselves carry decimal commas ("0,05; 0,1").
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import ConfigurationError, ValidationError
from mc_engine import ASSET_SCHEMES, AVERAGING_RULES, VARIANCE_SCHEMES, McConfig
from model_catalog import (
    MarketState,
    ModelSpec,
    make_heston,
    make_local_vol,
    make_sabr,
    make_tanh,
    tanh_eta,
)
from variational_oracle import DEFAULT_GRIDS, OracleOptions

logger = logging.getLogger(__name__)

SECTIONS = ("model", "market", "request", "mc", "oracle")
MODEL_KINDS = ("sabr", "heston", "tanh", "local-vol")
SIDES = ("call", "put", "both", "otm")

KNOWN_KEYS = {
    "model": ("kind", "sigma", "kappa", "theta", "xi", "f0", "f1", "x0", "s_ref", "eta", "rho"),
    "market": ("s0", "v0", "r", "q"),
    "request": ("x_grid", "strikes", "maturity", "side", "kappas"),
    "mc": ("n_paths", "n_steps", "seed", "asset_scheme", "variance_scheme", "averaging", "antithetic",
           "workers", "block_size", "std_error_warn_ratio", "show_progress"),
    "oracle": ("grids", "constraint_tol", "gradient_tol", "max_outer", "sign"),
}

# Request defaults and limits
DEFAULT_MATURITY = 1.0 / 52.0
MAX_MATURITY = 1.0
DEFAULT_X_GRID = (-0.1, -0.075, -0.05, -0.025, 0.0, 0.025, 0.05, 0.075, 0.1)
MAX_GRID_POINTS = 1000

# MC limits
MIN_N_PATHS = 2
MAX_N_PATHS = 100_000_000
MAX_N_STEPS = 100_000
MAX_WORKERS = 256


@dataclass(frozen=True)
class RunConfig:
    values: Dict[str, str] = field(default_factory=dict)
    source: str = "<string>"

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.values.get(key, default)

    def has(self, key: str) -> bool:
        return key in self.values

    def section(self, name: str) -> Dict[str, str]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}


# ========== 1) PARSING ==========

def _to_float(x) -> Optional[float]:
    if x is None or x == "":
        return None
    try:
        value = float(str(x).strip().replace(",", "."))
    except (TypeError, ValueError):
        return None
    return value if math.isfinite(value) else None


def _split_list(raw: str) -> List[str]:
    separator = ";" if ";" in raw else ","
    return [item.strip() for item in raw.split(separator) if item.strip()]


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    values: Dict[str, str] = {}
    errors = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key=value, got '{raw_line.strip()}'")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            errors.append(f"line {lineno}: key '{key}' needs one of the prefixes {SECTIONS}")
            continue
        if name not in KNOWN_KEYS[section]:
            errors.append(f"line {lineno}: unknown key '{key}'")
            continue
        if key in values:
            errors.append(f"line {lineno}: duplicate key '{key}'")
            continue
        values[key] = value
    if errors:
        raise ConfigurationError(f"{source}: " + "; ".join(errors))
    logger.debug("[CONFIG] %s: %d keys", source, len(values))
    return RunConfig(values=values, source=source)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigurationError(f"cannot read config '{path}': {e}") from e
    return parse_config(text, source=path)


# ========== 2) FIELD VALIDATION ==========
# Each helper returns (value, error_or_None).

def _validate_float(config: RunConfig, key: str, default: Optional[float] = None, required: bool = False,
                    positive: bool = False, lo: Optional[float] = None,
                    hi: Optional[float] = None) -> Tuple[Optional[float], Optional[str]]:
    raw = config.get(key)
    if raw is None or raw == "":
        if required:
            return None, f"{key} is required"
        return default, None
    value = _to_float(raw)
    if value is None:
        return None, f"{key}: '{raw}' is not a finite number"
    if positive and value <= 0.0:
        return None, f"{key} must be > 0, got {value}"
    if lo is not None and value < lo:
        return None, f"{key} must be >= {lo}, got {value}"
    if hi is not None and value > hi:
        return None, f"{key} must be <= {hi}, got {value}"
    return value, None


def _validate_int(config: RunConfig, key: str, default: Optional[int], lo: int,
                  hi: int) -> Tuple[Optional[int], Optional[str]]:
    raw = config.get(key)
    if raw is None or raw == "":
        return default, None
    try:
        value = int(raw.replace("_", ""))
    except ValueError:
        return None, f"{key}: '{raw}' is not an integer"
    if not (lo <= value <= hi):
        return None, f"{key} must be between {lo} and {hi}, got {value}"
    return value, None


def _validate_choice(config: RunConfig, key: str, choices, default: Optional[str],
                     required: bool = False) -> Tuple[Optional[str], Optional[str]]:
    raw = config.get(key)
    if raw is None or raw == "":
        if required:
            return None, f"{key} is required (one of {', '.join(choices)})"
        return default, None
    value = raw.strip().lower()
    if value not in choices:
        return None, f"{key} must be one of {', '.join(choices)}, got '{raw}'"
    return value, None


def _validate_bool(config: RunConfig, key: str, default: bool) -> Tuple[Optional[bool], Optional[str]]:
    raw = config.get(key)
    if raw is None or raw == "":
        return default, None
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True, None
    if value in ("0", "false", "no", "off"):
        return False, None
    return None, f"{key} must be a boolean, got '{raw}'"


def _validate_list(config: RunConfig, key: str) -> Tuple[Optional[List[float]], Optional[str]]:
    raw = config.get(key)
    if raw is None or raw == "":
        return None, None
    items = _split_list(raw)
    values = [_to_float(item) for item in items]
    bad = [item for item, value in zip(items, values) if value is None]
    if bad:
        return None, f"{key}: not finite numbers: {', '.join(bad)}"
    if not values:
        return None, f"{key} is empty"
    if len(values) > MAX_GRID_POINTS:
        return None, f"{key} has {len(values)} entries, at most {MAX_GRID_POINTS} allowed"
    return values, None


def _validate_seed(config: RunConfig, seed_override: Optional[int]) -> Tuple[Optional[int], Optional[str]]:
    if seed_override is not None:
        if not (0 <= seed_override < 2 ** 64):
            return None, f"--seed must be an unsigned 64-bit integer, got {seed_override}"
        return seed_override, None
    raw = config.get("mc.seed")
    if raw is None or raw == "":
        return None, "mc.seed is required (or pass --seed); randomized runs are never wall-clock seeded"
    try:
        value = int(raw)
    except ValueError:
        return None, f"mc.seed: '{raw}' is not an integer"
    if not (0 <= value < 2 ** 64):
        return None, f"mc.seed must be an unsigned 64-bit integer, got {value}"
    return value, None


def _raise_if(errors: List[Optional[str]], what: str):
    problems = [e for e in errors if e]
    if problems:
        raise ConfigurationError(f"invalid {what}: " + "; ".join(problems))


# ========== 3) BUILDERS ==========

def build_market(config: RunConfig) -> MarketState:
    s0, e1 = _validate_float(config, "market.s0", required=True, positive=True)
    v0, e2 = _validate_float(config, "market.v0", required=True, positive=True)
    r, e3 = _validate_float(config, "market.r", default=0.0)
    q, e4 = _validate_float(config, "market.q", default=0.0)
    _raise_if([e1, e2, e3, e4], "market section")
    return MarketState(s0=s0, v0=v0, r=r, q=q)


def _constant_eta(level: float):
    def eta(s):
        return np.full_like(np.asarray(s, dtype=float), level)

    def eta_log_slope(s):
        return np.zeros_like(np.asarray(s, dtype=float))

    return eta, eta_log_slope


def build_model(config: RunConfig, market: Optional[MarketState] = None) -> ModelSpec:
    kind, err = _validate_choice(config, "model.kind", MODEL_KINDS, None, required=True)
    _raise_if([err], "model section")
    rho, err = _validate_float(config, "model.rho", default=0.0, lo=-1.0, hi=1.0)
    _raise_if([err], "model section")
    s_ref_default = market.s0 if market is not None else 1.0

    try:
        if kind == "sabr":
            sigma, err = _validate_float(config, "model.sigma", required=True, positive=True)
            _raise_if([err], "sabr model")
            return make_sabr(sigma, rho)

        if kind == "heston":
            kappa, e1 = _validate_float(config, "model.kappa", required=True, positive=True)
            theta, e2 = _validate_float(config, "model.theta", required=True, positive=True)
            xi, e3 = _validate_float(config, "model.xi", required=True, positive=True)
            _raise_if([e1, e2, e3], "heston model")
            return make_heston(kappa, theta, xi, rho)

        f0, e1 = _validate_float(config, "model.f0", default=1.0)
        f1, e2 = _validate_float(config, "model.f1")
        x0, e3 = _validate_float(config, "model.x0", default=0.0)
        s_ref, e4 = _validate_float(config, "model.s_ref", default=s_ref_default, positive=True)

        if kind == "tanh":
            sigma, e5 = _validate_float(config, "model.sigma", required=True, positive=True)
            if f1 is None and not e2:
                e2 = "model.f1 is required"
            _raise_if([e1, e2, e3, e4, e5], "tanh model")
            return make_tanh(f0, f1, x0, s_ref, sigma, rho)

        if rho != 0.0:
            _raise_if(["model.rho must be 0 for local-vol (no variance noise)"], "local-vol model")
        if f1 is not None:
            _raise_if([e1, e3, e4], "local-vol model")
            eta, slope = tanh_eta(f0, f1, x0, s_ref)
            params = {"f0": f0, "f1": f1, "x0": x0, "s_ref": s_ref}
        else:
            level, e5 = _validate_float(config, "model.eta", default=1.0, positive=True)
            _raise_if([e2, e5], "local-vol model")
            eta, slope = _constant_eta(level)
            params = {"eta": level}
        return make_local_vol(eta, slope, params)
    except ValidationError as e:
        raise ConfigurationError(f"invalid {kind} model: {e}") from e


def build_x_grid(config: RunConfig, market: MarketState) -> List[Tuple[float, float]]:
    """(x, K) pairs from request.x_grid or request.strikes."""
    xs, e1 = _validate_list(config, "request.x_grid")
    strikes, e2 = _validate_list(config, "request.strikes")
    _raise_if([e1, e2], "request section")
    if xs is not None and strikes is not None:
        raise ConfigurationError("give either request.x_grid or request.strikes, not both")
    if strikes is not None:
        bad = [k for k in strikes if k <= 0.0]
        if bad:
            raise ConfigurationError(f"request.strikes must be > 0, got {bad}")
        return [(math.log(k / market.s0), k) for k in strikes]
    xs = list(DEFAULT_X_GRID) if xs is None else xs
    return [(x, market.s0 * math.exp(x)) for x in xs]


def build_kappas(config: RunConfig) -> List[float]:
    kappas, err = _validate_list(config, "request.kappas")
    _raise_if([err], "request section")
    if kappas is None:
        return [1.0]
    bad = [k for k in kappas if k <= 0.0]
    if bad:
        raise ConfigurationError(f"request.kappas must be > 0, got {bad}")
    return kappas


def build_maturity(config: RunConfig) -> float:
    maturity, err = _validate_float(config, "request.maturity", default=DEFAULT_MATURITY, positive=True,
                                    hi=MAX_MATURITY)
    _raise_if([err], "request section")
    return maturity


def build_side(config: RunConfig, default: str) -> str:
    side, err = _validate_choice(config, "request.side", SIDES, default)
    _raise_if([err], "request section")
    return side


def build_mc_config(config: RunConfig, seed_override: Optional[int] = None) -> McConfig:
    seed, e0 = _validate_seed(config, seed_override)
    n_paths, e1 = _validate_int(config, "mc.n_paths", McConfig.n_paths, MIN_N_PATHS, MAX_N_PATHS)
    n_steps, e2 = _validate_int(config, "mc.n_steps", McConfig.n_steps, 1, MAX_N_STEPS)
    asset, e3 = _validate_choice(config, "mc.asset_scheme", ASSET_SCHEMES, McConfig.asset_scheme)
    variance, e4 = _validate_choice(config, "mc.variance_scheme", VARIANCE_SCHEMES, None)
    averaging, e5 = _validate_choice(config, "mc.averaging", AVERAGING_RULES, McConfig.averaging)
    antithetic, e6 = _validate_bool(config, "mc.antithetic", False)
    workers, e7 = _validate_int(config, "mc.workers", 1, 1, MAX_WORKERS)
    block_size, e8 = _validate_int(config, "mc.block_size", McConfig.block_size, 2, MAX_N_PATHS)
    ratio, e9 = _validate_float(config, "mc.std_error_warn_ratio", default=McConfig.std_error_warn_ratio,
                                positive=True)
    progress, e10 = _validate_bool(config, "mc.show_progress", False)
    _raise_if([e0, e1, e2, e3, e4, e5, e6, e7, e8, e9, e10], "mc section")
    try:
        return McConfig(seed=seed, n_paths=n_paths, n_steps=n_steps, asset_scheme=asset,
                        variance_scheme=variance, averaging=averaging, antithetic=antithetic,
                        block_size=block_size, n_workers=workers, show_progress=progress,
                        std_error_warn_ratio=ratio)
    except ValidationError as e:
        raise ConfigurationError(f"invalid mc section: {e}") from e


def build_oracle_options(config: RunConfig) -> OracleOptions:
    grids, e1 = _validate_list(config, "oracle.grids")
    c_tol, e2 = _validate_float(config, "oracle.constraint_tol", default=OracleOptions.constraint_tol,
                                positive=True)
    g_tol, e3 = _validate_float(config, "oracle.gradient_tol", default=OracleOptions.gradient_tol,
                                positive=True)
    max_outer, e4 = _validate_int(config, "oracle.max_outer", OracleOptions.max_outer, 1, 10_000)
    _raise_if([e1, e2, e3, e4], "oracle section")
    if grids is None:
        grids = list(DEFAULT_GRIDS)
    if any(g != int(g) for g in grids):
        raise ConfigurationError(f"oracle.grids must be integers, got {grids}")
    try:
        return OracleOptions(grids=tuple(int(g) for g in grids), constraint_tol=c_tol, gradient_tol=g_tol,
                             max_outer=max_outer)
    except ValidationError as e:
        raise ConfigurationError(f"invalid oracle section: {e}") from e


def build_sign(config: RunConfig) -> int:
    raw = config.get("oracle.sign")
    if raw is None or raw == "":
        raise ConfigurationError("oracle.sign (+1 or -1) is required in rho-pm mode")
    value = _to_float(raw)
    if value not in (1.0, -1.0):
        raise ConfigurationError(f"oracle.sign must be +1 or -1, got '{raw}'")
    return int(value)
