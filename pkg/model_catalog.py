#!/usr/bin/env python3
"""
model_catalog.py - Local-stochastic volatility models and series inputs

Dynamics:
    dS/S = (r - q) dt + eta(S) sqrt(V) dB
    dV/V = mu(V) dt + sigma(V) dZ,      d<B, Z> = rho dt

Handles:
- ModelSpec / MarketState / ExpansionInputs containers
- Built-in SABR, Heston and Tanh models, local-vol and generic constructors
- Extraction of (eta0, eta1, eta2, sigma0, sigma1, sigma2): closed forms for
  the built-in kinds, central finite differences in the log variable otherwise
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from errors import ModelEvaluationError, NumericalError, ValidationError

logger = logging.getLogger(__name__)

ScalarFn = Callable[[np.ndarray], np.ndarray]

MODEL_KINDS = ("generic", "sabr", "heston", "tanh", "local-vol")

# Finite-difference step in log(level): h = max(FD_MIN_STEP, FD_REL_STEP * |log level|)
FD_MIN_STEP = 1e-4
FD_REL_STEP = 1e-4


def _as_array(z) -> np.ndarray:
    return np.asarray(z, dtype=float)


def _constant(value: float) -> ScalarFn:
    def fn(z):
        return np.full_like(_as_array(z), float(value))
    return fn


def _fd_step(log_level):
    return np.maximum(FD_MIN_STEP, FD_REL_STEP * np.abs(log_level))


def _log_central_difference(fn: ScalarFn, level) -> np.ndarray:
    """d fn / d log(level), central 3-point rule."""
    level = _as_array(level)
    log_level = np.log(level)
    h = _fd_step(log_level)
    up = _as_array(fn(np.exp(log_level + h)))
    down = _as_array(fn(np.exp(log_level - h)))
    return (up - down) / (2.0 * h)


def _check_positive(name: str, value: float) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a real number, got {value!r}")
    if not math.isfinite(value) or value <= 0.0:
        raise ValidationError(f"{name} must be > 0, got {value}")
    return value


def _check_rho(rho: float) -> float:
    try:
        rho = float(rho)
    except (TypeError, ValueError):
        raise ValidationError(f"rho must be a real number, got {rho!r}")
    if not math.isfinite(rho) or abs(rho) > 1.0:
        raise ValidationError(f"rho must lie in [-1, 1], got {rho}")
    return rho


# ========== 1) CONTAINERS ==========

@dataclass(frozen=True)
class ModelSpec:
    """
    An LSV model: eta(S), sigma(V), mu(V) and the correlation rho.

    The optional slope callables return d eta / d log S and d sigma / d log V;
    when absent they are obtained by central differences. variance_drift and
    variance_diffusion are the absolute coefficients V*mu(V) and V*sigma(V),
    supplied by models whose relative coefficients are singular at V = 0
    (Heston).
    """
    eta: ScalarFn
    sigma: ScalarFn
    mu: ScalarFn
    rho: float = 0.0
    kind: str = "generic"
    params: Dict[str, float] = field(default_factory=dict)
    eta_log_slope: Optional[ScalarFn] = None
    sigma_log_slope: Optional[ScalarFn] = None
    variance_drift: Optional[ScalarFn] = None
    variance_diffusion: Optional[ScalarFn] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValidationError(f"Unknown model kind '{self.kind}'. Expected one of {MODEL_KINDS}")
        object.__setattr__(self, "rho", _check_rho(self.rho))
        if self.kind == "local-vol" and self.rho != 0.0:
            raise ValidationError("local-vol models carry no variance noise; rho must be 0")

    def with_rho(self, rho: float) -> "ModelSpec":
        return replace(self, rho=rho)

    @property
    def has_constant_sigma(self) -> bool:
        return self.kind in ("sabr", "tanh", "local-vol") or bool(self.params.get("constant_sigma"))

    @property
    def has_zero_drift(self) -> bool:
        return self.kind in ("sabr", "tanh", "local-vol") or bool(self.params.get("zero_drift"))

    def eta_slope(self, s) -> np.ndarray:
        """S * eta'(S), i.e. d eta / d log S."""
        if self.eta_log_slope is not None:
            return _as_array(self.eta_log_slope(s))
        return _log_central_difference(self.eta, s)

    def sigma_slope(self, v) -> np.ndarray:
        """V * sigma'(V), i.e. d sigma / d log V."""
        if self.sigma_log_slope is not None:
            return _as_array(self.sigma_log_slope(v))
        return _log_central_difference(self.sigma, v)

    def drift_of_variance(self, v) -> np.ndarray:
        """V * mu(V); zero at V = 0."""
        v = _as_array(v)
        if self.variance_drift is not None:
            return _as_array(self.variance_drift(v))
        safe = np.where(v > 0.0, v, 1.0)
        return np.where(v > 0.0, v * _as_array(self.mu(safe)), 0.0)

    def diffusion_of_variance(self, v) -> np.ndarray:
        """V * sigma(V); zero at V = 0."""
        v = _as_array(v)
        if self.variance_diffusion is not None:
            return _as_array(self.variance_diffusion(v))
        safe = np.where(v > 0.0, v, 1.0)
        return np.where(v > 0.0, v * _as_array(self.sigma(safe)), 0.0)


@dataclass(frozen=True)
class MarketState:
    s0: float
    v0: float
    r: float = 0.0
    q: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "s0", _check_positive("s0", self.s0))
        object.__setattr__(self, "v0", _check_positive("v0", self.v0))
        for name in ("r", "q"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)

    @property
    def carry(self) -> float:
        return self.r - self.q


@dataclass(frozen=True)
class ExpansionInputs:
    """Log-expansion coefficients of eta around S0 and of sigma around V0."""
    eta0: float
    eta1: float
    eta2: float
    sigma0: float
    sigma1: float
    sigma2: float
    rho: float
    s0: float
    v0: float

    def __post_init__(self):
        for name in ("eta0", "eta1", "eta2", "sigma0", "sigma1", "sigma2", "s0", "v0"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        _check_positive("eta0", self.eta0)
        _check_positive("s0", self.s0)
        _check_positive("v0", self.v0)
        object.__setattr__(self, "rho", _check_rho(self.rho))

    @property
    def eta(self) -> Tuple[float, float, float]:
        return self.eta0, self.eta1, self.eta2

    @property
    def sigma(self) -> Tuple[float, float, float]:
        return self.sigma0, self.sigma1, self.sigma2


# ========== 2) BUILT-IN MODELS ==========

def make_sabr(sigma_const: float, rho: float = 0.0) -> ModelSpec:
    """Log-normal SABR: eta = 1, sigma = const, mu = 0."""
    sigma_const = _check_positive("sigma_const", sigma_const)
    return ModelSpec(
        eta=_constant(1.0),
        sigma=_constant(sigma_const),
        mu=_constant(0.0),
        rho=rho,
        kind="sabr",
        params={"sigma": sigma_const},
        eta_log_slope=_constant(0.0),
        sigma_log_slope=_constant(0.0),
        variance_drift=_constant(0.0),
        variance_diffusion=lambda v: sigma_const * np.maximum(_as_array(v), 0.0),
    )


def make_heston(kappa: float, theta: float, xi: float, rho: float = 0.0) -> ModelSpec:
    """Heston in LSV form: sigma(v) = xi / sqrt(v), mu(v) = kappa (theta - v) / v."""
    kappa = _check_positive("kappa", kappa)
    theta = _check_positive("theta", theta)
    xi = _check_positive("xi", xi)

    def sigma(v):
        return xi / np.sqrt(_as_array(v))

    def mu(v):
        v = _as_array(v)
        return kappa * (theta - v) / v

    return ModelSpec(
        eta=_constant(1.0),
        sigma=sigma,
        mu=mu,
        rho=rho,
        kind="heston",
        params={"kappa": kappa, "theta": theta, "xi": xi},
        eta_log_slope=_constant(0.0),
        sigma_log_slope=lambda v: -0.5 * sigma(v),
        variance_drift=lambda v: kappa * (theta - _as_array(v)),
        variance_diffusion=lambda v: xi * np.sqrt(np.maximum(_as_array(v), 0.0)),
    )


def tanh_eta(f0: float, f1: float, x0: float, s_ref: float) -> Tuple[ScalarFn, ScalarFn]:
    """eta(S) = f0 + f1 tanh(log(S/s_ref) - x0) and its log-slope."""
    s_ref = _check_positive("s0", s_ref)
    f0, f1, x0 = float(f0), float(f1), float(x0)
    if not all(math.isfinite(v) for v in (f0, f1, x0)):
        raise ValidationError("tanh parameters must be finite")
    if f0 - abs(f1) <= 0.0:
        raise ValidationError(f"eta must stay positive on (0, inf): need f0 - |f1| > 0, got f0={f0}, f1={f1}")

    def eta(s):
        return f0 + f1 * np.tanh(np.log(_as_array(s) / s_ref) - x0)

    def eta_log_slope(s):
        return f1 / np.cosh(np.log(_as_array(s) / s_ref) - x0) ** 2

    return eta, eta_log_slope


def make_tanh(f0: float, f1: float, x0: float, s0: float, sigma_const: float, rho: float = 0.0) -> ModelSpec:
    """Tanh local vol times log-normal variance (constant sigma, zero drift)."""
    sigma_const = _check_positive("sigma_const", sigma_const)
    eta, eta_log_slope = tanh_eta(f0, f1, x0, s0)
    return ModelSpec(
        eta=eta,
        sigma=_constant(sigma_const),
        mu=_constant(0.0),
        rho=rho,
        kind="tanh",
        params={"f0": float(f0), "f1": float(f1), "x0": float(x0), "s_ref": float(s0), "sigma": sigma_const},
        eta_log_slope=eta_log_slope,
        sigma_log_slope=_constant(0.0),
        variance_drift=_constant(0.0),
        variance_diffusion=lambda v: sigma_const * np.maximum(_as_array(v), 0.0),
    )


def make_local_vol(eta: ScalarFn, eta_log_slope: Optional[ScalarFn] = None,
                   params: Optional[Dict[str, float]] = None) -> ModelSpec:
    """Pure local vol: the variance is frozen at V0 (sigma = mu = 0)."""
    return ModelSpec(
        eta=eta,
        sigma=_constant(0.0),
        mu=_constant(0.0),
        rho=0.0,
        kind="local-vol",
        params=dict(params or {}),
        eta_log_slope=eta_log_slope,
        sigma_log_slope=_constant(0.0),
        variance_drift=_constant(0.0),
        variance_diffusion=_constant(0.0),
    )


def make_generic(eta: ScalarFn, sigma: ScalarFn, mu: ScalarFn, rho: float = 0.0,
                 eta_log_slope: Optional[ScalarFn] = None,
                 sigma_log_slope: Optional[ScalarFn] = None,
                 params: Optional[Dict[str, float]] = None) -> ModelSpec:
    """User-defined model; series inputs come from finite differences."""
    return ModelSpec(
        eta=eta,
        sigma=sigma,
        mu=mu,
        rho=rho,
        kind="generic",
        params=dict(params or {}),
        eta_log_slope=eta_log_slope,
        sigma_log_slope=sigma_log_slope,
    )


# ========== 3) SERIES INPUTS ==========

def _evaluate(fn: ScalarFn, level: float, label: str) -> float:
    try:
        value = float(np.asarray(fn(np.asarray(level, dtype=float)), dtype=float))
    except Exception as e:
        raise ModelEvaluationError(f"{label} failed at {level}: {e}") from e
    if not math.isfinite(value):
        raise ModelEvaluationError(f"{label} is not finite at {level}")
    return value


def log_taylor_coefficients(fn: ScalarFn, level: float, label: str = "model function") -> Tuple[float, float, float]:
    """
    (f, df/dl, 1/2 d2f/dl2) at l = log(level) by central differences.

    In the original variable these are f(L), L f'(L) and
    1/2 L f'(L) + 1/2 L^2 f''(L).
    """
    center = math.log(level)
    h = float(_fd_step(center))
    if center + h == center or center - h == center:
        raise NumericalError(f"finite-difference step underflow for {label} at level {level}")
    f_mid = _evaluate(fn, level, label)
    f_up = _evaluate(fn, math.exp(center + h), label)
    f_down = _evaluate(fn, math.exp(center - h), label)
    first = (f_up - f_down) / (2.0 * h)
    second = (f_up - 2.0 * f_mid + f_down) / (h * h)
    return f_mid, first, 0.5 * second


def expansion_inputs(model: ModelSpec, market: MarketState) -> ExpansionInputs:
    """
    Series inputs of `model` at (S0, V0).

    Closed forms for sabr / heston / tanh, finite differences for generic
    models and for the eta part of local-vol models.
    """
    kind = model.kind
    p = model.params
    s0, v0 = market.s0, market.v0

    if kind == "sabr":
        eta = (1.0, 0.0, 0.0)
        sig = (p["sigma"], 0.0, 0.0)
    elif kind == "heston":
        root_v0 = math.sqrt(v0)
        xi = p["xi"]
        eta = (1.0, 0.0, 0.0)
        sig = (xi / root_v0, -0.5 * xi / root_v0, 0.125 * xi / root_v0)
    elif kind == "tanh":
        # expansion point shifted when the market spot differs from the model's reference level
        shift = p["x0"] - math.log(s0 / p["s_ref"])
        th = math.tanh(shift)
        sech2 = 1.0 / math.cosh(shift) ** 2
        eta = (p["f0"] - p["f1"] * th, p["f1"] * sech2, p["f1"] * sech2 * th)
        sig = (p["sigma"], 0.0, 0.0)
    elif kind == "local-vol":
        eta = log_taylor_coefficients(model.eta, s0, "eta")
        sig = (0.0, 0.0, 0.0)
    else:
        eta = log_taylor_coefficients(model.eta, s0, "eta")
        sig = log_taylor_coefficients(model.sigma, v0, "sigma")

    if eta[0] <= 0.0:
        raise ValidationError(f"eta(S0) must be > 0, got {eta[0]}")
    if sig[0] < 0.0:
        raise ValidationError(f"sigma(V0) must be >= 0, got {sig[0]}")

    logger.debug("[MODEL] %s inputs eta=%s sigma=%s rho=%s", kind, eta, sig, model.rho)
    return ExpansionInputs(
        eta0=eta[0], eta1=eta[1], eta2=eta[2],
        sigma0=sig[0], sigma1=sig[1], sigma2=sig[2],
        rho=model.rho, s0=s0, v0=v0,
    )
