#!/usr/bin/env python3
"""
asymptotics.py - Short-maturity series for Asian options under LSV models

Handles:
- Rate function I(x) = i2 x^2 + i3 x^3 + i4 x^4 in log-moneyness x = log(K/S0)
- Equivalent log-normal smile Sigma(x) = sigma_atm + skew x + convexity x^2
- ATM sqrt(T) price law
- Optimal-path expansion g(t) = log S0 + sum x^k g_k(t), h(t) = log V0 + sum x^k h_k(t)
  and the multiplier lambda(x) = sum lambda_k x^k

The path coefficients come from an order-by-order solution of the Hamiltonian
form of the Euler-Lagrange system with exact polynomial arithmetic:

    g' = D11 p + D12 q,   h' = D12 p + D22 q
    p' = -1/2 (p,q) dD/dg (p,q)^T + lambda e^g,   q' = -1/2 (p,q) dD/dh (p,q)^T
    g(0) = h(0) = 0,  p(1) = q(1) = 0,  int_0^1 e^g dt = e^x

with D11 = eta^2 e^h, D12 = rho eta sigma e^(h/2), D22 = sigma^2 (paths measured
from log S0, log V0).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial

from errors import ValidationError
from model_catalog import ExpansionInputs, MarketState

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

SERIES_ORDER = 3
SMILE_WARN_RADIUS = 0.3


# ========== 1) RATE FUNCTION ==========

@dataclass(frozen=True)
class RateSeries:
    i2: float
    i3: float
    i4: float

    def __post_init__(self):
        for name in ("i2", "i3", "i4"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite, got {getattr(self, name)}")
        if self.i2 <= 0.0:
            raise ValidationError(f"i2 must be > 0, got {self.i2}")


def rate_series(inputs: ExpansionInputs) -> RateSeries:
    """Quadratic, cubic and quartic coefficients of the rate function."""
    e0, e1, e2 = inputs.eta
    s0, s1, _ = inputs.sigma
    rho = inputs.rho
    v0 = inputs.v0
    root_v0 = math.sqrt(v0)

    i2 = 3.0 / (2.0 * e0 ** 2 * v0)
    i3 = -3.0 * (3.0 * rho * s0 + (e0 + 6.0 * e1) * root_v0) / (10.0 * e0 ** 3 * v0 * root_v0)

    beta0 = 109.0 * e0 ** 2 + 2664.0 * e1 ** 2 + 36.0 * e0 * (13.0 * e1 - 60.0 * e2)
    beta1 = 18.0 * rho * (-30.0 * rho * s1 + (13.0 * e0 + 118.0 * e1) * root_v0)
    beta2 = 9.0 * (-25.0 + 99.0 * rho ** 2)
    i4 = (beta0 * v0 + beta1 * s0 + beta2 * s0 ** 2) / (1400.0 * e0 ** 4 * v0 ** 2)
    return RateSeries(i2=i2, i3=i3, i4=i4)


def rate_series_local_vol(eta0: float, eta_ratio: float, eta_curvature: float, v0: float = 1.0) -> RateSeries:
    """
    Local-vol rate series written in eta ratios.

    eta_ratio = S0 eta'(S0) / eta0, eta_curvature = S0^2 eta''(S0) / eta0,
    local volatility eta(S) sqrt(v0).
    """
    r, c = eta_ratio, eta_curvature
    scale = 1.0 / (eta0 ** 2 * v0)
    return RateSeries(
        i2=1.5 * scale,
        i3=-0.3 * (1.0 + 6.0 * r) * scale,
        i4=(109.0 / 1400.0 + 333.0 / 175.0 * r ** 2 - 153.0 / 350.0 * r - 27.0 / 35.0 * c) * scale,
    )


def rate_series_rho_pm(sigma: float, v0: float, sign: int) -> RateSeries:
    """SABR rate series at perfect correlation (sign=+1) or anti-correlation (sign=-1)."""
    if sign not in (1, -1):
        raise ValidationError(f"sign must be +1 or -1, got {sign}")
    ratio = sigma / math.sqrt(v0)
    return RateSeries(
        i2=1.5 / v0,
        i3=(-0.3 - sign * 0.9 * ratio) / v0,
        i4=(109.0 / 1400.0 + sign * 117.0 / 700.0 * ratio + 333.0 / 700.0 * ratio ** 2) / v0,
    )


def rate_at(series: RateSeries, x: ArrayLike):
    """Truncated quartic, clamped below at 0."""
    x_arr = np.asarray(x, dtype=float)
    value = x_arr ** 2 * (series.i2 + x_arr * (series.i3 + x_arr * series.i4))
    value = np.maximum(value, 0.0)
    return float(value) if value.ndim == 0 else value


# ========== 2) SMILE ==========

@dataclass(frozen=True)
class SmileQuadratic:
    sigma_atm: float
    skew: float
    convexity: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma_atm) and self.sigma_atm > 0.0):
            raise ValidationError(f"sigma_atm must be > 0, got {self.sigma_atm}")

    def at(self, x: ArrayLike):
        x_arr = np.asarray(x, dtype=float)
        value = self.sigma_atm + x_arr * (self.skew + x_arr * self.convexity)
        return float(value) if value.ndim == 0 else value


def smile_from_rate_series(series: RateSeries) -> SmileQuadratic:
    """Invert Sigma(x) = |x| / sqrt(2 I(x)) to second order in x."""
    i2, i3, i4 = series.i2, series.i3, series.i4
    if i2 <= 0.0:
        raise ValidationError(f"i2 must be > 0, got {i2}")
    sigma_atm = 1.0 / math.sqrt(2.0 * i2)
    a = i3 / i2
    b = i4 / i2
    return SmileQuadratic(
        sigma_atm=sigma_atm,
        skew=sigma_atm * (-0.5 * a),
        convexity=sigma_atm * (0.375 * a * a - 0.5 * b),
    )


def smile_quadratic(inputs: ExpansionInputs) -> SmileQuadratic:
    return smile_from_rate_series(rate_series(inputs))


def sigma_from_rate(x: float, i_value: float) -> float:
    """Equivalent log-normal vol |x| / sqrt(2 I)."""
    if x == 0.0:
        raise ValidationError("x = 0 is the ATM point; use SmileQuadratic.sigma_atm")
    if not (i_value > 0.0):
        raise ValidationError(f"rate value must be > 0, got {i_value}")
    return abs(x) / math.sqrt(2.0 * i_value)


def atm_price_slope(market: MarketState, inputs: ExpansionInputs) -> float:
    """lim C(T)/sqrt(T) = lim P(T)/sqrt(T) at K = S0."""
    return market.s0 * inputs.eta0 * math.sqrt(market.v0) / math.sqrt(6.0 * math.pi)


# ========== 3) OPTIMAL PATHS ==========

@dataclass(frozen=True)
class PathSeries:
    """
    Coefficients of g_k(t), h_k(t) (ascending powers of t) for k = 1..3 and
    the multiplier expansion lambda_1..lambda_3.
    """
    g: Tuple[Tuple[float, ...], ...]
    h: Tuple[Tuple[float, ...], ...]
    lambdas: Tuple[float, ...]
    s0: float
    v0: float

    @property
    def lambda1(self) -> float:
        return self.lambdas[0]

    @property
    def lambda2(self) -> float:
        return self.lambdas[1]

    @property
    def lambda3(self) -> float:
        return self.lambdas[2]

    def g_poly(self, k: int) -> Polynomial:
        return Polynomial(self.g[k - 1])

    def h_poly(self, k: int) -> Polynomial:
        return Polynomial(self.h[k - 1])

    def second_derivative_coefficients(self, k: int, which: str = "g") -> Tuple[float, ...]:
        poly = self.g_poly(k) if which == "g" else self.h_poly(k)
        return tuple(poly.deriv(2).coef)


_Series = List[Polynomial]


def _zero_series() -> _Series:
    return [Polynomial([0.0]) for _ in range(SERIES_ORDER + 1)]


def _const_series(value: float) -> _Series:
    out = _zero_series()
    out[0] = Polynomial([value])
    return out


def _add(*terms: _Series) -> _Series:
    out = _zero_series()
    for term in terms:
        out = [a + b for a, b in zip(out, term)]
    return out


def _scale(series: _Series, c: float) -> _Series:
    return [c * a for a in series]


def _mul(a: _Series, b: _Series) -> _Series:
    out = _zero_series()
    for i in range(SERIES_ORDER + 1):
        for j in range(SERIES_ORDER + 1 - i):
            out[i + j] = out[i + j] + a[i] * b[j]
    return out


def _exp(series: _Series) -> _Series:
    """exp of a series with vanishing order-0 term."""
    out = _const_series(1.0)
    term = _const_series(1.0)
    for n in range(1, SERIES_ORDER + 1):
        term = _scale(_mul(term, series), 1.0 / n)
        out = _add(out, term)
    return out


def _quadratic(c0: float, c1: float, c2: float, series: _Series) -> _Series:
    return _add(_const_series(c0), _scale(series, c1), _scale(_mul(series, series), c2))


def _from_terminal(rate: Polynomial) -> Polynomial:
    """Antiderivative vanishing at t = 1."""
    anti = rate.integ()
    return anti - anti(1.0)


def _unit_integral(poly: Polynomial) -> float:
    return float(poly.integ()(1.0))


def optimal_paths(inputs: ExpansionInputs) -> PathSeries:
    """Third-order expansion of the optimal log-asset / log-variance paths."""
    e0, e1, e2 = inputs.eta
    c0, c1, c2 = inputs.sigma
    rho, s0, v0 = inputs.rho, inputs.s0, inputs.v0
    root_v0 = math.sqrt(v0)

    dg, dh = _zero_series(), _zero_series()
    p, q = _zero_series(), _zero_series()
    lambdas = [0.0] * (SERIES_ORDER + 1)
    # response of p_k to a unit lambda_k
    unit_p = Polynomial([-s0, s0])

    for k in range(1, SERIES_ORDER + 1):
        eta = _quadratic(e0, e1, e2, dg)
        eta_g = _quadratic(e1, 2.0 * e2, 0.0, dg)
        sig = _quadratic(c0, c1, c2, dh)
        sig_h = _quadratic(c1, 2.0 * c2, 0.0, dh)
        exp_h = _exp(dh)
        exp_half_h = _exp(_scale(dh, 0.5))
        exp_g = _exp(dg)

        d11 = _scale(_mul(_mul(eta, eta), exp_h), v0)
        d12 = _scale(_mul(_mul(eta, sig), exp_half_h), rho * root_v0)
        d22 = _mul(sig, sig)
        d11_g = _scale(_mul(_mul(eta, eta_g), exp_h), 2.0 * v0)
        d12_g = _scale(_mul(_mul(eta_g, sig), exp_half_h), rho * root_v0)
        d12_h = _scale(_mul(_mul(eta, _add(sig_h, _scale(sig, 0.5))), exp_half_h), rho * root_v0)
        d22_h = _scale(_mul(sig, sig_h), 2.0)

        pp, pq, qq = _mul(p, p), _mul(p, q), _mul(q, q)
        force_g = _add(_mul(pp, d11_g), _scale(_mul(pq, d12_g), 2.0))
        force_h = _add(_mul(pp, d11), _scale(_mul(pq, d12_h), 2.0), _mul(qq, d22_h))
        pull = _scale(_mul([Polynomial([lam]) for lam in lambdas], exp_g), s0)

        p_base = _from_terminal(-0.5 * force_g[k] + pull[k])
        q_k = _from_terminal(-0.5 * force_h[k])

        g_rate = d11[0] * p_base + d12[0] * q_k
        h_rate = d12[0] * p_base + d22[0] * q_k
        for j in range(1, k):
            g_rate = g_rate + d11[j] * p[k - j] + d12[j] * q[k - j]
            h_rate = h_rate + d12[j] * p[k - j] + d22[j] * q[k - j]
        g_base, h_base = g_rate.integ(), h_rate.integ()
        g_unit, h_unit = (d11[0] * unit_p).integ(), (d12[0] * unit_p).integ()

        # normalization: int_0^1 [exp(dg)]_k dt = 1/k!, with dg_k still zero in exp_g
        target = 1.0 / math.factorial(k)
        lam_k = (target - _unit_integral(exp_g[k]) - _unit_integral(g_base)) / _unit_integral(g_unit)

        lambdas[k] = lam_k
        p[k] = p_base + lam_k * unit_p
        q[k] = q_k
        dg[k] = g_base + lam_k * g_unit
        dh[k] = h_base + lam_k * h_unit

    logger.debug("[PATHS] lambdas=%s", lambdas[1:])
    return PathSeries(
        g=tuple(tuple(float(c) for c in dg[k].coef) for k in range(1, SERIES_ORDER + 1)),
        h=tuple(tuple(float(c) for c in dh[k].coef) for k in range(1, SERIES_ORDER + 1)),
        lambdas=tuple(lambdas[1:]),
        s0=s0,
        v0=v0,
    )


def _check_t(t: ArrayLike) -> np.ndarray:
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0) or not np.all(np.isfinite(t_arr)):
        raise ValidationError("t must lie in [0, 1]")
    return t_arr


def _unbox(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def path_at(series: PathSeries, x: float, t: ArrayLike):
    """(g(t), h(t)) of the truncated series paths at log-moneyness x."""
    t_arr = _check_t(t)
    g = np.full_like(t_arr, math.log(series.s0))
    h = np.full_like(t_arr, math.log(series.v0))
    for k in range(1, SERIES_ORDER + 1):
        g = g + x ** k * series.g_poly(k)(t_arr)
        h = h + x ** k * series.h_poly(k)(t_arr)
    return _unbox(g), _unbox(h)


def path_derivatives(series: PathSeries, x: float, t: ArrayLike):
    """(g', h', g'', h'') of the truncated series paths."""
    t_arr = _check_t(t)
    out = [np.zeros_like(t_arr) for _ in range(4)]
    for k in range(1, SERIES_ORDER + 1):
        scale = x ** k
        g_poly, h_poly = series.g_poly(k), series.h_poly(k)
        out[0] = out[0] + scale * g_poly.deriv(1)(t_arr)
        out[1] = out[1] + scale * h_poly.deriv(1)(t_arr)
        out[2] = out[2] + scale * g_poly.deriv(2)(t_arr)
        out[3] = out[3] + scale * h_poly.deriv(2)(t_arr)
    return tuple(_unbox(v) for v in out)


def multiplier_at(series: PathSeries, x: float) -> float:
    return sum(lam * x ** k for k, lam in enumerate(series.lambdas, start=1))


def rate_series_from_paths(series: PathSeries) -> RateSeries:
    """Rate coefficients from the multiplier expansion, using dI/dK = -lambda."""
    l1, l2, l3 = series.lambdas
    s0 = series.s0
    return RateSeries(
        i2=-s0 * l1 / 2.0,
        i3=-s0 * (l1 + l2) / 3.0,
        i4=-s0 * (l3 + l2 + 0.5 * l1) / 4.0,
    )
