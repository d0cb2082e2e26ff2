#!/usr/bin/env python3
"""
blackscholes.py - Black-Scholes layer for Asian options

Handles:
- Forward of the continuous average, F = S0 (e^{(r-q)T} - 1) / ((r-q) T)
- Call / put on a forward, vega
- Implied vol inversion (bisection then safeguarded Newton, brentq fallback)
- Pricing an Asian option from the quadratic equivalent-vol smile
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

from scipy.optimize import brentq
from scipy.special import erfc

from asymptotics import SmileQuadratic
from errors import ArbitrageBoundsError, NumericalError, ValidationError
from model_catalog import MarketState

logger = logging.getLogger(__name__)

VOL_LOWER = 1e-6
VOL_UPPER = 5.0
BISECTION_WIDTH = 1e-3
PRICE_TOLERANCE = 1e-10
MAX_NEWTON_STEPS = 50
SIGMA_FLOOR = 1e-6
CARRY_EPS = 1e-12


@dataclass(frozen=True)
class OptionQuote:
    strike: float
    maturity: float
    is_call: bool
    price: float
    implied_vol: Optional[float] = None
    vol_floored: bool = False

    def __post_init__(self):
        if not (self.strike > 0.0 and math.isfinite(self.strike)):
            raise ValidationError(f"strike must be > 0, got {self.strike}")
        if not (self.maturity > 0.0 and math.isfinite(self.maturity)):
            raise ValidationError(f"maturity must be > 0, got {self.maturity}")
        if not (self.price >= 0.0 and math.isfinite(self.price)):
            raise ValidationError(f"price must be >= 0, got {self.price}")

    @property
    def side(self) -> str:
        return "call" if self.is_call else "put"


def norm_cdf(z: float) -> float:
    """Standard normal CDF through erfc, accurate in both tails."""
    return 0.5 * erfc(-z / math.sqrt(2.0))


def _norm_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def forward_price(market: MarketState, maturity: float) -> float:
    """Forward of the time average (1/T) int_0^T S_t dt."""
    if not (maturity > 0.0):
        raise ValidationError(f"maturity must be > 0, got {maturity}")
    carry_t = market.carry * maturity
    if abs(carry_t) < CARRY_EPS:
        return market.s0
    return market.s0 * math.expm1(carry_t) / carry_t


def _check_inputs(strike: float, maturity: float, vol: float, forward: float):
    if not (strike > 0.0):
        raise ValidationError(f"strike must be > 0, got {strike}")
    if not (maturity > 0.0):
        raise ValidationError(f"maturity must be > 0, got {maturity}")
    if not (forward > 0.0):
        raise ValidationError(f"forward must be > 0, got {forward}")
    if not (vol >= 0.0):
        raise ValidationError(f"vol must be >= 0, got {vol}")


def _d1_d2(strike, maturity, vol, forward):
    total = vol * math.sqrt(maturity)
    d1 = (math.log(forward / strike) + 0.5 * total * total) / total
    return d1, d1 - total


def bs_call(strike: float, maturity: float, vol: float, forward: float, r: float) -> float:
    _check_inputs(strike, maturity, vol, forward)
    discount = math.exp(-r * maturity)
    if vol == 0.0:
        return discount * max(forward - strike, 0.0)
    d1, d2 = _d1_d2(strike, maturity, vol, forward)
    return discount * (forward * norm_cdf(d1) - strike * norm_cdf(d2))


def bs_put(strike: float, maturity: float, vol: float, forward: float, r: float) -> float:
    _check_inputs(strike, maturity, vol, forward)
    discount = math.exp(-r * maturity)
    if vol == 0.0:
        return discount * max(strike - forward, 0.0)
    d1, d2 = _d1_d2(strike, maturity, vol, forward)
    return discount * (strike * norm_cdf(-d2) - forward * norm_cdf(-d1))


def bs_price(strike: float, maturity: float, vol: float, forward: float, r: float, is_call: bool) -> float:
    if is_call:
        return bs_call(strike, maturity, vol, forward, r)
    return bs_put(strike, maturity, vol, forward, r)


def bs_vega(strike: float, maturity: float, vol: float, forward: float, r: float) -> float:
    _check_inputs(strike, maturity, vol, forward)
    if vol == 0.0:
        return 0.0
    d1, _ = _d1_d2(strike, maturity, vol, forward)
    return math.exp(-r * maturity) * forward * _norm_pdf(d1) * math.sqrt(maturity)


def price_bounds(strike: float, maturity: float, forward: float, r: float, is_call: bool):
    discount = math.exp(-r * maturity)
    if is_call:
        return discount * max(forward - strike, 0.0), discount * forward
    return discount * max(strike - forward, 0.0), discount * strike


def implied_vol(quote: OptionQuote, forward: float, r: float) -> float:
    """
    Vol reproducing quote.price.

    Raises ArbitrageBoundsError when the price is not strictly inside the
    no-arbitrage bounds and NumericalError when it lies outside the vol
    bracket [VOL_LOWER, VOL_UPPER].
    """
    strike, maturity, is_call = quote.strike, quote.maturity, quote.is_call
    lower, upper = price_bounds(strike, maturity, forward, r, is_call)
    target = quote.price
    if not (lower < target < upper):
        raise ArbitrageBoundsError(
            f"{quote.side} price {target:.12g} outside ({lower:.12g}, {upper:.12g}) at K={strike}, T={maturity}"
        )

    def error(vol):
        return bs_price(strike, maturity, vol, forward, r, is_call) - target

    lo, hi = VOL_LOWER, VOL_UPPER
    err_lo, err_hi = error(lo), error(hi)
    if err_lo > 0.0 or err_hi < 0.0:
        raise NumericalError(f"price {target:.12g} not attained for vol in [{lo}, {hi}]")
    if err_lo == 0.0:
        return lo

    while hi - lo > BISECTION_WIDTH:
        mid = 0.5 * (lo + hi)
        if error(mid) > 0.0:
            hi = mid
        else:
            lo = mid

    vol = 0.5 * (lo + hi)
    for _ in range(MAX_NEWTON_STEPS):
        err = error(vol)
        if abs(err) <= PRICE_TOLERANCE:
            return vol
        if err > 0.0:
            hi = vol
        else:
            lo = vol
        vega = bs_vega(strike, maturity, vol, forward, r)
        step = err / vega if vega > 0.0 else math.inf
        candidate = vol - step
        if not (lo < candidate < hi):
            break
        vol = candidate

    logger.debug("[BS] Newton left the bracket at K=%s; falling back to brentq", strike)
    try:
        return brentq(error, lo, hi, xtol=1e-15, rtol=4.0 * 2.220446049250313e-16, maxiter=200)
    except ValueError as e:
        raise NumericalError(f"implied vol solve failed at K={strike}: {e}") from e


def asian_price(smile: SmileQuadratic, market: MarketState, strike: float, maturity: float,
                is_call: bool) -> OptionQuote:
    """Price from the quadratic smile fed to Black-Scholes with the Asian forward."""
    if not (strike > 0.0):
        raise ValidationError(f"strike must be > 0, got {strike}")
    if not (maturity > 0.0):
        raise ValidationError(f"maturity must be > 0, got {maturity}")
    x = math.log(strike / market.s0)
    vol = smile.at(x)
    floored = vol <= SIGMA_FLOOR
    if floored:
        logger.warning("[BS] quadratic smile %.6g at x=%.4f floored to %g", vol, x, SIGMA_FLOOR)
        vol = SIGMA_FLOOR
    forward = forward_price(market, maturity)
    price = bs_price(strike, maturity, vol, forward, market.r, is_call)
    return OptionQuote(strike=strike, maturity=maturity, is_call=is_call, price=price,
                       implied_vol=vol, vol_floored=floored)
