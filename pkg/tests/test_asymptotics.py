"""Tests for the rate-function series, the quadratic smile and the optimal-path expansion."""

import math
from dataclasses import replace

import numpy as np
import pytest

from asymptotics import (
    RateSeries,
    SmileQuadratic,
    atm_price_slope,
    multiplier_at,
    optimal_paths,
    path_at,
    path_derivatives,
    rate_at,
    rate_series,
    rate_series_from_paths,
    rate_series_local_vol,
    rate_series_rho_pm,
    sigma_from_rate,
    smile_from_rate_series,
    smile_quadratic,
)
from errors import ValidationError
from model_catalog import ExpansionInputs, MarketState, expansion_inputs, make_heston, make_sabr, make_tanh


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _inputs(eta0=1.0, eta1=0.0, eta2=0.0, sigma0=0.0, sigma1=0.0, sigma2=0.0, rho=0.0, s0=1.0, v0=0.1):
    return ExpansionInputs(eta0=eta0, eta1=eta1, eta2=eta2, sigma0=sigma0, sigma1=sigma1, sigma2=sigma2,
                           rho=rho, s0=s0, v0=v0)


def _sabr(rho):
    return expansion_inputs(make_sabr(2.0, rho=rho), MarketState(s0=1.0, v0=0.1))


def _heston(rho):
    return expansion_inputs(make_heston(2.0, 0.09, 0.2, rho=rho), MarketState(s0=1.0, v0=0.04))


def _tanh(rho):
    return expansion_inputs(make_tanh(1.0, -0.5, 0.0, 1.0, 2.0, rho=rho), MarketState(s0=1.0, v0=0.1))


def _random_inputs(rng, with_sigma=True):
    return _inputs(
        eta0=rng.uniform(0.3, 2.0),
        eta1=rng.uniform(-0.8, 0.8),
        eta2=rng.uniform(-0.5, 0.5),
        sigma0=rng.uniform(0.1, 2.5) if with_sigma else 0.0,
        sigma1=rng.uniform(-1.0, 1.0) if with_sigma else 0.0,
        sigma2=rng.uniform(-0.5, 0.5) if with_sigma else 0.0,
        rho=rng.uniform(-0.95, 0.95) if with_sigma else 0.0,
        s0=rng.uniform(0.5, 2.0),
        v0=rng.uniform(0.01, 0.3),
    )


SMILE_CASES = [
    # builder, rho, sigma_atm, skew, convexity
    (_sabr, -0.7, 0.182574, -0.224230, 0.085466),
    (_sabr, 0.0, 0.182574, 0.018257, 0.389231),
    (_sabr, 0.7, 0.182574, 0.260745, 0.140891),
    (_heston, -0.7, 0.115470, -0.109697, -0.060526),
    (_heston, 0.0, 0.115470, 0.011547, 0.153383),
    (_heston, 0.7, 0.115470, 0.132791, -0.032813),
    (_tanh, -0.7, 0.182574, -0.279002, 0.088759),
    (_tanh, 0.0, 0.182574, -0.036515, 0.378668),
    (_tanh, 0.7, 0.182574, 0.205972, 0.116472),
]

# Reference table rows (model, rho) -> (sigma_atm, skew) at three decimals
TABLE_ATM_SKEW = {
    ("sabr", -0.7): (0.183, -0.224), ("sabr", 0.0): (0.183, 0.018), ("sabr", 0.7): (0.183, 0.261),
    ("heston", -0.7): (0.115, -0.110), ("heston", 0.0): (0.115, 0.011), ("heston", 0.7): (0.115, 0.133),
    ("tanh", -0.7): (0.183, -0.279), ("tanh", 0.0): (0.183, -0.037), ("tanh", 0.7): (0.183, 0.206),
}


# ---------------------------------------------------------------------------
# Rate series
# ---------------------------------------------------------------------------

class TestRateSeries:
    @pytest.mark.parametrize("rho, i3, i4", [
        (-0.7, 36.844699, 53.833127),
        (0.0, -3.0, -63.507143),
        (0.7, -42.844699, 68.632587),
    ])
    def test_sabr_coefficients(self, rho, i3, i4):
        series = rate_series(_sabr(rho))
        assert series.i2 == pytest.approx(15.0)
        assert series.i3 == pytest.approx(i3, abs=1e-6)
        assert series.i4 == pytest.approx(i4, abs=1e-6)

    @pytest.mark.parametrize("rho, i3, i4", [
        (-0.7, 71.25, 140.84375),
        (0.0, -7.5, -98.5),
        (0.7, -86.25, 170.09375),
    ])
    def test_heston_coefficients(self, rho, i3, i4):
        series = rate_series(_heston(rho))
        assert series.i2 == pytest.approx(37.5)
        assert series.i3 == pytest.approx(i3, rel=1e-12)
        assert series.i4 == pytest.approx(i4, rel=1e-12)

    def test_sabr_printed_formula(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            sigma, v0, rho = rng.uniform(0.1, 3.0), rng.uniform(0.01, 0.5), rng.uniform(-1.0, 1.0)
            series = rate_series(_inputs(sigma0=sigma, rho=rho, v0=v0))
            root = math.sqrt(v0)
            i3 = -3.0 * (3.0 * rho * sigma + root) / (10.0 * v0 * root)
            i4 = (109.0 * v0 + 234.0 * rho * sigma * root + 9.0 * (-25.0 + 99.0 * rho ** 2) * sigma ** 2) / (
                1400.0 * v0 ** 2)
            assert series.i2 == pytest.approx(1.5 / v0, rel=1e-12)
            assert series.i3 == pytest.approx(i3, rel=1e-12, abs=1e-12 * series.i2)
            assert series.i4 == pytest.approx(i4, rel=1e-12, abs=1e-12 * series.i2)

    def test_local_vol_limit(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            inputs = _random_inputs(rng, with_sigma=False)
            ratio = inputs.eta1 / inputs.eta0
            curvature = (2.0 * inputs.eta2 - inputs.eta1) / inputs.eta0
            expected = rate_series_local_vol(inputs.eta0, ratio, curvature, inputs.v0)
            series = rate_series(inputs)
            assert (series.i2, series.i3, series.i4) == pytest.approx((expected.i2, expected.i3, expected.i4),
                                                                      rel=1e-12, abs=1e-12 * expected.i2)

    @pytest.mark.parametrize("sign", [1, -1])
    def test_perfect_correlation_sabr(self, sign):
        rng = np.random.default_rng(13)
        for _ in range(100):
            sigma, v0 = rng.uniform(0.1, 3.0), rng.uniform(0.01, 0.5)
            series = rate_series(_inputs(sigma0=sigma, rho=float(sign), v0=v0))
            expected = rate_series_rho_pm(sigma, v0, sign)
            assert (series.i2, series.i3, series.i4) == pytest.approx((expected.i2, expected.i3, expected.i4),
                                                                      rel=1e-12, abs=1e-12 * expected.i2)

    def test_i3_independent_of_sigma1(self):
        base = _inputs(eta1=0.3, eta2=0.1, sigma0=1.5, sigma1=0.0, rho=-0.4)
        assert rate_series(replace(base, sigma1=0.9)).i3 == rate_series(base).i3

    def test_rejects_non_positive_i2(self):
        with pytest.raises(ValidationError):
            RateSeries(i2=0.0, i3=1.0, i4=1.0)

    def test_rho_pm_rejects_bad_sign(self):
        with pytest.raises(ValidationError):
            rate_series_rho_pm(2.0, 0.1, 0)


class TestRateAt:
    def test_values(self):
        series = rate_series(_sabr(0.0))
        assert rate_at(series, 0.1) == pytest.approx(0.14064928571428573, rel=1e-12)
        assert rate_at(series, -0.1) == pytest.approx(0.14664928571428573, rel=1e-12)
        assert rate_at(series, 0.01) == pytest.approx(0.0014963649285714285, rel=1e-12)

    def test_zero_at_the_money(self):
        assert rate_at(rate_series(_sabr(0.7)), 0.0) == 0.0

    def test_clamped_at_zero(self):
        assert rate_at(RateSeries(i2=1.0, i3=0.0, i4=-1000.0), 0.1) == 0.0

    def test_vectorised(self):
        series = rate_series(_sabr(-0.7))
        xs = np.array([-0.1, 0.0, 0.1])
        out = rate_at(series, xs)
        assert out.shape == (3,)
        assert out[1] == 0.0


# ---------------------------------------------------------------------------
# Smile
# ---------------------------------------------------------------------------

class TestSmile:
    @pytest.mark.parametrize("builder, rho, sigma_atm, skew, convexity", SMILE_CASES)
    def test_coefficients(self, builder, rho, sigma_atm, skew, convexity):
        smile = smile_quadratic(builder(rho))
        assert smile.sigma_atm == pytest.approx(sigma_atm, abs=1e-6)
        assert smile.skew == pytest.approx(skew, abs=1e-6)
        assert smile.convexity == pytest.approx(convexity, abs=1e-6)

    @pytest.mark.parametrize("name, builder", [("sabr", _sabr), ("heston", _heston), ("tanh", _tanh)])
    @pytest.mark.parametrize("rho", [-0.7, 0.0, 0.7])
    def test_reference_table_level_and_skew(self, name, builder, rho):
        smile = smile_quadratic(builder(rho))
        atm, skew = TABLE_ATM_SKEW[(name, rho)]
        assert smile.sigma_atm == pytest.approx(atm, abs=1e-3)
        assert smile.skew == pytest.approx(skew, abs=1e-3)

    def test_black_scholes_relative_coefficients(self):
        for vol in (0.1, 0.2, 0.45):
            smile = smile_quadratic(_inputs(eta0=vol, v0=1.0))
            assert smile.sigma_atm == pytest.approx(vol / math.sqrt(3.0), rel=1e-12)
            assert smile.skew / smile.sigma_atm == pytest.approx(1.0 / 10.0, rel=1e-12)
            assert smile.convexity / smile.sigma_atm == pytest.approx(-23.0 / 2100.0, rel=1e-12)

    def test_sabr_printed_smile(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            sigma, v0, rho = rng.uniform(0.1, 3.0), rng.uniform(0.01, 0.5), rng.uniform(-1.0, 1.0)
            smile = smile_quadratic(_inputs(sigma0=sigma, rho=rho, v0=v0))
            root = math.sqrt(v0)
            atm = root / math.sqrt(3.0)
            skew = atm * (v0 + 3.0 * rho * sigma * root) / (10.0 * v0)
            convexity = atm * (-46.0 * v0 + 144.0 * rho * sigma * root + (225.0 - 324.0 * rho ** 2) * sigma ** 2) / (
                4200.0 * v0)
            assert smile.sigma_atm == pytest.approx(atm, rel=1e-12)
            assert smile.skew == pytest.approx(skew, rel=1e-12, abs=1e-13)
            assert smile.convexity == pytest.approx(convexity, rel=1e-10, abs=1e-11)

    def test_heston_sign_corrected_smile(self):
        rng = np.random.default_rng(15)
        for _ in range(100):
            xi, v0, rho = rng.uniform(0.05, 1.0), rng.uniform(0.01, 0.3), rng.uniform(-1.0, 1.0)
            inputs = expansion_inputs(make_heston(2.0, 0.09, xi, rho=rho), MarketState(s0=1.0, v0=v0))
            smile = smile_quadratic(inputs)
            atm = math.sqrt(v0 / 3.0)
            skew = atm * (v0 + 3.0 * rho * xi) / (10.0 * v0)
            convexity = atm * (-46.0 * v0 ** 2 + 144.0 * rho * xi * v0 + 225.0 * xi ** 2 - 594.0 * rho ** 2 * xi ** 2) / (
                4200.0 * v0 ** 2)
            assert smile.sigma_atm == pytest.approx(atm, rel=1e-12)
            assert smile.skew == pytest.approx(skew, rel=1e-12, abs=1e-13)
            assert smile.convexity == pytest.approx(convexity, rel=1e-10, abs=1e-11)

    def test_sigma_atm_independent_of_rho(self):
        levels = {smile_quadratic(_tanh(rho)).sigma_atm for rho in (-0.7, 0.0, 0.7)}
        assert len(levels) == 1

    def test_evaluation(self):
        smile = smile_quadratic(_heston(0.7))
        assert smile.at(0.1) == pytest.approx(0.1284209826262971, rel=1e-12)
        assert smile_quadratic(_sabr(0.0)).at(0.1) == pytest.approx(0.1882922354552323, rel=1e-12)

    def test_inversion_matches_series_value(self):
        series = rate_series(_sabr(-0.7))
        smile = smile_from_rate_series(series)
        x = 1e-3
        assert sigma_from_rate(x, rate_at(series, x)) == pytest.approx(smile.at(x), rel=1e-6)

    def test_sigma_from_rate(self):
        assert sigma_from_rate(0.1, 0.140565) == pytest.approx(0.1886020477125849, rel=1e-12)
        with pytest.raises(ValidationError):
            sigma_from_rate(0.0, 0.1)

    def test_smile_rejects_non_positive_level(self):
        with pytest.raises(ValidationError):
            SmileQuadratic(sigma_atm=0.0, skew=0.0, convexity=0.0)

    def test_atm_price_slope(self):
        market = MarketState(s0=1.0, v0=0.1)
        assert atm_price_slope(market, _sabr(0.0)) == pytest.approx(0.07283656203947195, rel=1e-12)


# ---------------------------------------------------------------------------
# Optimal paths
# ---------------------------------------------------------------------------

class TestOptimalPaths:
    def test_first_order(self):
        inputs = _inputs(eta0=1.3, sigma0=1.7, rho=0.4, s0=2.0, v0=0.05)
        paths = optimal_paths(inputs)
        t = np.linspace(0.0, 1.0, 11)
        g1 = paths.g_poly(1)(t)
        h1 = paths.h_poly(1)(t)
        assert g1 == pytest.approx(1.5 * (2.0 * t - t * t), abs=1e-12)
        tilt = inputs.rho * inputs.sigma0 / (inputs.eta0 * math.sqrt(inputs.v0))
        assert h1 == pytest.approx(tilt * 1.5 * (2.0 * t - t * t), abs=1e-12)
        assert paths.lambda1 == pytest.approx(-3.0 / (inputs.s0 * inputs.eta0 ** 2 * inputs.v0), rel=1e-12)

    def test_third_order_without_vol_of_vol(self):
        paths = optimal_paths(_inputs(v0=0.1))
        assert paths.lambdas == pytest.approx((-30.0, 39.0, -27.114285714), abs=1e-8)
        coef = paths.second_derivative_coefficients(3)
        expected = (-2.711428571, 14.4, -25.2, 18.0, -4.5)
        assert len(coef) >= len(expected)
        assert coef == pytest.approx(expected + (0.0,) * (len(coef) - len(expected)), abs=1e-8)

    @pytest.mark.parametrize("eta0, eta1, eta2, sigma0, sigma1, sigma2, rho, s0, v0", [
        (1.3, 0.4, 0.2, 1.7, -0.6, 0.3, 0.4, 2.0, 0.05),
        (2.0, 0.0, 0.0, 2.0, 0.0, 0.0, -0.7, 1.0, 0.1),
        (0.8, -0.3, 0.1, 1.1, 0.5, -0.2, 0.6, 1.5, 0.2),
    ])
    def test_second_order_with_vol_of_vol(self, eta0, eta1, eta2, sigma0, sigma1, sigma2, rho, s0, v0):
        paths = optimal_paths(_inputs(eta0, eta1, eta2, sigma0, sigma1, sigma2, rho, s0, v0))
        root_v0 = math.sqrt(v0)
        tilt = rho * sigma0 / root_v0
        lambda2 = (3.0 / (10.0 * eta0 ** 3 * s0 * v0 ** 1.5)
                   * (9.0 * rho * sigma0 + (13.0 * eta0 + 18.0 * eta1) * root_v0))
        g_expected = (
            3.9 + 0.9 / eta0 * (16.0 * eta1 + 8.0 * tilt),
            -9.0 - 9.0 / eta0 * (4.0 * eta1 + 2.0 * tilt),
            4.5 + (18.0 * eta1 + 9.0 * tilt) / eta0,
        )
        bracket = (3.0 * rho * rho - 2.0) * sigma0 + 2.0 * rho * (3.0 * rho * sigma1 + (eta0 + eta1) * root_v0)
        h_expected = (
            0.3 * sigma0 / (eta0 ** 2 * v0) * (3.0 * (8.0 * rho * rho - 5.0) * sigma0
                                               + rho * (30.0 * rho * sigma1 + (13.0 * eta0 + 18.0 * eta1) * root_v0)),
            -4.5 * sigma0 / (eta0 ** 2 * v0) * bracket,
            2.25 * sigma0 / (eta0 ** 2 * v0) * bracket,
        )
        assert paths.lambda2 == pytest.approx(lambda2, rel=1e-10)
        for which, expected in (("g", g_expected), ("h", h_expected)):
            coef = paths.second_derivative_coefficients(2, which)
            padded = expected + (0.0,) * (len(coef) - len(expected))
            assert coef == pytest.approx(padded, rel=1e-10, abs=1e-10)

    def test_structure(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            paths = optimal_paths(_random_inputs(rng))
            factorial = 1.0
            for k in (1, 2, 3):
                g, h = paths.g_poly(k), paths.h_poly(k)
                assert g(0.0) == 0.0 and h(0.0) == 0.0
                scale = max(1.0, float(np.max(np.abs(g.coef))), float(np.max(np.abs(h.coef))))
                assert abs(g.deriv()(1.0)) <= 1e-12 * scale
                assert abs(h.deriv()(1.0)) <= 1e-12 * scale
            g1, g2, g3 = paths.g_poly(1), paths.g_poly(2), paths.g_poly(3)
            integrals = [g1, g2 + g1 * g1 / 2.0, g3 + g1 * g2 + g1 * g1 * g1 / 6.0]
            for k, poly in enumerate(integrals, start=1):
                factorial *= k
                anti = poly.integ()
                tol = 1e-12 * max(1.0, float(np.max(np.abs(poly.coef))))
                assert anti(1.0) - anti(0.0) == pytest.approx(1.0 / factorial, abs=tol)

    def test_rates_from_multiplier_agree_with_series(self):
        rng = np.random.default_rng(22)
        for _ in range(20):
            inputs = _random_inputs(rng)
            expected = rate_series(inputs)
            recovered = rate_series_from_paths(optimal_paths(inputs))
            assert (recovered.i2, recovered.i3, recovered.i4) == pytest.approx(
                (expected.i2, expected.i3, expected.i4), rel=1e-9, abs=1e-9 * expected.i2)

    def test_i4_independent_of_sigma2(self):
        base = _inputs(eta1=0.3, eta2=0.1, sigma0=1.5, sigma1=-0.4, sigma2=0.0, rho=-0.4)
        i4_base = rate_series_from_paths(optimal_paths(base)).i4
        i4_other = rate_series_from_paths(optimal_paths(replace(base, sigma2=0.8))).i4
        assert i4_other == pytest.approx(i4_base, rel=1e-10)

    def test_path_evaluation(self):
        inputs = _sabr(-0.7)
        paths = optimal_paths(inputs)
        g, h = path_at(paths, 0.1, 0.0)
        assert g == pytest.approx(0.0)
        assert h == pytest.approx(math.log(0.1))
        g1, h1, g2, h2 = path_derivatives(paths, 0.1, 1.0)
        assert g1 == pytest.approx(0.0, abs=1e-12)
        assert h1 == pytest.approx(0.0, abs=1e-12)

    def test_path_time_outside_unit_interval(self):
        paths = optimal_paths(_sabr(0.0))
        with pytest.raises(ValidationError):
            path_at(paths, 0.1, 1.5)

    def test_multiplier(self):
        paths = optimal_paths(_sabr(0.0))
        assert multiplier_at(paths, 0.0) == 0.0
        assert multiplier_at(paths, 0.01) == pytest.approx(
            0.01 * paths.lambda1 + 1e-4 * paths.lambda2 + 1e-6 * paths.lambda3, rel=1e-12)
