#!/usr/bin/env python3
"""
variational_oracle.py - Direct numerical solution of the rate-function problems

Handles:
- Action functional of a discrete (log S, log V) path pair and its
  Euler-Lagrange residuals
- Fixed-strike problem:    min action  s.t.  int_0^1 e^g dt = K
- Floating-strike problem: min action  s.t.  int_0^1 e^g dt = kappa e^{g(1)}
- Perfect (anti)correlation through the effective local vol
  sigma_hat(S) = eta(S) sqrt(F^{-1}(S)), where F maps variance to asset level
- Pure local-vol problem

Discretization: uniform grid of n nodes, per-interval derivatives and midpoint
coefficients (staggered, second order), trapezoid rule for the constraint.
The optimizer works on whitened interval derivatives; the constraint is
enforced by an augmented Lagrangian around L-BFGS-B. Rates from the grid
ladder are Richardson-extrapolated.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import quad, trapezoid
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq, minimize

from asymptotics import multiplier_at, optimal_paths, path_at, path_derivatives, PathSeries
from errors import NumericalError, ValidationError
from model_catalog import ExpansionInputs, MarketState, ModelSpec, expansion_inputs

logger = logging.getLogger(__name__)

DEFAULT_GRIDS = (101, 201, 401)
MAX_LOG_VARIANCE_SHIFT = 50.0


# ========== 1) CONTAINERS ==========

@dataclass(frozen=True)
class DiscretePathPair:
    """
    Log-asset path g and log-variance path h on a uniform grid of [0, 1].

    Exact derivatives may be attached (series paths); otherwise they are
    taken by finite differences where needed.
    """
    g: np.ndarray
    h: np.ndarray
    g_prime: Optional[np.ndarray] = None
    h_prime: Optional[np.ndarray] = None
    g_second: Optional[np.ndarray] = None
    h_second: Optional[np.ndarray] = None

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        h = np.asarray(self.h, dtype=float)
        if g.ndim != 1 or g.shape != h.shape:
            raise ValidationError("g and h must be 1-D arrays of equal length")
        if g.size < 3:
            raise ValidationError(f"need at least 3 nodes, got {g.size}")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise ValidationError("path values must be finite")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "h", h)
        for name in ("g_prime", "h_prime", "g_second", "h_second"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value, dtype=float)
                if value.shape != g.shape:
                    raise ValidationError(f"{name} must match the node count")
                object.__setattr__(self, name, value)

    @property
    def n_nodes(self) -> int:
        return self.g.size

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_nodes)

    @property
    def has_derivatives(self) -> bool:
        return all(getattr(self, n) is not None for n in ("g_prime", "h_prime", "g_second", "h_second"))


@dataclass(frozen=True)
class OracleOptions:
    grids: Tuple[int, ...] = DEFAULT_GRIDS
    constraint_tol: float = 1e-8
    gradient_tol: float = 1e-8
    max_outer: int = 200
    initial_penalty: float = 100.0
    max_penalty: float = 1e8
    inner_maxiter: int = 10000
    homotopy_threshold: float = 0.3
    disagreement_tol: float = 1e-6
    quad_tol: float = 1e-10
    root_tol: float = 1e-12
    table_nodes: int = 401

    def __post_init__(self):
        grids = tuple(int(n) for n in self.grids)
        if not grids or any(n < 3 for n in grids) or list(grids) != sorted(set(grids)):
            raise ValidationError(f"grids must be increasing node counts >= 3, got {self.grids}")
        object.__setattr__(self, "grids", grids)
        if self.constraint_tol <= 0.0 or self.gradient_tol <= 0.0:
            raise ValidationError("tolerances must be > 0")
        if self.max_outer < 1:
            raise ValidationError("max_outer must be >= 1")
        if self.table_nodes < 5:
            raise ValidationError("table_nodes must be >= 5")


@dataclass(frozen=True)
class OracleSolution:
    rate: float
    paths: DiscretePathPair
    constraint_residual: float
    lagrange_lambda: float
    converged: bool
    n_iterations: int
    grid_rates: Tuple[float, ...] = ()
    stationarity: float = float("nan")
    start_disagreement: Optional[float] = None


# ========== 2) FUNCTIONAL AND RESIDUALS ==========

def _check_correlation(rho: float, what: str):
    if abs(rho) >= 1.0:
        raise ValidationError(f"{what} needs |rho| < 1 (got {rho}); use rho_pm_rate")


def _eval_sigma(model: ModelSpec, h: np.ndarray) -> np.ndarray:
    sig = np.asarray(model.sigma(np.exp(h)), dtype=float)
    if np.any(sig == 0.0):
        raise ValidationError("sigma vanishes on the path; the two-dimensional functional is undefined")
    return sig


def lambda_functional(paths: DiscretePathPair, model: ModelSpec, inputs: ExpansionInputs) -> float:
    """
    Trapezoid value of the action

        1/(2(1-rho^2)) int (u^2 - 2 rho u w + w^2) dt,
        u = g' / (eta(e^g) e^{h/2}),  w = h' / sigma(e^h)

    with centered differences inside and one-sided ones at the ends.
    """
    rho = model.rho
    _check_correlation(rho, "lambda_functional")
    if not math.isclose(paths.g[0], math.log(inputs.s0), abs_tol=1e-12):
        raise ValidationError("g[0] must equal log S0")
    if not math.isclose(paths.h[0], math.log(inputs.v0), abs_tol=1e-12):
        raise ValidationError("h[0] must equal log V0")
    dt = 1.0 / (paths.n_nodes - 1)
    g_prime = np.gradient(paths.g, dt, edge_order=2)
    h_prime = np.gradient(paths.h, dt, edge_order=2)
    eta = np.asarray(model.eta(np.exp(paths.g)), dtype=float)
    sig = _eval_sigma(model, paths.h)
    u = g_prime * np.exp(-0.5 * paths.h) / eta
    w = h_prime / sig
    integrand = (u * u - 2.0 * rho * u * w + w * w) / (2.0 * (1.0 - rho * rho))
    return float(trapezoid(integrand, dx=dt))


def _second_difference(y: np.ndarray, dt: float) -> np.ndarray:
    """Second derivative on a uniform grid, second order at every node including the ends."""
    out = np.empty_like(y)
    out[1:-1] = y[2:] - 2.0 * y[1:-1] + y[:-2]
    out[0] = 2.0 * y[0] - 5.0 * y[1] + 4.0 * y[2] - y[3]
    out[-1] = 2.0 * y[-1] - 5.0 * y[-2] + 4.0 * y[-3] - y[-4]
    return out / (dt * dt)


def el_residual(paths: DiscretePathPair, lagrange_lambda: float, model: ModelSpec,
                norm: str = "sup") -> Tuple[float, float]:
    """
    Residuals of

        d/dt L_{g'} - L_g - lambda e^g = 0,   d/dt L_{h'} - L_h = 0

    in the sup norm over the nodes, or their root mean square with norm="rms".
    """
    if norm not in ("sup", "rms"):
        raise ValidationError(f"norm must be 'sup' or 'rms', got '{norm}'")
    rho = model.rho
    _check_correlation(rho, "el_residual")
    g, h = paths.g, paths.h
    if paths.has_derivatives:
        g1, h1, g2, h2 = paths.g_prime, paths.h_prime, paths.g_second, paths.h_second
    else:
        if paths.n_nodes < 4:
            raise ValidationError("finite-difference residuals need at least 4 nodes")
        dt = 1.0 / (paths.n_nodes - 1)
        g1 = np.gradient(g, dt, edge_order=2)
        h1 = np.gradient(h, dt, edge_order=2)
        g2 = _second_difference(g, dt)
        h2 = _second_difference(h, dt)

    s, v = np.exp(g), np.exp(h)
    eta = np.asarray(model.eta(s), dtype=float)
    eta_l = np.asarray(model.eta_slope(s), dtype=float)
    sig = _eval_sigma(model, h)
    sig_l = np.asarray(model.sigma_slope(v), dtype=float)
    inv = 1.0 / (1.0 - rho * rho)

    decay = np.exp(-0.5 * h) / eta
    u = g1 * decay
    w = h1 / sig
    du = g2 * decay - u * (0.5 * h1 + eta_l * g1 / eta)
    dw = h2 / sig - w * sig_l * h1 / sig
    d_decay = -decay * (0.5 * h1 + eta_l * g1 / eta)

    lu = (u - rho * w) * inv
    lw = (w - rho * u) * inv
    p_rate = ((du - rho * dw) * decay + (u - rho * w) * d_decay) * inv
    q_rate = ((dw - rho * du) / sig - (w - rho * u) * sig_l * h1 / sig ** 2) * inv
    l_g = -lu * u * eta_l / eta
    l_h = -0.5 * lu * u - lw * w * sig_l / sig

    r_g = p_rate - l_g - lagrange_lambda * s
    r_h = q_rate - l_h
    if norm == "rms":
        return float(np.sqrt(np.mean(r_g * r_g))), float(np.sqrt(np.mean(r_h * r_h)))
    return float(np.max(np.abs(r_g))), float(np.max(np.abs(r_h)))


def paths_from_series(series: PathSeries, x: float, n_nodes: int) -> DiscretePathPair:
    """Series paths sampled on a uniform grid, with exact derivatives attached."""
    t = np.linspace(0.0, 1.0, n_nodes)
    g, h = path_at(series, x, t)
    g1, h1, g2, h2 = path_derivatives(series, x, t)
    return DiscretePathPair(g=g, h=h, g_prime=g1, h_prime=h1, g_second=g2, h_second=h2)


# ========== 3) DISCRETE OBJECTIVES ==========

def _tails(node: np.ndarray) -> np.ndarray:
    """tails[i] = sum_{j > i} node[j], for the interval index i."""
    return np.cumsum(node[:0:-1])[::-1]


class _PathObjective:
    """Discrete action plus augmented-Lagrangian constraint term."""

    n_blocks = 1

    def __init__(self, n_nodes: int, s0: float, v0: float, floating: bool, target: float, penalty: float):
        self.n = n_nodes - 1
        self.dt = 1.0 / self.n
        self.s0 = s0
        self.g0 = math.log(s0)
        self.h0 = math.log(v0)
        self.floating = floating
        self.target = target
        self.weights = np.ones(n_nodes)
        self.weights[0] = self.weights[-1] = 0.5
        self.nu = 0.0
        self.mu = penalty

    def nodes(self, slope: np.ndarray, start: float) -> np.ndarray:
        return np.concatenate(([start], start + self.dt * np.cumsum(slope)))

    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.dt

    def constraint(self, g: np.ndarray) -> Tuple[float, np.ndarray]:
        e = np.exp(g - self.g0)
        node = self.dt * self.weights * e
        value = float(np.sum(node))
        if self.floating:
            value -= self.target * e[-1]
            node = node.copy()
            node[-1] -= self.target * e[-1]
        else:
            value -= self.target
        return value, node

    def evaluate(self, z: np.ndarray):
        dg, dh = self.slopes(z)
        action, grad_dg, grad_dh, g = self.action(dg, dh)
        c, c_node = self.constraint(g)
        c_dg = self.dt * _tails(c_node)
        return action, c, self.to_z(grad_dg, grad_dh), self.to_z(c_dg, np.zeros_like(c_dg))

    def __call__(self, z: np.ndarray):
        action, c, grad_action, grad_c = self.evaluate(z)
        coef = self.nu + self.mu * c
        return action + self.nu * c + 0.5 * self.mu * c * c, grad_action + coef * grad_c

    # subclasses: slopes, from_slopes, to_z, action, h_path


class _StochasticVolObjective(_PathObjective):
    n_blocks = 2

    def __init__(self, model: ModelSpec, market: MarketState, n_nodes: int, floating: bool, target: float,
                 penalty: float):
        super().__init__(n_nodes, market.s0, market.v0, floating, target, penalty)
        self.model = model
        self.rho = model.rho
        self.rho_bar = math.sqrt(1.0 - self.rho ** 2)
        self.scale_g = float(model.eta(market.s0)) * math.sqrt(market.v0)
        self.scale_h = float(model.sigma(market.v0))
        if self.scale_g <= 0.0 or self.scale_h <= 0.0:
            raise ValidationError("eta(S0) and sigma(V0) must be > 0 for the two-dimensional problem")

    def slopes(self, z):
        a, b = z[:self.n], z[self.n:]
        return self.scale_g * (self.rho_bar * a + self.rho * b), self.scale_h * b

    def from_slopes(self, dg, dh):
        b = dh / self.scale_h
        a = (dg / self.scale_g - self.rho * b) / self.rho_bar
        return np.concatenate((a, b))

    def to_z(self, grad_dg, grad_dh):
        return np.concatenate((self.scale_g * self.rho_bar * grad_dg,
                               self.scale_g * self.rho * grad_dg + self.scale_h * grad_dh))

    def action(self, dg, dh):
        dt, rho = self.dt, self.rho
        g = self.nodes(dg, self.g0)
        h = self.nodes(dh, self.h0)
        gm = 0.5 * (g[:-1] + g[1:])
        hm = 0.5 * (h[:-1] + h[1:])
        s_mid, v_mid = np.exp(gm), np.exp(hm)
        eta = np.asarray(self.model.eta(s_mid), dtype=float)
        eta_l = np.asarray(self.model.eta_slope(s_mid), dtype=float)
        sig = np.asarray(self.model.sigma(v_mid), dtype=float)
        sig_l = np.asarray(self.model.sigma_slope(v_mid), dtype=float)

        inv = 1.0 / (1.0 - rho * rho)
        decay = np.exp(-0.5 * hm) / eta
        u = dg * decay
        w = dh / sig
        lu = (u - rho * w) * inv
        lw = (w - rho * u) * inv
        value = dt * float(np.sum(0.5 * (u * lu + w * lw)))

        mid_g = -lu * u * eta_l / eta
        mid_h = -0.5 * lu * u - lw * w * sig_l / sig
        node_g = np.zeros(self.n + 1)
        node_h = np.zeros(self.n + 1)
        node_g[:-1] += 0.5 * dt * mid_g
        node_g[1:] += 0.5 * dt * mid_g
        node_h[:-1] += 0.5 * dt * mid_h
        node_h[1:] += 0.5 * dt * mid_h

        grad_dg = dt * lu * decay + dt * _tails(node_g)
        grad_dh = dt * lw / sig + dt * _tails(node_h)
        return value, grad_dg, grad_dh, g

    def h_path(self, g, dh):
        return self.nodes(dh, self.h0)


class _LocalVolObjective(_PathObjective):
    """One-dimensional action 1/2 int (g' / vol(e^g))^2 dt."""

    def __init__(self, vol: Callable, vol_slope: Callable, s0: float, v0: float, n_nodes: int, floating: bool,
                 target: float, penalty: float, variance_path: Optional[Callable] = None):
        super().__init__(n_nodes, s0, v0, floating, target, penalty)
        self.vol = vol
        self.vol_slope = vol_slope
        self.scale = float(vol(s0))
        self.variance_path = variance_path
        if self.scale <= 0.0:
            raise ValidationError("local volatility must be > 0 at S0")

    def slopes(self, z):
        return self.scale * z, None

    def from_slopes(self, dg, dh):
        return dg / self.scale

    def to_z(self, grad_dg, grad_dh):
        return self.scale * grad_dg

    def action(self, dg, dh):
        dt = self.dt
        g = self.nodes(dg, self.g0)
        s_mid = np.exp(0.5 * (g[:-1] + g[1:]))
        vol = np.asarray(self.vol(s_mid), dtype=float)
        slope = np.asarray(self.vol_slope(s_mid), dtype=float)
        u = dg / vol
        value = dt * float(np.sum(0.5 * u * u))
        mid_g = -u * u * slope / vol
        node_g = np.zeros(self.n + 1)
        node_g[:-1] += 0.5 * dt * mid_g
        node_g[1:] += 0.5 * dt * mid_g
        return value, dt * u / vol + dt * _tails(node_g), None, g

    def h_path(self, g, dh):
        if self.variance_path is None:
            return np.full_like(g, self.h0)
        return self.variance_path(g)


# ========== 4) AUGMENTED LAGRANGIAN DRIVER ==========

@dataclass
class _GridResult:
    z: np.ndarray
    action: float
    constraint: float
    multiplier: float
    stationarity: float
    converged: bool
    outer_iterations: int


def _minimize(objective: _PathObjective, z0: np.ndarray, nu0: float, options: OracleOptions) -> _GridResult:
    objective.nu = nu0
    objective.mu = options.initial_penalty
    z = z0
    previous = math.inf
    action = c = multiplier = stationarity = math.nan
    converged = False
    outer = 0
    for outer in range(1, options.max_outer + 1):
        res = minimize(objective, z, jac=True, method="L-BFGS-B",
                       options={"maxiter": options.inner_maxiter, "ftol": 1e-16, "gtol": 1e-12, "maxcor": 30})
        z = res.x
        action, c, grad_action, grad_c = objective.evaluate(z)
        multiplier = objective.nu + objective.mu * c
        stationarity = float(np.max(np.abs(grad_action + multiplier * grad_c)))
        if abs(c) <= options.constraint_tol and stationarity <= options.gradient_tol:
            converged = True
            break
        objective.nu = multiplier
        if abs(c) > 0.25 * previous:
            objective.mu = min(2.0 * objective.mu, options.max_penalty)
        previous = abs(c)
    return _GridResult(z=z, action=action, constraint=c, multiplier=multiplier, stationarity=stationarity,
                       converged=converged, outer_iterations=outer)


def _richardson(grids: Tuple[int, ...], rates) -> float:
    if len(rates) < 2:
        return rates[-1]
    ratio = (grids[-1] - 1) / (grids[-2] - 1)
    return rates[-1] + (rates[-1] - rates[-2]) / (ratio * ratio - 1.0)


def _solve_ladder(make_objective: Callable[[int], _PathObjective], start: Callable[[np.ndarray], tuple],
                  nu0: float, options: OracleOptions, label: str) -> OracleSolution:
    """
    Solve on every grid of the ladder, each warm-started from the previous one.

    `start(t_nodes)` returns initial offsets (dg_nodes, dh_nodes or None) from
    (log S0, log V0) for the first grid.
    """
    rates = []
    total_outer = 0
    nu = nu0
    previous = None
    result = objective = None
    for n_nodes in options.grids:
        objective = make_objective(n_nodes)
        if previous is None:
            t_nodes = np.linspace(0.0, 1.0, n_nodes)
            g_off, h_off = start(t_nodes)
            dg = np.diff(g_off) / objective.dt
            dh = None if h_off is None else np.diff(h_off) / objective.dt
        else:
            prev_objective, prev_z = previous
            prev_dg, prev_dh = prev_objective.slopes(prev_z)
            mids = objective.midpoints()
            dg = np.interp(mids, prev_objective.midpoints(), prev_dg)
            dh = None if prev_dh is None else np.interp(mids, prev_objective.midpoints(), prev_dh)
        if objective.n_blocks == 2 and dh is None:
            dh = np.zeros_like(dg)
        result = _minimize(objective, objective.from_slopes(dg, dh), nu, options)
        total_outer += result.outer_iterations
        nu = result.multiplier
        rates.append(result.action)
        previous = (objective, result.z)
        logger.debug("[ORACLE] %s grid=%d action=%.12g C=%.3g stationarity=%.3g outer=%d",
                     label, n_nodes, result.action, result.constraint, result.stationarity,
                     result.outer_iterations)
        if not result.converged:
            logger.warning("[ORACLE] %s did not converge on %d nodes (C=%.3g, stationarity=%.3g)",
                           label, n_nodes, result.constraint, result.stationarity)

    dg, dh = objective.slopes(result.z)
    g = objective.nodes(dg, objective.g0)
    h = objective.h_path(g, dh)
    return OracleSolution(
        rate=max(_richardson(options.grids, rates), 0.0),
        paths=DiscretePathPair(g=g, h=h),
        constraint_residual=result.constraint,
        lagrange_lambda=result.multiplier / objective.s0,
        converged=result.converged,
        n_iterations=total_outer,
        grid_rates=tuple(rates),
        stationarity=result.stationarity,
    )


def _scaled_start(solution: OracleSolution, g0: float, h0: float, factor: float):
    """Initial offsets from a solution at a smaller log-moneyness, scaled up."""
    t_prev = solution.paths.t

    def start(t_nodes):
        g_off = factor * np.interp(t_nodes, t_prev, solution.paths.g - g0)
        h_off = factor * np.interp(t_nodes, t_prev, solution.paths.h - h0)
        return g_off, h_off

    return start


def _with_homotopy(solve_at: Callable, x: float, g0: float, h0: float, options: OracleOptions,
                   label: str) -> OracleSolution:
    """
    For |x| above the homotopy threshold, also solve from the x/2 solution and
    keep the lower local minimum.
    """
    direct = solve_at(x, None, None)
    if abs(x) <= options.homotopy_threshold:
        return direct
    half = _with_homotopy(solve_at, 0.5 * x, g0, h0, options, label)
    continued = solve_at(x, _scaled_start(half, g0, h0, 2.0), 2.0 * half.lagrange_lambda)
    gap = abs(continued.rate - direct.rate)
    if gap > options.disagreement_tol:
        logger.warning("[ORACLE] %s: direct and homotopy starts disagree by %.3g at x=%.4f", label, gap, x)
    best = continued if continued.rate < direct.rate else direct
    return replace(best, start_disagreement=gap)


def _trivial_solution(market: MarketState, options: OracleOptions) -> OracleSolution:
    n = options.grids[-1]
    paths = DiscretePathPair(g=np.full(n, math.log(market.s0)), h=np.full(n, math.log(market.v0)))
    return OracleSolution(rate=0.0, paths=paths, constraint_residual=0.0, lagrange_lambda=0.0,
                          converged=True, n_iterations=0, grid_rates=tuple(0.0 for _ in options.grids),
                          stationarity=0.0)


# ========== 5) PUBLIC SOLVERS ==========

def _local_vol_functions(model: ModelSpec, v0: float):
    root = math.sqrt(v0)

    def vol(s):
        return np.asarray(model.eta(s), dtype=float) * root

    def vol_slope(s):
        return np.asarray(model.eta_slope(s), dtype=float) * root

    return vol, vol_slope


def _solve_local_vol(vol, vol_slope, s0: float, v0: float, x: float, floating: bool, options: OracleOptions,
                     label: str, variance_path=None) -> OracleSolution:
    vol0 = float(vol(s0))
    g0 = math.log(s0)

    def solve_at(x_value, start, lam):
        def make(n_nodes):
            return _LocalVolObjective(vol, vol_slope, s0, v0, n_nodes, floating, math.exp(x_value),
                                      options.initial_penalty, variance_path)

        if start is None:
            if floating:
                def start(t):
                    return -1.5 * x_value * t * t, None
            else:
                def start(t):
                    return x_value * 1.5 * (2.0 * t - t * t), None
        nu0 = -3.0 * x_value / vol0 ** 2 if lam is None else lam * s0
        return _solve_ladder(make, start, nu0, options, label)

    return _with_homotopy(solve_at, x, g0, math.log(v0), options, label)


def solve_fixed(model: ModelSpec, market: MarketState, strike: float,
                options: Optional[OracleOptions] = None) -> OracleSolution:
    """Rate function at strike K by direct minimization, warm-started from the series paths."""
    options = options or OracleOptions()
    if not (strike > 0.0):
        raise ValidationError(f"strike must be > 0, got {strike}")
    if strike == market.s0:
        raise ValidationError("strike equals S0: the rate vanishes at the money, nothing to solve")
    x = math.log(strike / market.s0)
    if model.kind == "local-vol":
        return lv_rate(model, market.s0, strike, v0=market.v0, options=options)
    _check_correlation(model.rho, "solve_fixed")

    series = optimal_paths(expansion_inputs(model, market))
    g0, h0 = math.log(market.s0), math.log(market.v0)
    label = f"fixed x={x:.4f}"

    def solve_at(x_value, start, lam):
        def make(n_nodes):
            return _StochasticVolObjective(model, market, n_nodes, False, math.exp(x_value),
                                           options.initial_penalty)

        if start is None:
            def start(t):
                g, h = path_at(series, x_value, t)
                return g - g0, h - h0
            lam = multiplier_at(series, x_value)
        return _solve_ladder(make, start, lam * market.s0, options, label)

    return _with_homotopy(solve_at, x, g0, h0, options, label)


def solve_floating(model: ModelSpec, market: MarketState, kappa: float,
                   options: Optional[OracleOptions] = None) -> OracleSolution:
    """Floating-strike rate: constraint int e^g dt = kappa e^{g(1)}, g(1) and h(1) free."""
    options = options or OracleOptions()
    if not (kappa > 0.0):
        raise ValidationError(f"kappa must be > 0, got {kappa}")
    if kappa == 1.0:
        raise ValidationError("kappa = 1 is the floating ATM point; the rate vanishes")
    k = math.log(kappa)
    label = f"floating log(kappa)={k:.4f}"
    g0, h0 = math.log(market.s0), math.log(market.v0)

    if model.kind == "local-vol":
        vol, vol_slope = _local_vol_functions(model, market.v0)
        return _solve_local_vol(vol, vol_slope, market.s0, market.v0, k, True, options, label)

    _check_correlation(model.rho, "solve_floating")
    inputs = expansion_inputs(model, market)
    lead = 1.0 / (inputs.eta0 ** 2 * inputs.v0)
    tilt = inputs.rho * inputs.sigma0 / (inputs.eta0 * math.sqrt(inputs.v0))

    def solve_at(k_value, start, lam):
        def make(n_nodes):
            return _StochasticVolObjective(model, market, n_nodes, True, math.exp(k_value),
                                           options.initial_penalty)

        if start is None:
            def start(t):
                g_off = -1.5 * k_value * t * t
                return g_off, tilt * g_off
        nu0 = -3.0 * k_value * lead if lam is None else lam * market.s0
        return _solve_ladder(make, start, nu0, options, label)

    return _with_homotopy(solve_at, k, g0, h0, options, label)


def lv_rate(model: ModelSpec, s0: float, strike: float, v0: float = 1.0,
            options: Optional[OracleOptions] = None) -> OracleSolution:
    """Local-vol rate with volatility eta(S) sqrt(v0); sigma of the model is ignored."""
    options = options or OracleOptions()
    if not (s0 > 0.0 and strike > 0.0 and v0 > 0.0):
        raise ValidationError("s0, strike and v0 must be > 0")
    market = MarketState(s0=s0, v0=v0)
    if strike == s0:
        return _trivial_solution(market, options)
    vol, vol_slope = _local_vol_functions(model, v0)
    x = math.log(strike / s0)
    return _solve_local_vol(vol, vol_slope, s0, v0, x, False, options, f"local-vol x={x:.4f}")


# ========== 6) PERFECT CORRELATION ==========

@dataclass(frozen=True, eq=False)
class EffectiveLocalVol:
    """sigma_hat tabulated on a log(S/S0) grid together with the implied log(V/V0)."""
    log_moneyness: np.ndarray
    vol_values: np.ndarray
    log_variance: np.ndarray
    s0: float
    _vol_spline: CubicSpline = field(init=False, repr=False)
    _variance_spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_vol_spline", CubicSpline(self.log_moneyness, self.vol_values))
        object.__setattr__(self, "_variance_spline", CubicSpline(self.log_moneyness, self.log_variance))

    def _clip(self, s):
        ell = np.log(np.asarray(s, dtype=float) / self.s0)
        return np.clip(ell, self.log_moneyness[0], self.log_moneyness[-1])

    def vol(self, s):
        return self._vol_spline(self._clip(s))

    def vol_slope(self, s):
        return self._vol_spline(self._clip(s), 1)

    def log_variance_at(self, ell):
        return self._variance_spline(np.clip(ell, self.log_moneyness[0], self.log_moneyness[-1]))


def local_vol_from_rho_pm(model: ModelSpec, market: MarketState, sign: int, half_width: float,
                          options: Optional[OracleOptions] = None, required: float = 0.0) -> EffectiveLocalVol:
    """
    Tabulate sigma_hat(S) = eta(S) sqrt(F^{-1}(S)) on |log(S/S0)| <= half_width.

    F^{-1}(S) = v solves  int_{V0}^{v} dy/(sqrt(y) sigma(y)) = sign * int_{S0}^{S} dy/(y eta(y)).
    The table stops where no such v exists; it must still reach `required`
    on the side the path explores.
    """
    options = options or OracleOptions()
    if sign not in (1, -1):
        raise ValidationError(f"sign must be +1 or -1, got {sign}")
    s0, v0 = market.s0, market.v0
    root_v0 = math.sqrt(v0)
    quad_kw = {"epsabs": options.quad_tol, "epsrel": options.quad_tol, "limit": 200}

    def inv_eta(u):
        return 1.0 / float(model.eta(s0 * math.exp(u)))

    def psi_density(m):
        sig = float(model.sigma(v0 * math.exp(m)))
        if sig <= 0.0:
            raise NumericalError(f"sigma vanishes at V={v0 * math.exp(m):.6g}; F map undefined")
        return root_v0 * math.exp(0.5 * m) / sig

    def integrate(fn, a, b):
        value, _ = quad(fn, a, b, **quad_kw)
        return value

    half_nodes = options.table_nodes // 2
    ell_side = np.linspace(0.0, half_width, half_nodes + 1)

    def sweep(direction: float):
        ells, logs = [0.0], [0.0]
        phi, m_prev, psi_prev = 0.0, 0.0, 0.0
        for a, b in zip(ell_side[:-1], ell_side[1:]):
            phi += integrate(inv_eta, direction * a, direction * b)
            target = sign * phi

            def excess(m):
                return psi_prev + integrate(psi_density, m_prev, m) - target

            lo, hi = m_prev - 0.25, m_prev + 0.25
            try:
                while not (excess(lo) <= 0.0 <= excess(hi)):
                    if excess(lo) > 0.0:
                        lo -= 2.0 * (hi - lo)
                    else:
                        hi += 2.0 * (hi - lo)
                    if lo < -MAX_LOG_VARIANCE_SHIFT or hi > MAX_LOG_VARIANCE_SHIFT:
                        raise NumericalError("no variance level matches the asset level")
                m_new = brentq(excess, lo, hi, xtol=options.root_tol, rtol=4.0 * np.finfo(float).eps)
            except (NumericalError, ValueError, OverflowError, ZeroDivisionError):
                break
            psi_prev += integrate(psi_density, m_prev, m_new)
            m_prev = m_new
            ells.append(direction * b)
            logs.append(m_new)
        return ells, logs

    up_ell, up_m = sweep(1.0)
    down_ell, down_m = sweep(-1.0)
    reach_up, reach_down = up_ell[-1], -down_ell[-1]
    if required > 0.0 and reach_up < required:
        raise NumericalError(f"F map construction failed above log-moneyness {reach_up:.4g}")
    if required < 0.0 and reach_down < -required:
        raise NumericalError(f"F map construction failed below log-moneyness {-reach_down:.4g}")
    if len(up_ell) < 3 or len(down_ell) < 3:
        raise NumericalError("F map construction failed next to S0")

    ell = np.array(down_ell[:0:-1] + up_ell)
    m = np.array(down_m[:0:-1] + up_m)
    vol = np.asarray(model.eta(s0 * np.exp(ell)), dtype=float) * root_v0 * np.exp(0.5 * m)
    logger.debug("[ORACLE] sigma_hat table sign=%+d on [%.4f, %.4f], %d nodes", sign, ell[0], ell[-1], ell.size)
    return EffectiveLocalVol(log_moneyness=ell, vol_values=vol, log_variance=m, s0=s0)


def rho_pm_rate(model: ModelSpec, market: MarketState, strike: float, sign: int,
                options: Optional[OracleOptions] = None) -> OracleSolution:
    """Rate at rho = sign through the one-dimensional reduction with sigma_hat."""
    options = options or OracleOptions()
    if sign not in (1, -1):
        raise ValidationError(f"sign must be +1 or -1, got {sign}")
    if not (strike > 0.0):
        raise ValidationError(f"strike must be > 0, got {strike}")
    if strike == market.s0:
        return _trivial_solution(market, options)
    x = math.log(strike / market.s0)
    half_width = max(0.05, 2.5 * abs(x))
    table = local_vol_from_rho_pm(model, market, sign, half_width, options, required=1.6 * x)
    h0 = math.log(market.v0)
    g0 = math.log(market.s0)

    def variance_path(g):
        return h0 + table.log_variance_at(g - g0)

    return _solve_local_vol(table.vol, table.vol_slope, market.s0, market.v0, x, False, options,
                            f"rho={sign:+d} x={x:.4f}", variance_path=variance_path)


def dump_solution_csv(path: str, solution: OracleSolution) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "g", "h"])
        for t, g, h in zip(solution.paths.t, solution.paths.g, solution.paths.h):
            writer.writerow([f"{t:.12g}", f"{g:.12g}", f"{h:.12g}"])
