"""Analytic explosion test for one-dimensional diffusions.

Decides whether a diffusion dX = beta(X) dt + sqrt(alpha(X)) dW on (l, r)
reaches a boundary in finite time, via the function

    v(x) = int_c^x s'(y) int_c^y 2 / (alpha(z) s'(z)) dz dy,
    s'(y) = exp(-2 int_c^y beta/alpha dz).

The boundary is reached in finite time (explosion) iff v stays finite as the
truncation approaches it. Truncations walk a geometric schedule (distance
2^-k to a finite endpoint, magnitude 2^k toward an infinite one); v at each
truncation is computed by a fused log-space quadrature whose inner and outer
exponentials share one pass, so enormous scale factors cancel exactly.
Integrals of exp(g) use per-panel exponential interpolation, which is exact
for log-linear integrands and stable where plain trapezoids lose digits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = ["FellerProblem", "FellerReport", "EndpointReport",
           "feller_explosion_test", "truncated_divergence_ladder"]

_LN2 = math.log(2.0)
_DIVERGED = 1e6


@dataclass(frozen=True)
class FellerProblem:
    lower: float
    upper: float
    beta: Callable
    alpha: Callable
    ref_c: Optional[float] = None
    inner_tol: float = 1e-5
    ladder_tol: float = 1e-4
    max_levels: int = 40
    base_nodes: int = 129
    max_nodes: int = 65537

    def reference_point(self) -> float:
        if self.ref_c is not None:
            return float(self.ref_c)
        lo, hi = self.lower, self.upper
        if math.isfinite(lo) and math.isfinite(hi):
            return 0.5 * (lo + hi)
        if math.isfinite(lo):
            return lo + 1.0
        if math.isfinite(hi):
            return hi - 1.0
        return 0.0


@dataclass(frozen=True)
class EndpointReport:
    explodes: Optional[bool]       # None when the ladder did not settle
    v_value: float                 # v at the last truncation examined
    converged: bool                # ladder reached a determinate answer
    levels_used: int
    truncation: float


@dataclass(frozen=True)
class FellerReport:
    left: EndpointReport
    right: EndpointReport

    @property
    def explodes_left(self):
        return self.left.explodes

    @property
    def explodes_right(self):
        return self.right.explodes


def _log_panel_integrals(g: np.ndarray, y: np.ndarray) -> np.ndarray:
    """log of int exp(g) over each panel, exponential interpolation per panel."""
    dy = np.diff(y)
    g0, g1 = g[:-1], g[1:]
    dg = g1 - g0
    with np.errstate(all="ignore"):
        small = np.abs(dg) < 1e-8
        pos = dg >= 0
        # (e^{g1} - e^{g0})/dg, in logs, branch by sign of dg
        out = np.where(pos, g1 + np.log1p(-np.exp(-np.abs(dg))) - np.log(np.abs(dg)),
                       g0 + np.log1p(-np.exp(-np.abs(dg))) - np.log(np.abs(dg)))
        out = np.where(small, 0.5 * (g0 + g1), out)
        # a -inf endpoint defeats the exponential model; plain trapezoid there
        out = np.where(np.isfinite(dg), out, np.logaddexp(g0, g1) - _LN2)
        out = out + np.log(dy)
    return out


def _cumtrapz0(g: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.empty_like(g)
    out[0] = 0.0
    np.cumsum(0.5 * (g[:-1] + g[1:]) * np.diff(y), out=out[1:])
    return out


def _grid(c: float, target: float, boundary: float, m: int):
    """Nodes from c to target in a parametric variable s with exact Jacobians.

    Two geometric pieces meet at the midpoint of [c, eff]: the near piece
    y = c - 1 + e^u resolves power-law structure away from the boundary, the
    far piece y = eff - e^{-s} resolves the boundary layer (eff is the
    boundary, or target + 1 when it is infinite). The junction node is
    duplicated with zero parametric width, so the Jacobian kink never spans
    a panel. Returns (s, y, log_jacobian).
    """
    eff = boundary if math.isfinite(boundary) else target + 1.0
    y_mid = 0.5 * (c + eff)
    if not (c < y_mid < target):
        s = np.linspace(-math.log(eff - c), -math.log(eff - target), m)
        y = eff - np.exp(-s)
        y[0], y[-1] = c, target
        return s, y, -s
    half = (m + 1) // 2
    u = np.linspace(0.0, math.log(y_mid - c + 1.0), half)
    ya = c - 1.0 + np.exp(u)
    ya[0], ya[-1] = c, y_mid
    sb = np.linspace(-math.log(eff - y_mid), -math.log(eff - target), half)
    yb = eff - np.exp(-sb)
    yb[0], yb[-1] = y_mid, target
    s = np.concatenate([u, sb - sb[0] + u[-1]])
    return s, np.concatenate([ya, yb]), np.concatenate([u, -sb])


def _v_on_grid(s: np.ndarray, y: np.ndarray, log_jac: np.ndarray, beta, alpha) -> float:
    """v at the last grid point, all three integrals in the s variable."""
    a = np.broadcast_to(np.asarray(alpha(y), dtype=float), y.shape)
    b = np.broadcast_to(np.asarray(beta(y), dtype=float), y.shape)
    if np.any(a <= 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ArithmeticError("alpha must be positive and coefficients finite on the grid")
    big_b = _cumtrapz0((b / a) * np.exp(log_jac), s)
    log_w = _LN2 - np.log(a) + 2.0 * big_b + log_jac
    panels = _log_panel_integrals(log_w, s)
    log_inner = np.concatenate(([-np.inf], np.logaddexp.accumulate(panels)))
    log_f = log_inner - 2.0 * big_b + log_jac
    log_v = float(np.logaddexp.reduce(_log_panel_integrals(log_f, s)))
    return math.exp(min(log_v, 700.0))


def _v_truncated(c, target, boundary, beta, alpha, tol, base_nodes, max_nodes):
    """v(target) refined by node doubling until the value settles.

    The panel rule is second order, so successive doublings shrink the error
    about fourfold; Richardson extrapolation of the last pair is returned,
    accepted once the extrapolated correction drops below tol.
    """
    m = base_nodes
    prev = None
    while True:
        v = _v_on_grid(*_grid(c, target, boundary, m), beta, alpha)
        if prev is not None:
            v_ext = v + (v - prev) / 3.0
            if abs(v - prev) / 3.0 <= tol * max(1.0, abs(v_ext)):
                return v_ext, True
        if v > 10 * _DIVERGED:
            return v, True
        if m >= max_nodes:
            return v, False
        prev = v
        m = 2 * m - 1


def _one_side(problem: FellerProblem, boundary: float, mirrored: bool) -> EndpointReport:
    c = problem.reference_point()
    beta, alpha = problem.beta, problem.alpha
    if mirrored:
        # reflect x -> 2c - x so the examined boundary sits above c
        raw_b, raw_a = beta, alpha
        beta = lambda y: -np.asarray(raw_b(2 * c - y))
        alpha = lambda y: np.asarray(raw_a(2 * c - y))
        boundary = 2 * c - boundary

    vs = []
    v = math.nan
    target = math.nan
    for k in range(1, problem.max_levels + 1):
        target = boundary - 2.0 ** (-k) if math.isfinite(boundary) else 2.0 ** k
        if target <= c:
            continue
        v, inner_ok = _v_truncated(c, target, boundary, beta, alpha,
                                   problem.inner_tol, problem.base_nodes, problem.max_nodes)
        if not inner_ok:
            return EndpointReport(None, v, False, k, target)
        if v > _DIVERGED:
            return EndpointReport(False, v, True, k, target)
        vs.append(v)
        if len(vs) >= 2 and abs(vs[-1] - vs[-2]) < problem.ladder_tol * max(abs(vs[-1]), 1e-300):
            return EndpointReport(True, v, True, k, target)
    return EndpointReport(None, v, False, problem.max_levels, target)


def feller_explosion_test(problem: FellerProblem) -> FellerReport:
    """Explosion booleans and v values for both endpoints; see module docstring.

    explodes=True at an endpoint means the diffusion reaches it in finite time
    with positive probability (v finite). None with converged=False signals a
    quadrature budget failure, never an exception.
    """
    c = problem.reference_point()
    if not (problem.lower < c < problem.upper):
        raise ValueError(f"reference point {c} outside ({problem.lower}, {problem.upper})")
    right = _one_side(problem, problem.upper, mirrored=False)
    left = _one_side(problem, problem.lower, mirrored=True)
    return FellerReport(left=left, right=right)


def truncated_divergence_ladder(fn: Callable, lower: float, upper: float,
                                singular: str = "upper", max_levels: int = 40,
                                base_nodes: int = 129, max_nodes: int = 65537,
                                inner_tol: float = 1e-5,
                                threshold: float = _DIVERGED):
    """Integrate fn over [lower, upper) under the geometric truncation schedule.

    Returns (diverged, value, level): diverged becomes True at the first
    truncation level whose integral exceeds the threshold. Shares the
    truncation schedule and refinement loop of the explosion test; used for
    checking that a singular integral genuinely blows up.
    """
    if singular != "upper":
        raise NotImplementedError("only upper-end singularities are needed here")
    value = math.nan
    for k in range(1, max_levels + 1):
        target = upper - 2.0 ** (-k)
        if target <= lower:
            continue
        m = base_nodes
        prev = None
        while True:
            s, y, log_jac = _grid(lower, target, upper, m)
            g = np.log(np.maximum(np.broadcast_to(np.asarray(fn(y), dtype=float), y.shape), 1e-300))
            value = math.exp(min(float(np.logaddexp.reduce(_log_panel_integrals(g + log_jac, s))), 700.0))
            if prev is not None and abs(value - prev) <= inner_tol * max(1.0, abs(value)):
                break
            if value > 10 * threshold or m >= max_nodes:
                break
            prev = value
            m = 2 * m - 1
        if value > threshold:
            return True, value, k
    return False, value, max_levels
