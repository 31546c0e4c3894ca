"""Stochastic exponential accumulation along a simulated path.

Z = exp(M - qv/2) where M integrates mu against the realized martingale part
of the path increments and qv integrates the rate mu' a mu. Everything is
carried in log space; Z is materialized on demand. Once a path's lifetime or
explosion time is reached the exponential freezes at its limit, which is 0
exactly when the quadratic variation diverged there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ExponentialAccumulator", "accumulate_increment", "z_value", "pathwise_qv"]

# exp underflows to 0 below roughly -745; that is fine, never an error
_LOG_FLOOR = -745.0


@dataclass
class ExponentialAccumulator:
    m: float = 0.0
    qv: float = 0.0
    frozen: bool = False
    frozen_by_explosion: bool = False

    @property
    def log_z(self) -> float:
        return self.m - 0.5 * self.qv

    def freeze(self, by_explosion: bool) -> None:
        self.frozen = True
        self.frozen_by_explosion = by_explosion


def accumulate_increment(acc: ExponentialAccumulator, sample, dx, h: float) -> ExponentialAccumulator:
    """Advance by one grid step using the step's realized increment dx.

    M += mu . (dx - b h); qv += (mu' a mu) h. The realized dx is the one the
    engine produced for this step, so M is the discrete integral against the
    martingale part of the same path, not an independent approximation.
    """
    if acc.frozen:
        raise ValueError("accumulator is frozen")
    dx = np.atleast_1d(np.asarray(dx, dtype=float))
    dm = float(np.dot(sample.mu, dx - sample.b * h))
    acc.m += dm
    acc.qv += sample.qv_rate * h
    if not (math.isfinite(acc.m) and math.isfinite(acc.qv)):
        raise ArithmeticError(f"non-finite exponential update: M={acc.m}, qv={acc.qv}")
    return acc


def z_value(acc: ExponentialAccumulator) -> float:
    """Current (or frozen) value of Z; 0 after an explosion freeze."""
    if acc.frozen and acc.frozen_by_explosion:
        return 0.0
    lz = acc.log_z
    if lz < _LOG_FLOOR:
        return 0.0
    return math.exp(lz)


def pathwise_qv(record, t: float) -> float:
    """Accumulated quadratic variation of the record at the grid point <= t.

    After the path's stop time the accumulation is constant, so any t past the
    stop returns the final value.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    series = record.qv_series
    idx = min(int(math.floor(t / record.h + 1e-9)), len(series) - 1)
    return float(series[idx])
