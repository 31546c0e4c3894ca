"""Euler-Maruyama path engine with localization bookkeeping.

Paths advance with a fixed step h under the base drift (mode "P") or the
shifted drift b + a mu (mode "Q"), inside an exhaustion of the open domain.
A path stops at the first of: horizon, quadratic-variation cap K_max crossed
while inside the domain, exhaustion-exhausted domain exit, or numeric failure.
Level escalation walks the schedule 1, 2, 4, ..., N_max and records the exit
and threshold-crossing times that make up the localization lattice.

This module holds the single-path reference implementation; batch.py carries
the vectorized kernel and must produce bit-identical states (tested).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .domain import CoefficientSample, PathPrefix, evaluate_coefficients
from .exponential import ExponentialAccumulator, accumulate_increment
from .rng import RngStream

__all__ = [
    "REACHED_HORIZON", "QV_EXPLODED", "EXITED_DOMAIN", "NUMERIC_FAILURE",
    "psd_factor", "euler_step", "simulate_path", "detect_localization",
    "LocalizationState", "TrajectoryRecord", "level_schedule",
]

REACHED_HORIZON = "reached-horizon"
QV_EXPLODED = "qv-exploded"
EXITED_DOMAIN = "exited-domain"
NUMERIC_FAILURE = "numeric-failure"

# numerical surrogate for reaching the cemetery on unbounded domains
BLOWUP_GUARD = 1e8
A2_JUMP_THRESHOLD = 1e3
# final-step qv increment above this at an attainable boundary is a genuine
# divergence signature (rate ~ 1/x^2 gives increment ~ 1/k^2 at state k sqrt(h))
EXIT_INCREMENT_THRESHOLD = 1e-2


class NotPSDError(ValueError):
    pass


def psd_factor(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition.

    Eigenvalues below 1e-14 are clamped to zero; below -1e-10 is an error.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if np.abs(a - a.T).max() > 1e-10 * (1.0 + np.abs(a).max()):
        raise NotPSDError("matrix not symmetric")
    w, u = np.linalg.eigh(a)
    if w.min() < -1e-10:
        raise NotPSDError(f"negative eigenvalue {w.min()}")
    w = np.where(w < 1e-14, 0.0, w)
    return (u * np.sqrt(w)) @ u.T


def level_schedule(n_max: int) -> list[int]:
    """Doubling level schedule 1, 2, 4, ..., n_max."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    out, n = [], 1
    while n < n_max:
        out.append(n)
        n *= 2
    out.append(n_max)
    return out


@dataclass
class LocalizationState:
    """Discrete localization lattice data for one path.

    rho[n] is the first grid time outside level-n region; tau_tilde[n] the
    first time accumulated qv exceeds n (n from the level schedule);
    tau_ledger[k] the first time qv exceeds the integer k. theta/cause are
    set when the path stops.
    """

    schedule: tuple
    rho: dict = field(default_factory=dict)
    tau_tilde: dict = field(default_factory=dict)
    tau_ledger: dict = field(default_factory=dict)
    level: int = 1
    theta: Optional[float] = None
    cause: Optional[str] = None
    a2_flag: bool = False
    _tt_idx: int = 0
    _ledger_next: int = 1

    def theta_n(self, n: int) -> float:
        """min(tau_tilde_n, rho_n, n) for a schedule level n."""
        return min(self.tau_tilde.get(n, math.inf), self.rho.get(n, math.inf), float(n))


@dataclass
class TrajectoryRecord:
    prefix: PathPrefix
    loc: LocalizationState
    acc: ExponentialAccumulator
    mode: str
    master_seed: int
    path_index: int
    h: float
    horizon: float
    k_max: float
    classification: Optional[str] = None
    stop_time: Optional[float] = None
    exit_side: Optional[str] = None
    exit_increment: Optional[float] = None
    divergent_exit: bool = False
    artifact_exit: bool = False
    qv_series: list = field(default_factory=lambda: [0.0])
    logz_series: list = field(default_factory=lambda: [0.0])


def euler_step(x, sample: CoefficientSample, mode: str, h: float, xi) -> tuple[np.ndarray, bool]:
    """One Euler-Maruyama step; returns (next state, finite flag).

    mode "P" uses drift b, mode "Q" uses b + a mu. Membership checks are the
    caller's job; this only advances the state.
    """
    if mode not in ("P", "Q"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    drift = sample.b if mode == "P" else sample.b_hat
    if sample.a.shape == (1, 1):
        noise = math.sqrt(max(float(sample.a[0, 0]), 0.0) * h) * xi
    else:
        noise = psd_factor(sample.a) @ xi * math.sqrt(h)
    x_next = x + drift * h + noise
    return x_next, bool(np.all(np.isfinite(x_next)))


def detect_localization(record: TrajectoryRecord, increment: float) -> LocalizationState:
    """Update threshold crossings and the jump flag after one qv increment.

    Called once per step with the step's qv increment, after the accumulator
    advanced; time of the crossing is the grid point being produced.
    """
    loc = record.loc
    t = (record.prefix.k + 1) * record.h
    qv = record.acc.qv
    while loc._tt_idx < len(loc.schedule) and qv > loc.schedule[loc._tt_idx]:
        loc.tau_tilde[loc.schedule[loc._tt_idx]] = t
        loc._tt_idx += 1
    while loc._ledger_next <= record.k_max and qv > loc._ledger_next:
        loc.tau_ledger[loc._ledger_next] = t
        loc._ledger_next += 1
    if increment > A2_JUMP_THRESHOLD:
        loc.a2_flag = True
    return loc


def _finish(record, classification, t, theta_cause=None):
    record.classification = classification
    record.stop_time = t
    record.loc.theta = t if classification != REACHED_HORIZON else None
    record.loc.cause = theta_cause or {
        QV_EXPLODED: "qv-explosion",
        EXITED_DOMAIN: "domain-exit",
        REACHED_HORIZON: "horizon-reached",
        NUMERIC_FAILURE: "numeric-failure",
    }[classification]
    return record


def simulate_path(scenario, mode: str, horizon: float, stream: RngStream,
                  h: Optional[float] = None, k_max: Optional[float] = None,
                  n_max: Optional[int] = None) -> TrajectoryRecord:
    """Reference single-path simulation; see module docstring for stop rules."""
    h = float(h if h is not None else scenario.h)
    k_max = float(k_max if k_max is not None else scenario.k_max)
    n_max = int(n_max if n_max is not None else scenario.n_max)
    schedule = level_schedule(n_max)
    dom = scenario.domain
    edges = [dom.level_region(n) for n in schedule]

    prefix = PathPrefix(h=h, x0=scenario.x0)
    loc = LocalizationState(schedule=tuple(schedule))
    acc = ExponentialAccumulator()
    record = TrajectoryRecord(prefix=prefix, loc=loc, acc=acc, mode=mode,
                              master_seed=stream.master_seed, path_index=stream.path_index,
                              h=h, horizon=horizon, k_max=k_max)
    attain = scenario.attainability(mode)

    n_steps = int(round(horizon / h))
    lvl_idx = 0
    for i in range(n_steps):
        t = i * h
        try:
            sample = evaluate_coefficients(scenario.coeffs, t, prefix)
        except ArithmeticError:
            return _finish(record, NUMERIC_FAILURE, t)
        xi = stream.normals(dom.dim)
        x_next, finite = euler_step(prefix.last, sample, mode, h, xi)
        if not finite:
            return _finish(record, NUMERIC_FAILURE, t + h)

        drift = sample.b if mode == "P" else sample.b_hat
        increment = sample.qv_rate * h
        try:
            accumulate_increment(acc, sample, x_next - prefix.last, h)
        except ArithmeticError:
            return _finish(record, NUMERIC_FAILURE, t + h)
        detect_localization(record, increment)

        # cap first: the increment accrued while the state was inside E
        if acc.qv > k_max:
            acc.freeze(by_explosion=True)
            prefix.append(x_next)
            record.qv_series.append(acc.qv)
            record.logz_series.append(acc.log_z)
            return _finish(record, QV_EXPLODED, t + h)

        inside_e = bool(np.all(dom.contains(x_next))) and bool(np.all(np.abs(x_next) < BLOWUP_GUARD))
        lo, hi = edges[lvl_idx]
        while inside_e and (np.any(x_next < lo) or np.any(x_next > hi)):
            loc.rho[schedule[lvl_idx]] = t + h
            if lvl_idx + 1 == len(schedule):
                inside_e = False
                break
            lvl_idx += 1
            loc.level = schedule[lvl_idx]
            lo, hi = edges[lvl_idx]
        if not inside_e:
            for j in range(lvl_idx, len(schedule)):
                loc.rho.setdefault(schedule[j], t + h)
            record.exit_side = "lower" if np.any(x_next < lo) else "upper"
            record.exit_increment = increment
            side_attainable = attain[0] if record.exit_side == "lower" else attain[1]
            if side_attainable and increment > EXIT_INCREMENT_THRESHOLD:
                record.divergent_exit = True
                acc.freeze(by_explosion=True)
            else:
                record.artifact_exit = not side_attainable
                acc.freeze(by_explosion=False)
            prefix.kill(exit_state=x_next)
            record.qv_series.append(acc.qv)
            record.logz_series.append(acc.log_z)
            return _finish(record, EXITED_DOMAIN, t + h)

        prefix.append(x_next)
        record.qv_series.append(acc.qv)
        record.logz_series.append(acc.log_z)

    return _finish(record, REACHED_HORIZON, n_steps * h)
