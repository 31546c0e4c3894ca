"""Statistical classifiers on top of simulated path batches.

Everything here reduces batches to estimates with intervals and then to a
verdict about the stochastic exponential: is it a uniformly integrable
martingale, a martingale that loses uniform integrability, or strictly
local? Decisions are statistical, with explicit thresholds, a censoring cap
sensitivity sweep, and a metadata override slot for the one case a finite
horizon can never settle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import engine
from .batch import CLASS_CODES, PathBatch, simulate_batch
from .exponential import pathwise_qv
from .feller import FellerReport, feller_explosion_test
from .stats import EstimateWithCI, combined_se, mean_with_ci, proportion_with_ci, wilson_interval

__all__ = [
    "UI_MARTINGALE", "MARTINGALE_NOT_UI", "STRICT_LOCAL", "INCONCLUSIVE",
    "ACCEPTED", "REJECTED", "CENSORED", "SENSITIVITY_KAPPAS",
    "EstimatorError", "TimeDecision", "Verdict", "ConsistencyReport",
    "finite_qv_from_batch", "estimate_finite_qv_prob",
    "expectation_from_batch", "estimate_expectation_z",
    "martingale_verdict", "consistency_check",
    "pathwise_integrability_guard", "guard_fraction", "feller_check",
]

UI_MARTINGALE = "UIMartingale"
MARTINGALE_NOT_UI = "MartingaleNotUI"
STRICT_LOCAL = "StrictLocal"
INCONCLUSIVE = "Inconclusive"
VERDICT_CLASSES = (UI_MARTINGALE, MARTINGALE_NOT_UI, STRICT_LOCAL, INCONCLUSIVE)

ACCEPTED = "accepted"
REJECTED = "rejected"
CENSORED = "censored"

SENSITIVITY_KAPPAS = (1e2, 1e3, 1e4)
DEFAULT_DELTA = 1e-3
_FAILURE_BUDGET = 0.01


class EstimatorError(RuntimeError):
    """Raised when a batch is too numerically damaged to estimate from."""


def _check_failures(batch: PathBatch):
    frac = batch.numeric_failure_frac()
    if frac > _FAILURE_BUDGET:
        raise EstimatorError(
            f"{frac:.1%} of paths failed numerically at h={batch.h:g}; "
            "the scenario is ill-posed at this step size")


def _q_cap(scenario, kappa: float) -> float:
    # run the engine cap high enough that every sensitivity column is exact
    return max(float(kappa), *SENSITIVITY_KAPPAS)


def finite_qv_from_batch(batch: PathBatch, t: float, kappa: Optional[float] = None) -> EstimateWithCI:
    """Fraction of paths without a qv explosion by t, with Wilson interval."""
    _check_failures(batch)
    kappa = batch.k_max if kappa is None else float(kappa)
    exploded = int(batch.exploded_by(t, kappa).sum())
    return proportion_with_ci(batch.n - exploded, batch.n,
                              k_max=kappa, n_max=batch.n_max, h=batch.h)


def estimate_finite_qv_prob(scenario, t: float, *, n: int, seed: int,
                            h: Optional[float] = None, horizon: Optional[float] = None,
                            kappa: Optional[float] = None, workers: int = 1) -> EstimateWithCI:
    """Simulate in Q-mode (shifted drift) and estimate P(no qv explosion by t)."""
    kappa = float(kappa) if kappa is not None else float(scenario.k_max)
    batch = simulate_batch(scenario, "Q", n=n, seed=seed, times=(t,), horizon=horizon,
                           h=h, k_max=_q_cap(scenario, kappa), workers=workers)
    return finite_qv_from_batch(batch, t, kappa)


def expectation_from_batch(batch: PathBatch, t: float) -> EstimateWithCI:
    """Sample mean of Z_t over a P-mode batch, normal interval."""
    _check_failures(batch)
    if batch.mode != "P" or batch.z_at is None:
        raise ValueError("expectation of Z needs a P-mode batch")
    z = batch.z_at[batch.marker_index(t)]
    return mean_with_ci(z, k_max=batch.k_max, n_max=batch.n_max, h=batch.h)


def estimate_expectation_z(scenario, t: float, *, n: int, seed: int,
                           h: Optional[float] = None, horizon: Optional[float] = None,
                           workers: int = 1) -> EstimateWithCI:
    batch = simulate_batch(scenario, "P", n=n, seed=seed, times=(t,), horizon=horizon,
                           h=h, workers=workers)
    return expectation_from_batch(batch, t)


def pathwise_integrability_guard(record, t: float) -> bool:
    """Per-path sufficient check: accumulated qv stays below the cap through t.

    False as soon as the path's qv crossed the cap by t, or the path left the
    domain by t through a genuinely attainable boundary with a divergent final
    increment (its qv limit is infinite even though the partial sum is not).
    """
    stop = record.stop_time if record.stop_time is not None else math.inf
    if stop <= t + 1e-12:
        if record.classification == engine.QV_EXPLODED or record.divergent_exit:
            return False
    return pathwise_qv(record, min(t, stop)) < record.k_max


def guard_fraction(batch: PathBatch, t: float, kappa: Optional[float] = None):
    """(fraction of paths passing the guard at t, fraction of artifact exits by t)."""
    ex = batch.exploded_by(t, kappa)
    tol = 1e-12
    art = batch.artifact_exit & (batch.stop_time <= t + tol)
    return 1.0 - float(ex.mean()), float(art.mean())


@dataclass(frozen=True)
class TimeDecision:
    t: float
    decision: str                  # accepted / rejected / censored
    exploded: int
    n: int
    wilson_lo: float
    wilson_hi: float
    short_circuit: bool            # zero explosions: guard certified directly


def _decide(batch: PathBatch, t: float, kappa: float, delta: float) -> TimeDecision:
    exploded = int(batch.exploded_by(t, kappa).sum())
    lo, hi = wilson_interval(exploded, batch.n)
    if exploded == 0:
        # every path's guard holds outright; no interval argument needed
        return TimeDecision(t, ACCEPTED, 0, batch.n, lo, hi, True)
    if hi < delta:
        return TimeDecision(t, ACCEPTED, exploded, batch.n, lo, hi, False)
    if lo > delta:
        return TimeDecision(t, REJECTED, exploded, batch.n, lo, hi, False)
    return TimeDecision(t, CENSORED, exploded, batch.n, lo, hi, False)


@dataclass(frozen=True)
class Verdict:
    scenario: str
    classification: str
    times: tuple
    per_time: tuple                # TimeDecision per requested t, at report kappa
    horizon_decision: TimeDecision
    horizon: float
    half_horizon_decision: TimeDecision
    still_accumulating: bool       # explosion mass still growing toward the horizon
    ui_status: Optional[str]       # "statistical" | "analytic" | None
    sensitivity: dict              # kappa -> classification
    kappa: float
    delta: float
    n: int
    h: float
    seed: int
    warnings: tuple = ()

    @property
    def code(self) -> int:
        return VERDICT_CLASSES.index(self.classification)


def _classify(finite: list, horizon_dec: str) -> str:
    if any(d == REJECTED for d in finite):
        return STRICT_LOCAL
    if all(d == ACCEPTED for d in finite):
        if horizon_dec == ACCEPTED:
            return UI_MARTINGALE
        return MARTINGALE_NOT_UI
    return INCONCLUSIVE


def martingale_verdict(scenario, times=(1.0,), *, n: int, seed: int,
                       h: Optional[float] = None, horizon: Optional[float] = None,
                       delta: float = DEFAULT_DELTA, kappa: Optional[float] = None,
                       workers: int = 1) -> Verdict:
    """Classify the stochastic exponential from Q-mode explosion statistics.

    Each requested time is accepted or rejected by a Wilson interval on the
    exploded fraction against delta; the full-horizon estimate stands in for
    the uniform-integrability condition, with a half-horizon comparison to
    detect mass still escaping (censored, not accepted, in that case) and an
    analytic metadata override for scenarios where no finite horizon can
    inform. The whole decision is repeated across censoring caps
    {1e2, 1e3, 1e4} and the report cap; disagreement downgrades to
    Inconclusive.
    """
    times = tuple(sorted(float(t) for t in times))
    if not times:
        raise ValueError("times must be nonempty")
    report_kappa = float(kappa) if kappa is not None else float(scenario.k_max)
    big_h = float(horizon) if horizon is not None else max(scenario.horizon, times[-1])
    h_eff = float(h) if h is not None else scenario.h
    t_half = round(big_h / 2.0 / h_eff) * h_eff
    marker_times = tuple(sorted(set(times) | {t_half, big_h}))
    batch = simulate_batch(scenario, "Q", n=n, seed=seed, times=marker_times,
                           horizon=big_h, h=h, k_max=_q_cap(scenario, report_kappa),
                           workers=workers)
    _check_failures(batch)

    analytic_fail = scenario.metadata.get("analytic_ui_status") == "fails"
    kappas = sorted(set(SENSITIVITY_KAPPAS) | {report_kappa})
    sensitivity = {}
    chosen = {}
    for kap in kappas:
        finite = [_decide(batch, t, kap, delta) for t in times]
        half = _decide(batch, t_half, kap, delta)
        hor = _decide(batch, big_h, kap, delta)
        accumulating = half.wilson_hi < hor.wilson_lo
        hor_decision = hor.decision
        ui_status = None
        if analytic_fail:
            # no finite horizon is informative for this scenario; the known
            # analytic answer overrides whatever the sampler saw
            hor_decision = CENSORED
            ui_status = "analytic"
        elif accumulating and hor_decision == ACCEPTED:
            hor_decision = CENSORED
        cls = _classify([d.decision for d in finite], hor_decision)
        if cls in (UI_MARTINGALE, MARTINGALE_NOT_UI) and ui_status is None:
            ui_status = "statistical"
        sensitivity[kap] = cls
        if kap == report_kappa:
            chosen = dict(finite=finite, half=half, hor=hor, accumulating=accumulating,
                          cls=cls, ui=ui_status,
                          hor_reported=TimeDecision(hor.t, hor_decision, hor.exploded,
                                                    hor.n, hor.wilson_lo, hor.wilson_hi,
                                                    hor.short_circuit))
    classification = chosen["cls"]
    if len(set(sensitivity.values())) > 1:
        classification = INCONCLUSIVE

    warnings = []
    if bool(batch.a2_flag.any()):
        warnings.append("a2-jump: a single-step qv increment exceeded the jump "
                        "threshold on at least one path")
    art_frac = float((batch.artifact_exit & (batch.stop_time <= big_h + 1e-12)).mean())
    if art_frac > 0:
        warnings.append(f"boundary-artifact exits on {art_frac:.2%} of paths "
                        "(unattainable boundary; counted finite)")
    nf = batch.numeric_failure_frac()
    if nf > 0:
        warnings.append(f"numeric failures on {nf:.2%} of paths")

    return Verdict(
        scenario=scenario.name, classification=classification,
        times=times, per_time=tuple(chosen["finite"]),
        horizon_decision=chosen["hor_reported"], horizon=big_h,
        half_horizon_decision=chosen["half"],
        still_accumulating=chosen["accumulating"],
        ui_status=chosen["ui"] if classification == chosen["cls"] else None,
        sensitivity=sensitivity, kappa=report_kappa, delta=delta,
        n=batch.n, h=batch.h, seed=seed, warnings=tuple(warnings))


@dataclass(frozen=True)
class ConsistencyReport:
    scenario: str
    t: float
    expectation: EstimateWithCI    # P-mode mean of Z_t
    finite_qv: EstimateWithCI      # Q-mode fraction without explosion by t
    difference: float
    combined_se: float
    passed: bool
    route: str                     # "two-sided" | "one-sided"
    heavy_tail: bool
    n: int
    h: float
    seed: int


def consistency_check(scenario, t: float, *, n: int, seed: int,
                      h: Optional[float] = None, workers: int = 1) -> ConsistencyReport:
    """Cross-measure identity: the P-mean of Z_t against the Q-probability of
    no qv explosion by t, at three combined standard errors.

    Scenarios whose metadata disclaims the two-sided identity (non-unique
    dynamics) are held only to the one-sided bound: the mean must not exceed
    the probability by more than the allowance.
    """
    kappa = float(scenario.k_max)
    pb = simulate_batch(scenario, "P", n=n, seed=seed, times=(t,), h=h, workers=workers)
    qb = simulate_batch(scenario, "Q", n=n, seed=seed, times=(t,), h=h,
                        k_max=_q_cap(scenario, kappa), workers=workers)
    e = expectation_from_batch(pb, t)
    q = finite_qv_from_batch(qb, t, kappa)
    se = combined_se(e.se, q.se)
    diff = e.value - q.value
    two_sided = bool(scenario.metadata.get("two_sided_applicable", True))
    if two_sided:
        passed = abs(diff) <= 3.0 * se
        route = "two-sided"
    else:
        passed = diff <= 3.0 * se
        route = "one-sided"
    return ConsistencyReport(
        scenario=scenario.name, t=float(t), expectation=e, finite_qv=q,
        difference=diff, combined_se=se, passed=passed, route=route,
        heavy_tail=bool(e.heavy_tail), n=n, h=pb.h, seed=seed)


def feller_check(scenario, mode: str) -> Optional[FellerReport]:
    """Analytic boundary-explosion report for the scenario's dynamics in a mode,
    or None when the diffusion degenerates along the realized solution."""
    problem = scenario.feller_problem(mode)
    if problem is None:
        return None
    return feller_explosion_test(problem)
