"""Vectorized batch simulation kernel and the parallel driver.

Paths are advanced in blocks with one Philox stream per path and elementwise
arithmetic only, so every path's trajectory is a pure function of
(seed, path index) and results are bit-identical for any batch size or worker
count. Aggregation concatenates per-range outputs in ascending path order.

The kernel mirrors engine.simulate_path step for step (same expression
ordering, so states agree bit for bit; tested) but keeps only the reductions
the estimators need: classification, stop data, threshold crossing times, and
snapshots of (Z, qv) at requested marker times.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import engine
from .rng import path_generator

__all__ = ["PathBatch", "simulate_batch", "CLASS_CODES", "CODE_NAMES"]

CLASS_CODES = {
    engine.REACHED_HORIZON: 0,
    engine.QV_EXPLODED: 1,
    engine.EXITED_DOMAIN: 2,
    engine.NUMERIC_FAILURE: 3,
}
CODE_NAMES = {v: k for k, v in CLASS_CODES.items()}

_BLOCK = 4096
_NOISE_CHUNK = 2048


@dataclass
class PathBatch:
    """Reduced per-path outputs of one batch run; arrays indexed by path."""

    mode: str
    n: int
    h: float
    horizon: float
    k_max: float                   # engine censoring cap actually applied
    n_max: int                     # exhaustion level cap
    seed: int
    times: np.ndarray              # marker times, ascending, last == horizon
    qv_thresholds: np.ndarray      # ascending; level schedule plus kappa grid
    classification: np.ndarray     # int8 codes per CLASS_CODES
    stop_time: np.ndarray
    x_stop: np.ndarray
    qv_final: np.ndarray
    logz_final: np.ndarray         # P mode; zeros in Q mode
    frozen_zero: np.ndarray        # Z limit is exactly 0 (cap or convicted exit)
    divergent_exit: np.ndarray
    artifact_exit: np.ndarray
    a2_flag: np.ndarray
    exit_side: np.ndarray          # 0 none, 1 lower, 2 upper
    qv_cross: np.ndarray           # (n, #thresholds) first time qv > thr, inf if never
    z_at: Optional[np.ndarray]     # (#times, n) in P mode, None in Q mode
    qv_at: np.ndarray              # (#times, n)

    def marker_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, t):
            raise KeyError(f"time {t} was not a marker of this run")
        return idx

    def alive_at(self, t: float) -> np.ndarray:
        return self.stop_time > t + 1e-12

    def threshold_column(self, kappa: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.qv_thresholds - kappa)))
        if abs(self.qv_thresholds[idx] - kappa) > 1e-9 * max(1.0, kappa):
            raise KeyError(f"threshold {kappa} was not tracked")
        return self.qv_cross[:, idx]

    def exploded_by(self, t: float, kappa: Optional[float] = None) -> np.ndarray:
        """Genuine qv-explosion by time t at censoring level kappa (default: cap).

        A path counts as exploded when its qv crossed kappa while running, or
        when it left the domain through an attainable boundary with a divergent
        final increment (the discrete image of qv blowing up at the exit).
        Artifact and benign exits never count. kappa above the engine cap is
        refused: the run cannot see those crossings.
        """
        kappa = self.k_max if kappa is None else float(kappa)
        if kappa > self.k_max * (1 + 1e-12):
            raise ValueError(f"kappa {kappa} exceeds the engine cap {self.k_max}")
        tol = 1e-12
        capped = self.threshold_column(kappa) <= t + tol
        convicted = self.divergent_exit & (self.stop_time <= t + tol)
        return capped | convicted

    def numeric_failure_frac(self) -> float:
        return float(np.mean(self.classification == CLASS_CODES[engine.NUMERIC_FAILURE]))


def _threshold_grid(schedule: Sequence[int], k_max: float, scenario_k: float) -> np.ndarray:
    thr = set(float(n) for n in schedule)
    thr.update((1e2, 1e3, 1e4))
    thr.add(float(k_max))
    thr.add(float(scenario_k))
    return np.array(sorted(thr))


def _marker_steps(times: np.ndarray, h: float) -> np.ndarray:
    steps = np.rint(times / h).astype(np.int64)
    if np.any(np.abs(steps * h - times) > 1e-6 * np.maximum(h, times)) or np.any(steps < 1):
        raise ValueError(f"marker times {times} are not grid-aligned at h={h}")
    return steps


def _resolve(scenario, times, horizon, h, k_max, n_max):
    h = float(h if h is not None else scenario.h)
    k_max = float(k_max if k_max is not None else scenario.k_max)
    n_max = int(n_max if n_max is not None else scenario.n_max)
    base = float(horizon if horizon is not None else scenario.horizon)
    tlist = sorted(set(float(t) for t in times))
    if any(t <= 0 for t in tlist):
        raise ValueError("marker times must be positive")
    horizon = max(base, tlist[-1]) if tlist else base
    if not tlist or tlist[-1] < horizon:
        tlist.append(horizon)
    return h, k_max, n_max, horizon, np.asarray(tlist)


def simulate_batch(scenario, mode: str, *, n: int, seed: int,
                   times: Sequence[float] = (), horizon: Optional[float] = None,
                   h: Optional[float] = None, k_max: Optional[float] = None,
                   n_max: Optional[int] = None, workers: int = 1,
                   path_offset: int = 0) -> PathBatch:
    """Simulate n paths and reduce to a PathBatch.

    workers > 1 splits the path range across processes; that requires a
    catalog scenario (rebuilt by name in each worker). Results are identical
    to the single-process run by construction.
    """
    if mode not in ("P", "Q"):
        raise ValueError(f"unknown mode {mode!r}")
    if n < 1:
        raise ValueError("n must be positive")
    h, k_max, n_max, horizon, times_arr = _resolve(scenario, times, horizon, h, k_max, n_max)

    if workers > 1 and n >= 2 * workers:
        if getattr(scenario, "catalog_key", None) is None:
            raise ValueError("parallel runs need a catalog scenario")
        ranges = _split_ranges(n, workers)
        args = [(scenario.catalog_key, mode, seed, path_offset + a, path_offset + b,
                 tuple(times_arr), horizon, h, k_max, n_max) for a, b in ranges]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_range_from_key, args))
    else:
        parts = [_run_range(scenario, mode, seed, path_offset, path_offset + n,
                            times_arr, horizon, h, k_max, n_max)]

    merged = {k: np.concatenate([p[k] for p in parts], axis=-1) for k in parts[0]}
    schedule = engine.level_schedule(n_max)
    return PathBatch(
        mode=mode, n=n, h=h, horizon=horizon, k_max=k_max, n_max=n_max, seed=seed,
        times=times_arr, qv_thresholds=_threshold_grid(schedule, k_max, scenario.k_max),
        classification=merged["classification"], stop_time=merged["stop_time"],
        x_stop=merged["x_stop"], qv_final=merged["qv_final"],
        logz_final=merged["logz_final"], frozen_zero=merged["frozen_zero"],
        divergent_exit=merged["divergent_exit"], artifact_exit=merged["artifact_exit"],
        a2_flag=merged["a2_flag"], exit_side=merged["exit_side"],
        qv_cross=merged["qv_cross_t"].T, qv_at=merged["qv_at"],
        z_at=merged["z_at"] if mode == "P" else None,
    )


def _split_ranges(n: int, workers: int) -> list[tuple[int, int]]:
    per = math.ceil(n / workers)
    return [(a, min(a + per, n)) for a in range(0, n, per)]


def _run_range_from_key(packed):
    (key, mode, seed, a, b, times, horizon, h, k_max, n_max) = packed
    from .scenarios import build_scenario
    name, overrides = key
    scenario = build_scenario(name, dict(overrides))
    return _run_range(scenario, mode, seed, a, b, np.asarray(times), horizon, h, k_max, n_max)


def _run_range(scenario, mode, seed, a, b, times, horizon, h, k_max, n_max):
    parts = []
    for blo in range(a, b, _BLOCK):
        parts.append(_run_block(scenario, mode, seed, blo, min(blo + _BLOCK, b),
                                times, horizon, h, k_max, n_max))
    if len(parts) == 1:
        return parts[0]
    return {k: np.concatenate([p[k] for p in parts], axis=-1) for k in parts[0]}


def _run_block(scenario, mode, seed, lo, hi, times, horizon, h, k_max, n_max):
    B = hi - lo
    dom = scenario.domain
    if dom.dim != 1:
        raise NotImplementedError("batch kernel is one-dimensional; use simulate_path")
    schedule = engine.level_schedule(n_max)
    lo_arr, hi_arr = dom.level_edges(schedule)
    n_levels = len(schedule)
    thr = _threshold_grid(schedule, k_max, scenario.k_max)
    n_thr = len(thr)
    att_lower, att_upper = scenario.attainability(mode)
    mu_f, b_f, a_f = scenario.coeffs.mu_vec, scenario.coeffs.b_vec, scenario.coeffs.a_vec
    is_p = mode == "P"

    n_steps = int(round(horizon / h))
    if abs(n_steps * h - horizon) > 1e-6 * max(h, horizon):
        raise ValueError(f"horizon {horizon} not grid-aligned at h={h}")
    marker_steps = _marker_steps(times, h)
    n_markers = len(marker_steps)

    x = np.full(B, float(scenario.x0))
    rmin = x.copy()
    rmax = x.copy()
    m_acc = np.zeros(B)
    qv = np.zeros(B)
    alive = np.ones(B, dtype=bool)
    lvl = np.zeros(B, dtype=np.int32)
    lo_cur = np.full(B, lo_arr[0])
    hi_cur = np.full(B, hi_arr[0])
    tptr = np.zeros(B, dtype=np.int32)
    tcur = np.full(B, thr[0])
    qv_cross = np.full((B, n_thr), np.inf)
    cls = np.zeros(B, dtype=np.int8)
    stop_time = np.full(B, n_steps * h)
    frozen_zero = np.zeros(B, dtype=bool)
    divergent = np.zeros(B, dtype=bool)
    artifact = np.zeros(B, dtype=bool)
    a2 = np.zeros(B, dtype=bool)
    side = np.zeros(B, dtype=np.int8)
    z_at = np.empty((n_markers, B))
    qv_at = np.empty((n_markers, B))
    mptr = 0

    gens = [path_generator(seed, j) for j in range(lo, hi)]
    sq_guard = engine.BLOWUP_GUARD
    a2_thresh = engine.A2_JUMP_THRESHOLD
    exit_thresh = engine.EXIT_INCREMENT_THRESHOLD
    d_lower, d_upper = dom.lower, dom.upper

    def snapshot():
        qv_at[mptr] = qv
        if is_p:
            z_at[mptr] = np.where(frozen_zero, 0.0, np.exp(m_acc - 0.5 * qv))

    step = 0
    noise = np.zeros((B, _NOISE_CHUNK))
    with np.errstate(all="ignore"):
        while step < n_steps:
            s = min(_NOISE_CHUNK, n_steps - step)
            if alive.any():
                live = np.nonzero(alive)[0]
                for j in live:
                    noise[j, :s] = gens[j].standard_normal(s)
            for i in range(s):
                t = (step + i) * h
                t1 = t + h
                if alive.any():
                    all_alive = alive.all()
                    xi = noise[:, i]
                    mu = np.asarray(mu_f(t, x, rmin, rmax), dtype=float)
                    av = np.asarray(a_f(t, x, rmin, rmax), dtype=float)
                    bv = np.asarray(b_f(t, x, rmin, rmax), dtype=float)
                    rate = mu * mu * av
                    inc = rate * h
                    drift = bv if is_p else bv + av * mu
                    x_new = x + drift * h + np.sqrt(av * h) * xi
                    dx = x_new - x
                    qv_new = qv + inc
                    bad = ~(np.isfinite(x_new) & np.isfinite(qv_new))
                    if is_p:
                        m_new = m_acc + mu * (dx - bv * h)
                        bad = bad | ~np.isfinite(m_new)
                    if all_alive and not bad.any():
                        x = x_new
                        qv = qv_new
                        if is_p:
                            m_acc = m_new
                    else:
                        upd = alive & ~bad
                        x = np.where(upd, x_new, x)
                        qv = np.where(upd, qv_new, qv)
                        if is_p:
                            m_acc = np.where(upd, m_new, m_acc)
                    rmin = np.minimum(rmin, x)
                    rmax = np.maximum(rmax, x)
                    inc_full = np.broadcast_to(np.asarray(inc, dtype=float), (B,))

                    nf = alive & bad
                    if nf.any():
                        cls[nf] = 3
                        stop_time[nf] = t1
                        alive = alive & ~nf

                    a2 = a2 | (alive & (inc_full > a2_thresh))

                    crossed = alive & (tptr < n_thr) & (qv > tcur)
                    while crossed.any():
                        jj = np.nonzero(crossed)[0]
                        qv_cross[jj, tptr[jj]] = t1
                        tptr[jj] += 1
                        nxt = np.minimum(tptr[jj], n_thr - 1)
                        tcur[jj] = np.where(tptr[jj] < n_thr, thr[nxt], np.inf)
                        crossed[jj] = (tptr[jj] < n_thr) & (qv[jj] > tcur[jj])

                    capped = alive & (qv > k_max)
                    if capped.any():
                        cls[capped] = 1
                        stop_time[capped] = t1
                        frozen_zero = frozen_zero | capped
                        alive = alive & ~capped

                    beyond = alive & ((x <= d_lower) | (x >= d_upper) | (np.abs(x) >= sq_guard))
                    out_lvl = alive & ~beyond & ((x < lo_cur) | (x > hi_cur))
                    while out_lvl.any():
                        jj = np.nonzero(out_lvl)[0]
                        exhausted = lvl[jj] + 1 >= n_levels
                        beyond[jj[exhausted]] = True
                        go = jj[~exhausted]
                        lvl[go] += 1
                        lo_cur[go] = lo_arr[lvl[go]]
                        hi_cur[go] = hi_arr[lvl[go]]
                        out_lvl[jj] = False
                        out_lvl[go] = (x[go] < lo_cur[go]) | (x[go] > hi_cur[go])
                    if beyond.any():
                        jj = np.nonzero(beyond)[0]
                        is_lower = x[jj] < lo_arr[-1]
                        side[jj] = np.where(is_lower, 1, 2)
                        att = np.where(is_lower, att_lower, att_upper)
                        conv = att & (inc_full[jj] > exit_thresh)
                        divergent[jj] = conv
                        artifact[jj] = ~att
                        frozen_zero[jj] = frozen_zero[jj] | conv
                        cls[beyond] = 2
                        stop_time[beyond] = t1
                        alive = alive & ~beyond

                while mptr < n_markers and marker_steps[mptr] == step + i + 1:
                    snapshot()
                    mptr += 1
            step += s

    assert mptr == n_markers

    out = {
        "classification": cls, "stop_time": stop_time, "x_stop": x,
        "qv_final": qv, "logz_final": (m_acc - 0.5 * qv) if is_p else np.zeros(B),
        "frozen_zero": frozen_zero, "divergent_exit": divergent,
        "artifact_exit": artifact, "a2_flag": a2, "exit_side": side,
        "qv_cross_t": qv_cross.T, "qv_at": qv_at, "z_at": z_at,
    }
    return out
