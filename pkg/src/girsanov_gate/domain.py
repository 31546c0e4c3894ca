"""Open state domains, closed exhaustions, and coefficient evaluation on path prefixes.

The state space is an open set E (an interval, or all of R^d) together with a
deterministic exhaustion by closed regions E_0 <= E_1 <= ... whose union is E.
Paths live on a uniform grid and are absorbed at a cemetery once they leave E;
coefficients are functionals of (t, path prefix) restricted to the running
min/max summaries, which is all the catalog needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "Domain",
    "PathPrefix",
    "CoefficientSet",
    "CoefficientSample",
    "make_domain",
    "evaluate_coefficients",
    "first_exit_time",
    "validate_coefficient_set",
]


class ConfigurationError(ValueError):
    """Invalid experiment or domain configuration."""


@dataclass(frozen=True)
class Domain:
    """Open domain E in R^d with a fixed closed exhaustion.

    For an interval (l, r) the level-n region is
        [l + 1/(n+c), r - 1/(n+c)]  intersect  [-(n+c), n+c]
    with c the smallest admissible constant putting x0 inside level 0.
    For R^d the level-n region is the box [-(n+r0), n+r0]^d with
    r0 = max(|x0|_inf, 1).
    """

    dim: int
    lower: float
    upper: float
    c: float

    def contains(self, x) -> np.ndarray | bool:
        x = np.asarray(x)
        return np.logical_and(x > self.lower, x < self.upper) if self.dim == 1 \
            else np.all((x > self.lower) & (x < self.upper), axis=-1)

    def level_region(self, n: int) -> tuple[float, float]:
        """Closed region E_n as (lo, hi) per coordinate."""
        if n < 0:
            raise ValueError("level must be >= 0")
        box = n + self.c
        lo = -box if math.isinf(self.lower) else max(self.lower + 1.0 / (n + self.c), -box)
        hi = box if math.isinf(self.upper) else min(self.upper - 1.0 / (n + self.c), box)
        return lo, hi

    def level_edges(self, levels) -> tuple[np.ndarray, np.ndarray]:
        los, his = zip(*(self.level_region(n) for n in levels))
        return np.asarray(los), np.asarray(his)


def make_domain(bounds, x0) -> Domain:
    """Build a Domain from interval bounds (l, r) and the start point.

    bounds may use -inf/inf for unbounded sides; x0 must lie strictly inside.
    """
    lower, upper = float(bounds[0]), float(bounds[1])
    x0a = np.atleast_1d(np.asarray(x0, dtype=float))
    dim = x0a.size
    if dim > 1 and not (math.isinf(lower) and math.isinf(upper)):
        raise ConfigurationError("interval domains are one-dimensional")
    if not np.all((x0a > lower) & (x0a < upper)):
        raise ConfigurationError(f"start point {x0} is not inside ({lower}, {upper})")

    if math.isinf(lower) and math.isinf(upper):
        c = max(float(np.max(np.abs(x0a))), 1.0)
    else:
        x0f = float(x0a[0])
        c = 2.0
        if math.isfinite(lower):
            c = max(c, math.ceil(1.0 / (x0f - lower)))
        if math.isfinite(upper):
            c = max(c, math.ceil(1.0 / (upper - x0f)))
        c = max(c, math.ceil(abs(x0f)))
    dom = Domain(dim=dim, lower=lower, upper=upper, c=float(c))
    lo0, hi0 = dom.level_region(0)
    # containment at level 0 is a construction invariant, not a runtime check
    assert np.all((x0a >= lo0) & (x0a <= hi0)), (x0, lo0, hi0)
    return dom


@dataclass
class PathPrefix:
    """One sampled path on a uniform grid, absorbed at the cemetery after exit.

    states[k] is the state at time k*h while k < lifetime_index; afterwards the
    path is frozen at its last inside state and flagged dead. Running
    coordinate-wise min/max are maintained so indicator coefficients of the
    "has the path ever left its start" kind stay O(1) per step.
    """

    h: float
    x0: np.ndarray
    states: list = field(default_factory=list)
    lifetime_index: Optional[int] = None
    running_min: np.ndarray = None
    running_max: np.ndarray = None

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if not self.states:
            self.states = [self.x0.copy()]
        if self.running_min is None:
            self.running_min = self.x0.copy()
            self.running_max = self.x0.copy()

    @property
    def last(self) -> np.ndarray:
        return self.states[-1]

    @property
    def k(self) -> int:
        return len(self.states) - 1

    @property
    def alive(self) -> bool:
        return self.lifetime_index is None

    def append(self, x: np.ndarray) -> None:
        if not self.alive:
            raise ValueError("cannot extend a path past its lifetime")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        self.states.append(x)
        self.running_min = np.minimum(self.running_min, x)
        self.running_max = np.maximum(self.running_max, x)

    def kill(self, exit_state: Optional[np.ndarray] = None) -> None:
        """Absorb at the cemetery; the exit state (possibly outside E) is recorded."""
        if exit_state is not None:
            self.states.append(np.atleast_1d(np.asarray(exit_state, dtype=float)))
        self.lifetime_index = len(self.states) - 1

    def time(self, idx: int) -> float:
        return idx * self.h


@dataclass(frozen=True)
class CoefficientSet:
    """Evaluators b, a, mu on (t, PathPrefix), plus vectorized state forms.

    The scalar evaluators define the model. The vectorized forms (t, x, lo, hi)
    with per-path running min/max arrays are what the batch kernel calls; they
    must agree with the scalar evaluators pointwise (tested).
    """

    b: Callable
    a: Callable
    mu: Callable
    b_vec: Callable = None
    a_vec: Callable = None
    mu_vec: Callable = None
    time_homogeneous: bool = True
    state_only: bool = True


@dataclass(frozen=True)
class CoefficientSample:
    b: np.ndarray
    a: np.ndarray
    mu: np.ndarray
    b_hat: np.ndarray
    qv_rate: float


def evaluate_coefficients(coeffs: CoefficientSet, t: float, path: PathPrefix) -> CoefficientSample:
    """Evaluate (b, a, mu) on the prefix and derive b_hat = b + a mu, rate = mu' a mu."""
    if not path.alive:
        raise ValueError("coefficient evaluation on a dead path")
    b = np.atleast_1d(np.asarray(coeffs.b(t, path), dtype=float))
    a = np.atleast_2d(np.asarray(coeffs.a(t, path), dtype=float))
    mu = np.atleast_1d(np.asarray(coeffs.mu(t, path), dtype=float))
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(a)) and np.all(np.isfinite(mu))):
        raise ArithmeticError(f"non-finite coefficient at t={t}, x={path.last}")
    amu = a @ mu
    b_hat = b + amu
    qv_rate = float(mu @ amu)
    if qv_rate < 0:
        # PSD roundoff can produce tiny negatives only
        if qv_rate < -1e-10 * (1.0 + float(np.abs(a).max())):
            raise ArithmeticError(f"negative quadratic variation rate {qv_rate}")
        qv_rate = 0.0
    return CoefficientSample(b=b, a=a, mu=mu, b_hat=b_hat, qv_rate=qv_rate)


def first_exit_time(path: PathPrefix, region: tuple[float, float]) -> Optional[float]:
    """Smallest grid time with the state strictly outside the closed region.

    Cemetery states count as outside every region. Returns None when the whole
    prefix stays inside. Discrete over-approximation: excursions between grid
    points are invisible.
    """
    lo, hi = region
    for i, x in enumerate(path.states):
        dead = path.lifetime_index is not None and i >= path.lifetime_index
        if dead or np.any(x < lo) or np.any(x > hi):
            return path.time(i)
    return None


def validate_coefficient_set(coeffs: CoefficientSet, domain: Domain, probe_points,
                             t_probe=(0.0, 0.5, 1.0)) -> None:
    """Spot-check symmetry and positive semidefiniteness of a at sample points."""
    for x in probe_points:
        path = PathPrefix(h=1.0, x0=np.asarray(x, dtype=float))
        for t in t_probe:
            a = np.atleast_2d(np.asarray(coeffs.a(t, path), dtype=float))
            if np.abs(a - a.T).max() > 1e-12:
                raise ConfigurationError(f"a not symmetric at x={x}")
            w = np.linalg.eigvalsh(a)
            if w.min() < -1e-10:
                raise ConfigurationError(f"a not PSD at x={x}: min eigenvalue {w.min()}")
