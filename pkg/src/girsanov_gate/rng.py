"""Counter-based per-path random streams.

One Philox stream per path, keyed by (master seed, path index). The i-th
normal variate of path j is a pure function of (seed, j, i), independent of
batch size, scheduling, or worker count; parallel reductions therefore cannot
change any estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

__all__ = ["RngStream", "path_generator"]

_MASK64 = (1 << 64) - 1


def path_generator(master_seed: int, path_index: int) -> Generator:
    """Fresh generator for one path; deterministic in (seed, index)."""
    if not 0 <= master_seed <= _MASK64:
        raise ValueError("master seed must fit in 64 bits")
    if path_index < 0:
        raise ValueError("path index must be nonnegative")
    # 128-bit Philox key: high word = seed, low word = path index
    return Generator(Philox(key=((master_seed & _MASK64) << 64) | (path_index & _MASK64)))


@dataclass
class RngStream:
    """Sequential view of one path's normal variates with a draw counter."""

    master_seed: int
    path_index: int
    _gen: Generator = field(default=None, repr=False)
    drawn: int = 0

    def __post_init__(self):
        if self._gen is None:
            self._gen = path_generator(self.master_seed, self.path_index)

    def normals(self, count: int) -> np.ndarray:
        out = self._gen.standard_normal(count)
        self.drawn += count
        return out

    def reset(self) -> None:
        self._gen = path_generator(self.master_seed, self.path_index)
        self.drawn = 0
