from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class TimeGrid:
    """Equidistant grid ``t_k = k h`` on ``[0, T]`` with ``h = T / n``."""

    T: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError(f"time grid needs n >= 1 steps, got {self.n}")
        if not self.T >= 0.0:
            raise ConfigurationError(f"horizon must be >= 0, got {self.T}")

    @property
    def h(self) -> float:
        return self.T / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.h

    def time(self, k: int) -> float:
        return k * self.h

    def index_of(self, t: float, rtol: float = 1e-9) -> int:
        """Node index of time ``t``; raises if ``t`` is not (close to) a node."""
        if self.h == 0.0:
            if t == 0.0:
                return 0
            raise ConfigurationError(f"time {t} is not a node of a zero-length grid")
        k = int(round(t / self.h))
        if k < 0 or k > self.n or abs(k * self.h - t) > rtol * max(self.T, 1.0):
            raise ConfigurationError(f"time {t} is not a node of {self}")
        return k

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.n % factor:
            raise ConfigurationError(f"cannot coarsen n={self.n} by {factor}")
        return TimeGrid(self.T, self.n // factor)
