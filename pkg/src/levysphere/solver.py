"""Time evolution of the truncated coefficient system.

Every mode ``(l, m)`` with ``l <= kappa`` solves its own scalar linear SDE
``dX = -l(l+1) X dt + dL``. Modes never interact, so all routines here are
vectorized over the packed mode axis.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import CoeffField, degrees, num_coeffs
from .errors import ConfigurationError, StabilityError, UnsupportedDriverError
from .noise import (IncrementPath, JumpRecord, NoiseSpec, poisson_convolution)
from .timegrid import TimeGrid

__all__ = [
    "Scheme", "SolverConfig", "StatePath", "Stability", "TimeGrid",
    "scheme_multiplier", "degree_multipliers", "stability_check",
    "em_evolve", "exact_evolve",
]


class Scheme(str, enum.Enum):
    EXACT_WIENER = "exact_wiener"
    EXACT_POISSON = "exact_poisson"
    FORWARD_EM = "forward"
    BACKWARD_EM = "backward"

    @property
    def is_exact(self) -> bool:
        return self in (Scheme.EXACT_WIENER, Scheme.EXACT_POISSON)

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        key = text.strip().lower().replace("-", "_")
        key = {"forward_em": "forward", "backward_em": "backward", "forwardem": "forward",
               "backwardem": "backward", "explicit": "forward",
               "implicit": "backward"}.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown scheme {text!r}") from None


DEFAULT_CAP = {Scheme.FORWARD_EM: 1.0, Scheme.BACKWARD_EM: 1.5}


@dataclass(frozen=True)
class SolverConfig:
    kappa: int
    scheme: Scheme = Scheme.BACKWARD_EM
    coupling_cap: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.kappa < 0:
            raise ConfigurationError(f"kappa must be >= 0, got {self.kappa}")
        if self.coupling_cap is None:
            object.__setattr__(self, "coupling_cap", DEFAULT_CAP.get(self.scheme, math.inf))
        if not self.coupling_cap > 0:
            raise ConfigurationError(f"coupling cap must be > 0, got {self.coupling_cap}")


@dataclass(frozen=True)
class Stability:
    ok: bool
    product: float
    cap: float
    detail: str = ""

    def __bool__(self):
        return self.ok


def stability_check(config: SolverConfig, grid: TimeGrid) -> Stability:
    """Diagnose ``kappa(kappa+1) h <= C_c`` (and ``C_c <= 1`` for forward EM)."""
    return _stability(config, grid.h)


def _stability(config: SolverConfig, h: float) -> Stability:
    k = config.kappa
    prod = k * (k + 1) * h
    cap = config.coupling_cap
    if config.scheme.is_exact:
        return Stability(True, prod, cap)
    if config.scheme is Scheme.FORWARD_EM and cap > 1.0:
        return Stability(False, prod, cap, f"forward scheme needs C_c <= 1, got {cap}")
    if prod > cap:
        return Stability(False, prod, cap,
                         f"kappa={k}, h={h!r}: kappa(kappa+1)h={prod!r} > C_c={cap!r}")
    return Stability(True, prod, cap)


def scheme_multiplier(scheme: Scheme, ell: int, h: float,
                      coupling_cap: float | None = None) -> tuple[float, int]:
    """Per-mode factor ``xi`` and increment exponent ``delta`` of one EM step."""
    scheme = Scheme(scheme)
    if scheme.is_exact:
        raise UnsupportedDriverError("exact schemes have no EM multiplier")
    cap = DEFAULT_CAP[scheme] if coupling_cap is None else coupling_cap
    x = ell * (ell + 1) * h
    if x > cap:
        raise StabilityError(ell, h, cap, scheme.value)
    if scheme is Scheme.FORWARD_EM:
        return 1.0 - x, 0
    return 1.0 / (1.0 + x), 1


def degree_multipliers(config: SolverConfig, h: float) -> tuple[np.ndarray, int]:
    """``xi`` for every degree ``0..kappa`` plus the common ``delta``."""
    if not _stability(config, h).ok:
        raise StabilityError(config.kappa, h, config.coupling_cap, config.scheme.value)
    ell = np.arange(config.kappa + 1, dtype=float)
    x = ell * (ell + 1.0) * h
    if config.scheme is Scheme.FORWARD_EM:
        return 1.0 - x, 0
    if config.scheme is Scheme.BACKWARD_EM:
        return 1.0 / (1.0 + x), 1
    raise UnsupportedDriverError("exact schemes have no EM multiplier")


@dataclass(frozen=True, eq=False)
class StatePath:
    """States at the kept grid nodes; row ``i`` is node ``steps[i]``."""

    grid: TimeGrid
    steps: np.ndarray
    states: np.ndarray = field(repr=False)
    max_degree: int = 0

    def __post_init__(self):
        self.states.setflags(write=False)
        if self.states.shape != (self.steps.size, num_coeffs(self.max_degree)):
            raise ConfigurationError("state array does not match steps and degree")

    def field(self, k: int) -> CoeffField:
        """State at grid node ``k``."""
        hit = np.flatnonzero(self.steps == k)
        if hit.size == 0:
            raise ConfigurationError(f"node {k} was not kept")
        return CoeffField(self.max_degree, self.states[hit[0]])

    @property
    def final(self) -> CoeffField:
        return CoeffField(self.max_degree, self.states[-1])


def _kept(grid: TimeGrid, keep) -> np.ndarray:
    if keep is None:
        return np.arange(grid.n + 1)
    steps = np.unique(np.asarray(keep, dtype=np.int64))
    if steps.size == 0 or steps[0] < 0 or steps[-1] > grid.n:
        raise ConfigurationError(f"kept nodes must lie in 0..{grid.n}")
    return steps


def em_evolve(config: SolverConfig, grid: TimeGrid, x0: CoeffField,
              increments: IncrementPath, keep=None) -> StatePath:
    """Run ``X_k = xi X_{k-1} + xi**delta dL_k`` for every mode up to kappa.

    ``keep`` selects the grid nodes to store (default: all of them).
    """
    kappa = config.kappa
    if increments.grid != grid:
        raise ConfigurationError("increments were sampled on a different grid")
    if increments.max_degree < kappa:
        raise ConfigurationError(
            f"increments cover degree {increments.max_degree} < kappa={kappa}")
    xi_deg, delta = degree_multipliers(config, grid.h)
    deg = degrees(kappa)
    xi = xi_deg[deg]
    gain = xi**delta
    M = num_coeffs(kappa)
    inc = increments.increments[:, :M]
    steps = _kept(grid, keep)
    out = np.empty((steps.size, M))
    x = x0.truncate(kappa).coeffs.copy()
    slot = 0
    if steps[0] == 0:
        out[0] = x
        slot = 1
    for k in range(1, grid.n + 1):
        x = xi * x + gain * inc[k - 1]
        if slot < steps.size and steps[slot] == k:
            out[slot] = x
            slot += 1
    return StatePath(grid, steps, out, kappa)


def exact_evolve(config: SolverConfig, grid: TimeGrid, x0: CoeffField, spec: NoiseSpec,
                 wiener: np.ndarray | None = None, jumps: JumpRecord | None = None,
                 keep=None) -> StatePath:
    """Exact truncated mild solution at the grid nodes.

    ``wiener`` holds Wiener-convolution samples at every node (from
    :func:`levysphere.noise.wiener_convolution`), ``jumps`` the Poisson jump
    record. A mixture needs both; they add up mode by mode.
    """
    if not config.scheme.is_exact:
        raise UnsupportedDriverError(f"{config.scheme.value} is not an exact scheme")
    if spec.has_wiener and wiener is None:
        raise UnsupportedDriverError("noise has a Wiener part but no Wiener samples were given")
    if spec.has_poisson and jumps is None:
        raise UnsupportedDriverError("noise has a Poisson part but no jump record was given")
    if not spec.has_wiener and wiener is not None:
        raise UnsupportedDriverError("Wiener samples given for a pure jump driver")
    if not spec.has_poisson and jumps is not None:
        raise UnsupportedDriverError("jump record given for a pure Wiener driver")
    kappa = config.kappa
    M = num_coeffs(kappa)
    deg = degrees(kappa)
    lam = deg * (deg + 1.0)
    steps = _kept(grid, keep)
    x0c = x0.truncate(kappa).coeffs
    out = np.exp(-np.outer(grid.h * steps, lam)) * x0c
    if wiener is not None:
        if wiener.shape[0] != grid.n + 1 or wiener.shape[1] < M:
            raise ConfigurationError("Wiener samples do not cover the grid and kappa")
        out = out + wiener[steps, :M]
    if jumps is not None:
        if jumps.max_degree < kappa:
            raise ConfigurationError("jump record does not cover kappa")
        for i, k in enumerate(steps):
            out[i] += poisson_convolution(spec, jumps, grid.time(int(k)), kappa)
    return StatePath(grid, steps, out, kappa)
