"""Lévy noise on the sphere, expanded in real spherical harmonics.

Each coefficient process is ``L[l,m](t) = a_l * Lhat[l,m](t)`` with
``a_l = l**(-alpha/2)`` for ``l >= 1`` and ``a_0`` a fixed constant. The
``Lhat`` are identically distributed: a Brownian motion with variance
``wiener_var`` per unit time, a Poisson process with rate ``intensity``
and fixed jump size, or the sum of both. In the ``shared_poisson`` kind one
Poisson path drives every mode.

Randomness comes from counter-based Philox streams keyed by
``(seed, purpose, sample)``. A sample always draws all modes up to the
requested degree in packed order, so a field sampled at a coarse degree is
never drawn separately: coarse levels are restrictions of one fine draw.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import HarmonicIndex, degrees, num_coeffs
from .errors import ConfigurationError, DomainError, UnsupportedDriverError
from .timegrid import TimeGrid


class DriverKind(str, enum.Enum):
    WIENER = "wiener"
    POISSON = "poisson"
    MIXTURE = "mixture"
    SHARED_POISSON = "shared_poisson"

    @classmethod
    def parse(cls, text: str) -> "DriverKind":
        key = text.strip().lower().replace("-", "_")
        aliases = {"wiener_plus_poisson": "mixture", "wienerpluspoisson": "mixture",
                   "sharedpoisson": "shared_poisson", "brownian": "wiener"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown noise kind {text!r}") from None


# stream purposes; part of the RNG key, never change their values
WIENER_INCREMENTS = 1
POISSON_INCREMENTS = 2
WIENER_CONVOLUTION = 3
JUMP_COUNTS = 4
JUMP_TIMES = 5
INITIAL_CONDITION = 6


def stream(seed: int, purpose: int, sample: int = 0) -> np.random.Generator:
    """Independent Philox generator for ``(seed, purpose, sample)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(sample)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoiseSpec:
    kind: DriverKind
    alpha: float
    max_degree: int = 32
    intensity: float = 1.0
    jump_size: float = 1.0
    wiener_var: float = 1.0
    a0: float = 1.0
    compensated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", DriverKind(self.kind))
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be > 0, got {self.alpha}")
        if self.max_degree < 0:
            raise ConfigurationError(f"max_degree must be >= 0, got {self.max_degree}")
        # zero intensities are allowed and give the noise-free equation
        for name in ("intensity", "wiener_var", "a0"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ConfigurationError(f"{name} must be finite and >= 0, got {value}")
        if not math.isfinite(self.jump_size):
            raise ConfigurationError(f"jump_size must be finite, got {self.jump_size}")

    @property
    def has_wiener(self) -> bool:
        return self.kind in (DriverKind.WIENER, DriverKind.MIXTURE)

    @property
    def has_poisson(self) -> bool:
        return self.kind is not DriverKind.WIENER

    def with_degree(self, max_degree: int) -> "NoiseSpec":
        from dataclasses import replace
        return replace(self, max_degree=max_degree)

    # per-degree statistics; every order m of a degree shares them
    def scales(self, max_degree: int | None = None) -> np.ndarray:
        L = self.max_degree if max_degree is None else max_degree
        ell = np.arange(L + 1, dtype=float)
        a = np.empty(L + 1)
        a[0] = self.a0
        a[1:] = ell[1:] ** (-self.alpha / 2.0)
        return a

    def degree_mean_rate(self, max_degree: int | None = None) -> np.ndarray:
        a = self.scales(max_degree)
        if not self.has_poisson or self.compensated:
            return np.zeros_like(a)
        return a * self.intensity * self.jump_size

    def degree_var_rate(self, max_degree: int | None = None, *, wiener: bool = True,
                        poisson: bool = True) -> np.ndarray:
        a2 = self.scales(max_degree) ** 2
        v = np.zeros_like(a2)
        if wiener and self.has_wiener:
            v += a2 * self.wiener_var
        if poisson and self.has_poisson:
            v += a2 * self.intensity * self.jump_size**2
        return v

    def mean_rates(self, max_degree: int | None = None) -> np.ndarray:
        L = self.max_degree if max_degree is None else max_degree
        return self.degree_mean_rate(L)[degrees(L)]

    def var_rates(self, max_degree: int | None = None) -> np.ndarray:
        L = self.max_degree if max_degree is None else max_degree
        return self.degree_var_rate(L)[degrees(L)]


@dataclass(frozen=True)
class ModeStats:
    mean_rate: float
    var_rate: float


def mode_scale(spec: NoiseSpec, ell: int) -> float:
    if ell < 0:
        raise DomainError(f"degree must be nonnegative, got {ell}")
    return spec.a0 if ell == 0 else float(ell) ** (-spec.alpha / 2.0)


def mode_stats(spec: NoiseSpec, idx: HarmonicIndex) -> ModeStats:
    return ModeStats(
        float(spec.degree_mean_rate(idx.ell)[idx.ell]),
        float(spec.degree_var_rate(idx.ell)[idx.ell]),
    )


def sobolev_trace(spec: NoiseSpec, eta: float, max_degree: int | None = None) -> np.ndarray:
    """Partial sums over ``l <= L`` of ``sum_m (1+l(l+1))**eta (v + mean**2)``."""
    L = spec.max_degree if max_degree is None else max_degree
    ell = np.arange(L + 1, dtype=float)
    w = (1.0 + ell * (ell + 1.0)) ** eta * (2.0 * ell + 1.0)
    return np.cumsum(w * (spec.degree_var_rate(L) + spec.degree_mean_rate(L) ** 2))


@dataclass(frozen=True, eq=False)
class IncrementPath:
    """Increments ``dL[l,m](t_j)``, one row per step, one column per mode."""

    grid: TimeGrid
    increments: np.ndarray = field(repr=False)
    max_degree: int = 0

    def __post_init__(self):
        shape = (self.grid.n, num_coeffs(self.max_degree))
        if self.increments.shape != shape:
            raise ConfigurationError(
                f"increment array has shape {self.increments.shape}, expected {shape}"
            )

    def aggregate(self, factor: int) -> "IncrementPath":
        """Sum blocks of ``factor`` consecutive steps onto the coarser grid."""
        coarse = self.grid.coarsen(factor)
        inc = self.increments.reshape(coarse.n, factor, -1).sum(axis=1)
        return IncrementPath(coarse, inc, self.max_degree)

    def truncate(self, kappa: int) -> "IncrementPath":
        if kappa > self.max_degree:
            raise ConfigurationError(f"cannot extend increments from L={self.max_degree} to {kappa}")
        return IncrementPath(self.grid, self.increments[:, : num_coeffs(kappa)], kappa)

    def path(self) -> np.ndarray:
        """Cumulative values ``L[l,m](t_k)`` for ``k = 0..n``."""
        out = np.zeros((self.grid.n + 1, self.increments.shape[1]))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


def sample_increments(spec: NoiseSpec, grid: TimeGrid, seed: int, sample: int = 0,
                      max_degree: int | None = None) -> IncrementPath:
    """Draw ``dL`` on every step of ``grid`` for all modes up to ``max_degree``.

    The Wiener and Poisson parts use separate streams, so a mixture path is
    exactly the sum of a Wiener-only and a Poisson-only path with the same
    ``seed`` and ``sample``.
    """
    if not isinstance(grid, TimeGrid) or grid.n < 1:
        raise ConfigurationError("sample_increments needs a grid with n >= 1")
    L = spec.max_degree if max_degree is None else max_degree
    deg = degrees(L)
    h = grid.h
    inc = np.zeros((grid.n, deg.size))
    if spec.has_wiener:
        sd = np.sqrt(spec.degree_var_rate(L, poisson=False) * h)[deg]
        inc += stream(seed, WIENER_INCREMENTS, sample).standard_normal((grid.n, deg.size)) * sd
    if spec.has_poisson:
        amp = (spec.scales(L) * spec.jump_size)[deg]
        rng = stream(seed, POISSON_INCREMENTS, sample)
        if spec.kind is DriverKind.SHARED_POISSON:
            counts = rng.poisson(spec.intensity * h, size=grid.n).astype(float)
            inc += counts[:, None] * amp[None, :]
        else:
            counts = rng.poisson(spec.intensity * h, size=(grid.n, deg.size)).astype(float)
            inc += counts * amp
        if spec.compensated:
            inc -= amp * spec.intensity * h
    return IncrementPath(grid, inc, L)


@dataclass(frozen=True, eq=False)
class JumpRecord:
    """Jump instants of the Poisson part on ``[0, horizon]``.

    ``modes[i]`` is the packed mode of jump ``i``; jumps are sorted by mode,
    then by time. For a shared driver ``modes`` is ``None`` and every jump
    hits all modes.
    """

    horizon: float
    times: np.ndarray = field(repr=False)
    modes: np.ndarray | None = field(default=None, repr=False)
    max_degree: int = 0

    def __post_init__(self):
        t = self.times
        if t.size and (t.min() < 0.0 or t.max() > self.horizon):
            raise ConfigurationError("jump times must lie in [0, horizon]")
        if self.modes is None:
            if np.any(np.diff(t) <= 0):
                raise ConfigurationError("jump times must be strictly increasing")
        else:
            if self.modes.shape != t.shape:
                raise ConfigurationError("modes and times must have equal length")
            same = np.diff(self.modes) == 0
            if np.any(np.diff(self.modes) < 0) or np.any(np.diff(t)[same] <= 0):
                raise ConfigurationError("jumps must be sorted by mode, then strictly by time")

    @property
    def shared(self) -> bool:
        return self.modes is None

    def times_for(self, flat: int) -> np.ndarray:
        if self.modes is None:
            return self.times
        lo, hi = np.searchsorted(self.modes, [flat, flat + 1])
        return self.times[lo:hi]

    def truncate(self, kappa: int) -> "JumpRecord":
        if self.modes is None:
            return JumpRecord(self.horizon, self.times, None, kappa)
        keep = self.modes < num_coeffs(kappa)
        return JumpRecord(self.horizon, self.times[keep], self.modes[keep], kappa)

    def increments(self, grid: TimeGrid) -> np.ndarray:
        """Jump counts per step of ``grid`` and per mode, cells ``(t_{j-1}, t_j]``."""
        if abs(grid.T - self.horizon) > 1e-12 * max(1.0, self.horizon):
            raise ConfigurationError("grid horizon differs from the jump record horizon")
        cell = np.clip(np.ceil(self.times / grid.h).astype(np.int64) - 1, 0, grid.n - 1)
        if self.modes is None:
            counts = np.bincount(cell, minlength=grid.n).astype(float)
            return np.repeat(counts[:, None], num_coeffs(self.max_degree), axis=1)
        M = num_coeffs(self.max_degree)
        flat = cell * M + self.modes
        return np.bincount(flat, minlength=grid.n * M).astype(float).reshape(grid.n, M)


def jump_increments(spec: NoiseSpec, jumps: JumpRecord, grid: TimeGrid,
                    max_degree: int | None = None) -> IncrementPath:
    """Poisson-part increments on ``grid`` read off a jump record.

    Time stepping driven by these increments sees the same jumps as the
    exact convolution of the same record, which couples the two pathwise.
    """
    L = jumps.max_degree if max_degree is None else max_degree
    if L > jumps.max_degree:
        raise ConfigurationError(f"jump record covers degree {jumps.max_degree} < {L}")
    deg = degrees(L)
    amp = (spec.scales(L) * spec.jump_size)[deg]
    inc = jumps.truncate(L).increments(grid) * amp
    if spec.compensated:
        inc -= amp * spec.intensity * grid.h
    return IncrementPath(grid, inc, L)


def sample_jump_times(spec: NoiseSpec, T: float, seed: int, sample: int = 0,
                      max_degree: int | None = None) -> JumpRecord:
    if not spec.has_poisson:
        raise UnsupportedDriverError("jump times need a Poisson component")
    L = spec.max_degree if max_degree is None else max_degree
    if T == 0.0:
        return JumpRecord(0.0, np.empty(0), None if spec.kind is DriverKind.SHARED_POISSON
                          else np.empty(0, dtype=np.int64), L)
    rate = spec.intensity * T
    counts_rng = stream(seed, JUMP_COUNTS, sample)
    times_rng = stream(seed, JUMP_TIMES, sample)
    if spec.kind is DriverKind.SHARED_POISSON:
        n = counts_rng.poisson(rate)
        return JumpRecord(T, np.sort(times_rng.uniform(0.0, T, size=n)), None, L)
    counts = counts_rng.poisson(rate, size=num_coeffs(L))
    times = times_rng.uniform(0.0, T, size=int(counts.sum()))
    modes = np.repeat(np.arange(counts.size, dtype=np.int64), counts)
    # modes are already grouped, so one float key orders by (mode, time);
    # fall back to lexsort if rounding in the key produced a tie
    order = np.argsort(modes + times / (2.0 * T), kind="stable")
    times, modes = times[order], modes[order]
    same = np.diff(modes) == 0
    if np.any(np.diff(times)[same] <= 0):
        order = np.lexsort((times, modes))
        times, modes = times[order], modes[order]
    return JumpRecord(T, times, modes, L)


def poisson_convolution(spec: NoiseSpec, jumps: JumpRecord, t: float,
                        max_degree: int | None = None) -> np.ndarray:
    """``int_0^t exp(-l(l+1)(t-s)) dL[l,m](s)`` for the Poisson part, every mode.

    Pathwise finite sum over the jumps before ``t``; no time discretization.
    """
    L = jumps.max_degree if max_degree is None else min(max_degree, jumps.max_degree)
    M = num_coeffs(L)
    deg = degrees(L)
    lam = (deg * (deg + 1.0))
    amp = (spec.scales(L) * spec.jump_size)[deg]
    if jumps.modes is None:
        tj = jumps.times[jumps.times <= t]
        # sum_i exp(-lam (t - t_i)) for every distinct degree
        lam_deg = np.arange(L + 1) * (np.arange(L + 1) + 1.0)
        per_deg = np.exp(-np.outer(lam_deg, t - tj)).sum(axis=1)
        out = amp * per_deg[deg]
    else:
        sel = (jumps.times <= t) & (jumps.modes < M)
        mo = jumps.modes[sel]
        w = np.exp(-lam[mo] * (t - jumps.times[sel]))
        out = amp * np.bincount(mo, weights=w, minlength=M)
    if spec.compensated:
        from .moments import decay_integral_array
        out = out - amp * spec.intensity * decay_integral_array(deg, t, 1)
    return out


def exact_convolution_poisson(idx: HarmonicIndex, spec: NoiseSpec, jumps: JumpRecord,
                              t: float) -> float:
    if not spec.has_poisson:
        raise UnsupportedDriverError("Poisson convolution needs a Poisson component")
    lam = idx.ell * (idx.ell + 1.0)
    tj = jumps.times_for(idx.flat)
    tj = tj[tj <= t]
    value = mode_scale(spec, idx.ell) * spec.jump_size * math.fsum(np.exp(-lam * (t - tj)))
    if spec.compensated:
        from .moments import decay_integral
        value -= mode_scale(spec, idx.ell) * spec.intensity * spec.jump_size * decay_integral(idx.ell, t, 1)
    return value


def wiener_convolution(spec: NoiseSpec, grid: TimeGrid, seed: int, sample: int = 0,
                       max_degree: int | None = None) -> np.ndarray:
    """Exact samples of the Wiener stochastic convolution at the grid nodes.

    Shape ``(n+1, num_modes)``. Uses the Ornstein-Uhlenbeck recursion
    ``Y_k = exp(-lam h) Y_{k-1} + G_k`` with Gaussian ``G_k`` of variance
    ``v (1 - exp(-2 lam h)) / (2 lam)``.
    """
    if not spec.has_wiener:
        raise UnsupportedDriverError("Wiener convolution needs a Wiener component")
    from .moments import decay_integral_array
    L = spec.max_degree if max_degree is None else max_degree
    deg = degrees(L)
    lam = deg * (deg + 1.0)
    decay = np.exp(-lam * grid.h)
    sd = np.sqrt(spec.degree_var_rate(L, poisson=False)[deg] * decay_integral_array(deg, grid.h, 2))
    g = stream(seed, WIENER_CONVOLUTION, sample).standard_normal((grid.n, deg.size))
    out = np.zeros((grid.n + 1, deg.size))
    for k in range(1, grid.n + 1):
        out[k] = decay * out[k - 1] + sd * g[k - 1]
    return out


def exact_convolution_wiener(idx: HarmonicIndex, spec: NoiseSpec, grid: TimeGrid,
                             seed: int, sample: int = 0) -> np.ndarray:
    """Single-mode column of :func:`wiener_convolution` (same stream)."""
    L = max(idx.ell, spec.max_degree)
    return wiener_convolution(spec, grid, seed, sample, max_degree=L)[:, idx.flat]
