"""Closed-form moments and mean-square errors.

All quantities are sums over modes of per-mode terms that depend on the
mode only through its degree (noise statistics) and through the first two
moments of the initial condition. Per-mode terms are reduced with
``math.fsum`` so the result does not depend on summation order.

Differences of nearly equal exponentials (``exp(-lam t) - xi**k`` and
friends) are rewritten through ``expm1``/``log1p`` forms; for low degrees
and small steps the naive forms lose most of their digits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import CoeffField, degrees, num_coeffs
from .errors import ConfigurationError, DomainError
from .noise import NoiseSpec
from .solver import Scheme, SolverConfig, degree_multipliers
from .timegrid import TimeGrid

# below this value of lam*h the per-cell error integrals are summed cell by
# cell; above it the geometric closed forms lose at most ~4 digits
SMALL_STEP = 1e-2
_SERIES_CUTOFF = 0.1
_SERIES_TERMS = 14


def decay_integral(ell: int, t: float, a: int = 1) -> float:
    """``int_0^t exp(-a l(l+1) (t-s)) ds``, equal to ``t`` for ``l = 0``."""
    if t < 0:
        raise DomainError(f"time must be >= 0, got {t}")
    c = a * ell * (ell + 1.0)
    if c == 0.0:
        return float(t)
    return -math.expm1(-c * t) / c


def decay_integral_array(ell, t: float, a: int = 1) -> np.ndarray:
    if t < 0:
        raise DomainError(f"time must be >= 0, got {t}")
    ell = np.asarray(ell, dtype=float)
    c = a * ell * (ell + 1.0)
    safe = np.where(c == 0.0, 1.0, c)
    return np.where(c == 0.0, t, -np.expm1(-safe * t) / safe)


@dataclass(frozen=True, eq=False)
class InitialData:
    """First two moments of the initial coefficients, mode by mode.

    The initial condition is assumed independent of the noise.
    """

    mean: CoeffField | None = None
    second: CoeffField | None = None

    def __post_init__(self):
        if self.mean is not None and self.second is None:
            raise ConfigurationError("initial mean given without second moments")
        if self.mean is not None and self.second is not None:
            L = max(self.mean.max_degree, self.second.max_degree)
            m = self.mean.truncate(L).coeffs
            s = self.second.truncate(L).coeffs
            if np.any(s < m * m * (1 - 1e-12) - 1e-300):
                raise ConfigurationError("second moments must dominate squared means")

    @classmethod
    def deterministic(cls, x0: CoeffField) -> "InitialData":
        return cls(x0, CoeffField(x0.max_degree, x0.coeffs**2))

    @property
    def is_zero(self) -> bool:
        return self.second is None or not np.any(self.second.coeffs)

    def mean_array(self, max_degree: int) -> np.ndarray:
        if self.mean is None:
            return np.zeros(num_coeffs(max_degree))
        return self.mean.truncate(max_degree).coeffs

    def second_array(self, max_degree: int) -> np.ndarray:
        if self.second is None:
            return np.zeros(num_coeffs(max_degree))
        return self.second.truncate(max_degree).coeffs


ZERO_INITIAL = InitialData()


@dataclass(frozen=True, eq=False)
class MomentReport:
    t: float
    mean_coeffs: CoeffField
    second_moment: float
    contributions: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ErrorBreakdown:
    """Mean-square error split into initial-condition, noise-variance and mean parts.

    ``initial_term_sq`` carries the variance of the initial coefficients,
    ``mean_term_sq`` the squared mean error (initial mean and noise drift
    together), ``variance_term_sq`` the noise fluctuations.
    """

    initial_term_sq: float
    variance_term_sq: float
    mean_term_sq: float

    @property
    def total_sq(self) -> float:
        return math.fsum((self.initial_term_sq, self.variance_term_sq, self.mean_term_sq))

    @property
    def rms(self) -> float:
        return math.sqrt(self.total_sq)


def _tail_slice(lo: int, hi: int):
    """Degrees and packed slots ``lo <= l <= hi``."""
    deg = degrees(hi)[num_coeffs(lo - 1) if lo > 0 else 0:]
    return deg, slice(num_coeffs(lo - 1) if lo > 0 else 0, num_coeffs(hi))


# ---------------------------------------------------------------- spectral


def mean_field(spec: NoiseSpec, x0_mean: CoeffField | None, t: float,
               kappa: int | None = None) -> CoeffField:
    """``E[X(t)]`` truncated at ``kappa`` (default: the noise degree)."""
    L = spec.max_degree if kappa is None else kappa
    deg = degrees(L)
    lam = deg * (deg + 1.0)
    m0 = np.zeros(num_coeffs(L)) if x0_mean is None else x0_mean.truncate(L).coeffs
    drift = spec.degree_mean_rate(L)[deg] * decay_integral_array(deg, t, 1)
    return CoeffField(L, np.exp(-lam * t) * m0 + drift)


def _per_degree(values: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Sum packed per-mode values over the orders of each degree ``lo..hi``."""
    offsets = np.arange(lo, hi + 1) ** 2 - lo * lo
    return np.add.reduceat(values, offsets) if values.size else values


def _spectral_terms(spec: NoiseSpec, x0: InitialData, t: float, lo: int, hi: int):
    """Per-degree initial, variance and mean parts of ``E|X_lm(t)|^2`` for ``lo <= l <= hi``."""
    ell = np.arange(lo, hi + 1, dtype=float)
    mult = 2.0 * ell + 1.0
    m = spec.degree_mean_rate(hi)[lo:]
    v = spec.degree_var_rate(hi)[lo:]
    d1 = decay_integral_array(ell, t, 1)
    d2 = decay_integral_array(ell, t, 2)
    var = mult * v * d2
    if x0.is_zero:
        zero = np.zeros_like(ell)
        return zero, var, mult * (m * d1) ** 2
    _, sl = _tail_slice(lo, hi)
    E1 = x0.mean_array(hi)[sl]
    E2 = x0.second_array(hi)[sl]
    deg = degrees(hi)[sl]
    initial = _per_degree(np.exp(-2.0 * deg * (deg + 1.0) * t) * (E2 - E1 * E1), lo, hi)
    mean = _per_degree((np.exp(-deg * (deg + 1.0) * t) * E1 + (m * d1)[deg - lo]) ** 2, lo, hi)
    return initial, var, mean


def spectral_error_profile(spec: NoiseSpec, x0: InitialData, t: float, L_ref: int):
    """Per-degree ``(initial, variance, mean)`` arrays over ``l = 0..L_ref``.

    The squared spectral error at level ``kappa`` is the sum of the entries
    with ``l > kappa``; computing the profile once serves a whole schedule.
    """
    if t < 0:
        raise DomainError(f"time must be >= 0, got {t}")
    return _spectral_terms(spec, x0, t, 0, L_ref)


def tail_breakdown(profile, kappa: int) -> ErrorBreakdown:
    return ErrorBreakdown(*(math.fsum(part[kappa + 1:]) for part in profile))


def second_moment(spec: NoiseSpec, x0: InitialData, t: float, kappa: int) -> float:
    """``E ||X^(kappa)(t)||^2`` of the truncated exact solution."""
    return spectral_moments(spec, x0, t, kappa).second_moment


def spectral_moments(spec: NoiseSpec, x0: InitialData, t: float, kappa: int) -> MomentReport:
    if t < 0:
        raise DomainError(f"time must be >= 0, got {t}")
    deg = degrees(kappa)
    lam = deg * (deg + 1.0)
    e = np.exp(-lam * t)
    mean = mean_field(spec, x0.mean, t, kappa)
    E1 = x0.mean_array(kappa)
    E2 = x0.second_array(kappa)
    var = spec.var_rates(kappa) * decay_integral_array(deg, t, 2)
    contrib = e * e * (E2 - E1 * E1) + mean.coeffs**2 + var
    return MomentReport(t, mean, math.fsum(contrib), contrib)


def spectral_strong_error_sq(spec: NoiseSpec, x0: InitialData, t: float, kappa: int,
                             L_ref: int) -> ErrorBreakdown:
    """``E ||X^(L_ref)(t) - X^(kappa)(t)||^2``: the modes ``kappa < l <= L_ref``."""
    if L_ref <= kappa:
        raise ConfigurationError(f"reference degree {L_ref} must exceed kappa={kappa}")
    if t < 0:
        raise DomainError(f"time must be >= 0, got {t}")
    return ErrorBreakdown(*(math.fsum(part) for part in _spectral_terms(spec, x0, t, kappa + 1, L_ref)))


def spectral_mean_error_sq(spec: NoiseSpec, x0: InitialData, t: float, kappa: int,
                           L_ref: int) -> float:
    """``||E X^(L_ref)(t) - E X^(kappa)(t)||^2``."""
    return spectral_strong_error_sq(spec, x0, t, kappa, L_ref).mean_term_sq


def spectral_second_moment_error(spec: NoiseSpec, x0: InitialData, t: float, kappa: int,
                                 L_ref: int) -> float:
    """``E||X^(L_ref)(t)||^2 - E||X^(kappa)(t)||^2``, summed over the tail directly."""
    b = spectral_strong_error_sq(spec, x0, t, kappa, L_ref)
    # the tail of the second moment also holds E[X0]^2 e^2, already inside mean_term_sq
    return b.total_sq


def reference_tail_bound(spec: NoiseSpec, L_ref: int) -> float:
    """Upper bound on the noise part of ``E||X(t) - X^(L_ref)(t)||^2`` for any ``t``.

    Uses ``(2l+1) d2 <= 1/l`` and ``(2l+1) d1**2 <= 2/l**3`` for ``l > L_ref``
    and compares the sums with integrals.
    """
    a = spec.alpha
    L = float(L_ref)
    var_base = (spec.wiener_var if spec.has_wiener else 0.0) + (
        spec.intensity * spec.jump_size**2 if spec.has_poisson else 0.0)
    mean_base = 0.0 if (not spec.has_poisson or spec.compensated) else spec.intensity * spec.jump_size
    return var_base * L ** (-a) / a + mean_base**2 * 2.0 * L ** (-a - 2.0) / (a + 2.0)


# -------------------------------------------------------------- EM helpers


def _series(x: np.ndarray, coeff) -> np.ndarray:
    out = np.zeros_like(x)
    for n in range(_SERIES_TERMS, 0, -1):
        out = out * x + coeff(n)
    return out * x


def _log_excess(x: np.ndarray, scheme: Scheme) -> np.ndarray:
    """``log(xi) + lam h`` for the EM multiplier, accurate for small ``x = lam h``.

    Only valid where ``xi > 0``.
    """
    x = np.asarray(x, dtype=float)
    small = x < _SERIES_CUTOFF
    xs = np.where(small, x, 0.0)
    if scheme is Scheme.BACKWARD_EM:
        # x - log1p(x) = sum_{n>=2} (-1)^n x^n / n
        ser = _series(xs, lambda n: 0.0 if n < 2 else (-1.0) ** n / n)
        with np.errstate(invalid="ignore", divide="ignore"):
            direct = x - np.log1p(x)
    else:
        # x + log1p(-x) = -sum_{n>=2} x^n / n
        ser = _series(xs, lambda n: 0.0 if n < 2 else -1.0 / n)
        with np.errstate(invalid="ignore", divide="ignore"):
            direct = x + np.log1p(-np.minimum(x, 1.0))
    return np.where(small, ser, direct)


def _phi1(x: np.ndarray) -> np.ndarray:
    """``(1/x) int_0^x (exp(-y) - 1) dy``."""
    small = x < _SERIES_CUTOFF
    xs = np.where(small, x, 0.0)
    ser = _series(xs, lambda n: (-1.0) ** n / math.factorial(n + 1))
    xd = np.where(small, 1.0, x)
    return np.where(small, ser, -np.expm1(-xd) / xd - 1.0)


def _phi2(x: np.ndarray) -> np.ndarray:
    """``(1/x) int_0^x (exp(-y) - 1)**2 dy``."""
    small = x < _SERIES_CUTOFF
    xs = np.where(small, x, 0.0)
    ser = _series(xs, lambda n: 0.0 if n < 2 else (-1.0) ** n * (2.0**n - 2.0) / math.factorial(n + 1))
    xd = np.where(small, 1.0, x)
    direct = 1.0 - 2.0 * (-np.expm1(-xd)) / xd + (-np.expm1(-2.0 * xd)) / (2.0 * xd)
    return np.where(small, ser, direct)


@dataclass(frozen=True)
class _EMDegreeTerms:
    """Per-degree EM quantities at node ``k``; arrays over ``l = 0..kappa``."""

    lam: np.ndarray
    xi: np.ndarray
    delta: int
    xik: np.ndarray        # xi**k
    decay_gap: np.ndarray  # exp(-lam t_k) - xi**k
    s1: np.ndarray         # h * sum_j xi**(k-j+delta)
    s2: np.ndarray         # h * sum_j xi**(2(k-j+delta))


def _geom(z: np.ndarray, one_minus_z: np.ndarray, k: int) -> np.ndarray:
    """``sum_{i<k} z**i`` using a precomputed ``1 - z``."""
    out = np.full(z.shape, float(k))
    pos = (z > 0) & (one_minus_z != 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        logz = np.log(np.where(pos, z, 1.0))
        out = np.where(pos, -np.expm1(k * logz) / np.where(pos, one_minus_z, 1.0), out)
        other = (~pos) & (one_minus_z != 0)
        out = np.where(other, (1.0 - z**k) / np.where(other, one_minus_z, 1.0), out)
    return out


def _gap(e: np.ndarray, xik: np.ndarray, keps: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """``e - xik`` where ``xik = e * exp(keps)``; the expm1 form only where they nearly cancel."""
    near = pos & (np.abs(keps) < 1.0)
    return np.where(near, -e * np.expm1(np.where(near, keps, 0.0)), e - xik)


def _em_terms(config: SolverConfig, grid: TimeGrid, k: int) -> _EMDegreeTerms:
    if not 0 <= k <= grid.n:
        raise ConfigurationError(f"node {k} outside 0..{grid.n}")
    h = grid.h
    xi, delta = degree_multipliers(config, h)
    ell = np.arange(config.kappa + 1, dtype=float)
    lam = ell * (ell + 1.0)
    x = lam * h
    backward = config.scheme is Scheme.BACKWARD_EM
    one_minus_xi = x / (1.0 + x) if backward else x
    xik = xi**k
    pos = xi > 0
    eps = np.where(pos, _log_excess(np.where(pos, x, 0.0), config.scheme), 0.0)
    e = np.exp(-lam * k * h)
    decay_gap = _gap(e, xik, k * eps, pos)
    s1 = h * xi**delta * _geom(xi, one_minus_xi, k)
    s2 = h * xi ** (2 * delta) * _geom(xi * xi, one_minus_xi * (1.0 + xi), k)
    return _EMDegreeTerms(lam, xi, delta, xik, decay_gap, s1, s2)


def _expand(per_degree: np.ndarray, kappa: int) -> np.ndarray:
    return per_degree[degrees(kappa)]


def em_moment_recursion(spec: NoiseSpec, config: SolverConfig, grid: TimeGrid,
                        x0: InitialData, k: int) -> MomentReport:
    """Mean and second moment of the EM approximation at node ``k``."""
    kappa = config.kappa
    T = _em_terms(config, grid, k)
    m = _expand(spec.degree_mean_rate(kappa), kappa)
    v = _expand(spec.degree_var_rate(kappa), kappa)
    xik, s1, s2 = (_expand(a, kappa) for a in (T.xik, T.s1, T.s2))
    E1 = x0.mean_array(kappa)
    E2 = x0.second_array(kappa)
    mean = xik * E1 + m * s1
    contrib = xik**2 * (E2 - E1 * E1) + mean**2 + v * s2
    return MomentReport(grid.time(k), CoeffField(kappa, mean), math.fsum(contrib), contrib)


def _cell_error_integral(lam: float, x: float, h: float, xi: float, eps: float,
                         delta: int, k: int, chunk: int = 1 << 18) -> float:
    """``sum_j int_{cell j} (exp(-lam(t_k - s)) - xi**(k-j+delta))**2 ds``, cell by cell.

    With ``i = k - j`` and ``w`` the offset inside the cell the integrand is
    ``(A (e^{-lam w} - 1) + d)**2``, ``A = e^{-i x}`` and
    ``d = A - xi**(i+delta) = -A expm1(-delta x + (i+delta) eps)``, which
    keeps every piece free of cancellation.
    """
    xa = np.array([x])
    I1 = h * float(_phi1(xa)[0])
    I2 = h * float(_phi2(xa)[0])
    parts = []
    for start in range(0, k, chunk):
        i = np.arange(start, min(k, start + chunk), dtype=float)
        A = np.exp(-i * x)
        d = -A * np.expm1(-delta * x + (i + delta) * eps)
        # pairwise summation per chunk is ample here and far cheaper than fsum
        parts.append(float(np.sum(A * A * I2 + 2.0 * A * d * I1 + h * d * d)))
    return math.fsum(parts)


def _em_error_integrals(config: SolverConfig, grid: TimeGrid, k: int, T: _EMDegreeTerms,
                        squares: bool = True):
    """Per degree: ``sum_j int f_j`` and ``sum_j int f_j**2`` over the first ``k`` cells.

    With ``squares=False`` the second array is left at zero.
    """
    h = grid.h
    lam = T.lam
    safe = np.where(lam == 0, 1.0, lam)
    int_f = np.where(lam == 0, 0.0, -T.decay_gap / safe)
    int_f2 = np.zeros_like(lam)
    if k == 0 or not squares:
        return int_f, int_f2
    x = lam * h
    r = np.exp(-x)
    for ell in range(1, lam.size):
        xl, xil, L_ = x[ell], T.xi[ell], lam[ell]
        if xil > 0 and xl < SMALL_STEP:
            eps = float(_log_excess(np.array([xl]), config.scheme)[0])
            int_f2[ell] = _cell_error_integral(L_, xl, h, xil, eps, T.delta, k)
            continue
        A1 = -math.expm1(-xl) / L_
        A2 = -math.expm1(-2.0 * xl) / (2.0 * L_)
        rr = np.array([r[ell] ** 2])
        g_rr = float(_geom(rr, np.array([-math.expm1(-2.0 * xl)]), k)[0])
        rx = r[ell] * xil
        g_rx = float(_geom(np.array([rx]), np.array([1.0 - rx]), k)[0])
        g_xx = float(_geom(np.array([xil * xil]), np.array([1.0 - xil * xil]), k)[0])
        val = A2 * g_rr - 2.0 * xil**T.delta * A1 * g_rx + h * xil ** (2 * T.delta) * g_xx
        int_f2[ell] = max(val, 0.0)
    return int_f, int_f2


def em_strong_error_sq(spec: NoiseSpec, config: SolverConfig, grid: TimeGrid,
                       x0: InitialData, k: int) -> ErrorBreakdown:
    """``E ||X^(kappa)(t_k) - X^(kappa,h)(t_k)||^2`` with common driving noise."""
    if config.scheme.is_exact:
        return ErrorBreakdown(0.0, 0.0, 0.0)
    kappa = config.kappa
    T = _em_terms(config, grid, k)
    int_f, int_f2 = _em_error_integrals(config, grid, k, T)
    m = _expand(spec.degree_mean_rate(kappa), kappa)
    v = _expand(spec.degree_var_rate(kappa), kappa)
    gap = _expand(T.decay_gap, kappa)
    E1 = x0.mean_array(kappa)
    E2 = x0.second_array(kappa)
    initial = gap**2 * (E2 - E1 * E1)
    mean = (gap * E1 + m * _expand(int_f, kappa)) ** 2
    var = v * _expand(int_f2, kappa)
    return ErrorBreakdown(math.fsum(initial), math.fsum(var), math.fsum(mean))


def em_mean_error_sq(spec: NoiseSpec, config: SolverConfig, grid: TimeGrid,
                     x0: InitialData, k: int) -> float:
    """``||E X^(kappa)(t_k) - E X^(kappa,h)(t_k)||^2``."""
    if config.scheme.is_exact:
        return 0.0
    kappa = config.kappa
    T = _em_terms(config, grid, k)
    int_f, _ = _em_error_integrals(config, grid, k, T, squares=False)
    m = _expand(spec.degree_mean_rate(kappa), kappa)
    gap = _expand(T.decay_gap, kappa)
    return math.fsum((gap * x0.mean_array(kappa) + m * _expand(int_f, kappa)) ** 2)


def em_second_moment_error(spec: NoiseSpec, config: SolverConfig, grid: TimeGrid,
                           x0: InitialData, k: int) -> float:
    """``E||X^(kappa)(t_k)||^2 - E||X^(kappa,h)(t_k)||^2`` (signed)."""
    if config.scheme.is_exact:
        return 0.0
    kappa = config.kappa
    h = grid.h
    t = grid.time(k)
    T = _em_terms(config, grid, k)
    lam = T.lam
    x = lam * h
    e = np.exp(-lam * t)
    safe = np.where(lam == 0, 1.0, lam)
    d1 = decay_integral_array(np.arange(kappa + 1), t, 1)
    gap = T.decay_gap                        # e - xi^k
    d1_gap = np.where(lam == 0, 0.0, -gap / safe)   # d1 - s1
    # d2 - s2 = K (1 - e^{-2 lam t}) - c (e^{-2 lam t} - xi^{2k})
    backward = config.scheme is Scheme.BACKWARD_EM
    if backward:
        K = h / (2.0 * (2.0 + x))
        c = 1.0 / (safe * (2.0 + x))
    else:
        K = -h / (2.0 * (2.0 - x))
        c = 1.0 / (safe * (2.0 - x))
    pos = T.xi > 0
    eps = np.where(pos, _log_excess(np.where(pos, x, 0.0), config.scheme), 0.0)
    e2 = e * e
    gap2 = _gap(e2, T.xi ** (2 * k), 2 * k * eps, pos)
    d2_gap = np.where(lam == 0, 0.0, K * -np.expm1(-2.0 * lam * t) - c * gap2)
    m = _expand(spec.degree_mean_rate(kappa), kappa)
    v = _expand(spec.degree_var_rate(kappa), kappa)
    E1 = x0.mean_array(kappa)
    E2 = x0.second_array(kappa)
    gapm, xikm, s1m = _expand(gap, kappa), _expand(T.xik, kappa), _expand(T.s1, kappa)
    d1m, d1gm = _expand(d1, kappa), _expand(d1_gap, kappa)
    diff = (
        E2 * gapm * (_expand(e, kappa) + xikm)
        + 2.0 * E1 * m * (_expand(e, kappa) * d1gm + s1m * gapm)
        + m * m * d1gm * (d1m + s1m)
        + v * _expand(d2_gap, kappa)
    )
    return math.fsum(diff)
