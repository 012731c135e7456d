"""Real spherical harmonics on the unit sphere.

Coefficients of a band-limited field are stored degree-major in a flat
array, the pair ``(ell, m)`` sitting at ``ell**2 + ell + m``.

The associated Legendre functions carry no Condon-Shortley phase; the only
sign is the explicit ``(-1)**m`` in front of the ``m != 0`` harmonics::

    Y[l, 0]  = N(l, 0) P(l, 0)(cos t)
    Y[l, m]  = sqrt(2) (-1)^m N(l, m) P(l, m)(cos t) sin(m p)      m > 0
    Y[l, -m] = sqrt(2) (-1)^m N(l, m) P(l, m)(cos t) cos(m p)      m > 0

with ``N(l, m) = sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

FOUR_PI = 4.0 * math.pi


def num_coeffs(max_degree: int) -> int:
    """Number of real harmonics with degree <= ``max_degree``."""
    return (max_degree + 1) ** 2


def packed_index(ell: int, m: int) -> int:
    if ell < 0 or abs(m) > ell:
        raise DomainError(f"invalid harmonic index (ell={ell}, m={m})")
    return ell * ell + ell + m


def unpack_index(index: int) -> tuple[int, int]:
    if index < 0:
        raise DomainError(f"negative packed index {index}")
    ell = math.isqrt(index)
    return ell, index - ell * ell - ell


def degrees(max_degree: int) -> np.ndarray:
    """Degree ``ell`` of every packed slot up to ``max_degree``."""
    ell = np.arange(max_degree + 1)
    return np.repeat(ell, 2 * ell + 1)


def orders(max_degree: int) -> np.ndarray:
    """Order ``m`` of every packed slot up to ``max_degree``."""
    return np.concatenate([np.arange(-l, l + 1) for l in range(max_degree + 1)])


def laplacian_eigenvalue(ell: int) -> float:
    """Eigenvalue of the Laplace-Beltrami operator on degree ``ell``."""
    if ell < 0:
        raise DomainError(f"degree must be nonnegative, got {ell}")
    return -float(ell * (ell + 1))


@dataclass(frozen=True)
class HarmonicIndex:
    ell: int
    m: int

    def __post_init__(self):
        if self.ell < 0 or abs(self.m) > self.ell:
            raise DomainError(f"invalid harmonic index (ell={self.ell}, m={self.m})")

    @property
    def flat(self) -> int:
        return self.ell * self.ell + self.ell + self.m

    @classmethod
    def from_flat(cls, index: int) -> "HarmonicIndex":
        return cls(*unpack_index(index))


@dataclass(frozen=True)
class SpherePoint:
    theta: float
    phi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi:
            raise DomainError(f"colatitude {self.theta} outside [0, pi]")
        if not 0.0 <= self.phi < 2.0 * math.pi:
            raise DomainError(f"longitude {self.phi} outside [0, 2 pi)")


@dataclass(frozen=True, eq=False)
class CoeffField:
    """Real coefficients of a field band-limited to ``max_degree``."""

    max_degree: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.max_degree < 0:
            raise DomainError(f"max_degree must be >= 0, got {self.max_degree}")
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (num_coeffs(self.max_degree),):
            raise DomainError(
                f"expected {num_coeffs(self.max_degree)} coefficients for "
                f"L={self.max_degree}, got shape {c.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise DomainError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, max_degree: int) -> "CoeffField":
        return cls(max_degree, np.zeros(num_coeffs(max_degree)))

    @classmethod
    def from_modes(cls, max_degree: int, modes: dict[tuple[int, int], float]) -> "CoeffField":
        c = np.zeros(num_coeffs(max_degree))
        for (ell, m), value in modes.items():
            if ell > max_degree:
                raise DomainError(f"degree {ell} exceeds max_degree {max_degree}")
            c[packed_index(ell, m)] = value
        return cls(max_degree, c)

    def __getitem__(self, lm: tuple[int, int]) -> float:
        ell, m = lm
        if ell > self.max_degree:
            return 0.0
        return float(self.coeffs[packed_index(ell, m)])

    def truncate(self, kappa: int) -> "CoeffField":
        """Restrict (or zero-pad) to degrees ``<= kappa``."""
        n = num_coeffs(kappa)
        if kappa <= self.max_degree:
            return CoeffField(kappa, self.coeffs[:n])
        c = np.zeros(n)
        c[: self.coeffs.size] = self.coeffs
        return CoeffField(kappa, c)

    def __add__(self, other: "CoeffField") -> "CoeffField":
        L = max(self.max_degree, other.max_degree)
        return CoeffField(L, self.truncate(L).coeffs + other.truncate(L).coeffs)

    def scaled(self, factor: float) -> "CoeffField":
        return CoeffField(self.max_degree, factor * self.coeffs)

    def l2_norm(self) -> float:
        return math.sqrt(sobolev_norm_sq(self, 0.0))


def assoc_legendre(ell: int, m: int, x):
    """Associated Legendre function ``P(ell, m)(x)`` without the Condon-Shortley phase.

    Uses the upward recurrence in ``ell`` at fixed ``m`` starting from
    ``P(m, m) = (2m-1)!! (1-x^2)^(m/2)``, so ``P(1, 1)(x) = +sqrt(1-x^2)``.
    Accepts scalar or array ``x``.
    """
    if not (0 <= m <= ell):
        raise DomainError(f"need 0 <= m <= ell, got ell={ell}, m={m}")
    xa = np.asarray(x, dtype=float)
    if np.any(np.abs(xa) > 1.0):
        raise DomainError("|x| must not exceed 1")
    s = np.sqrt((1.0 - xa) * (1.0 + xa))
    pmm = np.ones_like(xa)
    for k in range(1, m + 1):
        pmm = pmm * (2 * k - 1) * s
    if ell == m:
        out = pmm
    else:
        prev, cur = pmm, xa * (2 * m + 1) * pmm
        for l in range(m + 2, ell + 1):
            prev, cur = cur, ((2 * l - 1) * xa * cur - (l + m - 1) * prev) / (l - m)
        out = cur
    return float(out) if np.ndim(out) == 0 else out


def legendre_columns(max_degree: int, x):
    """Yield ``(m, col)`` with ``col[j] = N(m+j, m) P(m+j, m)(x)``.

    Normalized recurrences, one order at a time, so memory stays
    ``O(L * len(x))`` and no factorial overflows at high degree.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    L = max_degree
    s = np.sqrt(np.clip((1.0 - x) * (1.0 + x), 0.0, None))
    pmm = np.full(x.size, 1.0 / math.sqrt(FOUR_PI))
    for m in range(L + 1):
        if m > 0:
            pmm = math.sqrt((2 * m + 1) / (2.0 * m)) * s * pmm
        col = np.empty((L + 1 - m, x.size))
        col[0] = pmm
        if m < L:
            col[1] = math.sqrt(2 * m + 3) * x * pmm
        for l in range(m + 2, L + 1):
            a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            col[l - m] = a * (x * col[l - m - 1] - b * col[l - m - 2])
        yield m, col


def normalized_legendre(max_degree: int, x) -> np.ndarray:
    """Table ``N(l, m) P(l, m)(x)`` of shape ``(L+1, L+1, len(x))``, indexed ``[l, m]``.

    Entries with ``m > l`` are zero.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    P = np.zeros((max_degree + 1, max_degree + 1, x.size))
    for m, col in legendre_columns(max_degree, x):
        P[m:, m] = col
    return P


def eval_real_sh(idx: HarmonicIndex, p: SpherePoint) -> float:
    ell, m = idx.ell, idx.m
    am = abs(m)
    P = normalized_legendre(ell, math.cos(p.theta))[ell, am, 0]
    if m == 0:
        return float(P)
    sign = -1.0 if am % 2 else 1.0
    trig = math.sin(am * p.phi) if m > 0 else math.cos(am * p.phi)
    return float(math.sqrt(2.0) * sign * P * trig)


@dataclass(frozen=True)
class LatLonGrid:
    """Gauss-Legendre nodes in ``cos(theta)`` times a uniform longitude grid.

    Exact for products of band-limited fields when
    ``n_theta > L`` and ``n_phi > 2 L``.
    """

    n_theta: int
    n_phi: int

    def __post_init__(self):
        if self.n_theta < 1 or self.n_phi < 1:
            raise DomainError("grid sizes must be positive")

    @classmethod
    def for_degree(cls, max_degree: int) -> "LatLonGrid":
        return cls(max_degree + 1, 2 * max_degree + 3)

    def _gl(self):
        x, w = np.polynomial.legendre.leggauss(self.n_theta)
        return x[::-1], w[::-1]  # north pole first

    @property
    def theta(self) -> np.ndarray:
        return np.arccos(self._gl()[0])

    @property
    def phi(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.n_phi) / self.n_phi

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights, shape ``(n_theta, n_phi)``, summing to 4 pi."""
        w = self._gl()[1]
        return np.outer(w, np.full(self.n_phi, 2.0 * math.pi / self.n_phi))

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))


def basis_on_grid(max_degree: int, theta, phi) -> np.ndarray:
    """Every harmonic up to ``max_degree`` on the tensor grid ``theta x phi``.

    Shape ``(num_coeffs, len(theta), len(phi))``; meant for small degrees
    (tests, quadrature checks).
    """
    theta = np.atleast_1d(theta)
    phi = np.atleast_1d(phi)
    P = normalized_legendre(max_degree, np.cos(theta))
    out = np.empty((num_coeffs(max_degree), theta.size, phi.size))
    for l in range(max_degree + 1):
        out[packed_index(l, 0)] = P[l, 0][:, None]
        for m in range(1, l + 1):
            amp = math.sqrt(2.0) * (-1.0 if m % 2 else 1.0) * P[l, m][:, None]
            out[packed_index(l, m)] = amp * np.sin(m * phi)[None, :]
            out[packed_index(l, -m)] = amp * np.cos(m * phi)[None, :]
    return out


def synthesize(field: CoeffField, grid) -> np.ndarray:
    """Evaluate ``sum x[l,m] Y[l,m]`` at every node of ``grid``.

    ``grid`` is anything exposing ``theta`` and ``phi`` arrays. The sum runs
    over all stored coefficients: for each order the Legendre sums are
    collected first, then a single product with the cos/sin tables.
    """
    L = field.max_degree
    theta = np.atleast_1d(grid.theta)
    phi = np.atleast_1d(grid.phi)
    c = field.coeffs
    cos_part = np.zeros((theta.size, L + 1))
    sin_part = np.zeros((theta.size, L + 1))
    ls = np.arange(L + 1)
    for m, col in legendre_columns(L, np.cos(theta)):
        lm = ls[m:]
        if m == 0:
            cos_part[:, 0] = c[lm * lm + lm] @ col
            continue
        amp = math.sqrt(2.0) * (-1.0 if m % 2 else 1.0)
        sin_part[:, m] = amp * (c[lm * lm + lm + m] @ col)
        cos_part[:, m] = amp * (c[lm * lm + lm - m] @ col)
    mphi = np.outer(ls, phi)
    return cos_part @ np.cos(mphi) + sin_part @ np.sin(mphi)


def sobolev_norm_sq(field: CoeffField, eta: float) -> float:
    """``sum (1 + l(l+1))**eta * x[l,m]**2``; ``eta=0`` is the squared L2 norm."""
    ell = degrees(field.max_degree).astype(float)
    w = (1.0 + ell * (ell + 1.0)) ** eta
    return math.fsum(w * field.coeffs**2)
