"""Exception types raised across the package."""


class LevySphereError(Exception):
    """Base class for all package errors."""


class DomainError(LevySphereError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class ConfigurationError(LevySphereError, ValueError):
    """Inconsistent shapes, grids or experiment settings."""


class StabilityError(LevySphereError):
    """The time step violates the coupling ``ell(ell+1) h <= C_c``."""

    def __init__(self, ell: int, h: float, cap: float, scheme: str = ""):
        self.ell = ell
        self.h = h
        self.cap = cap
        self.scheme = scheme
        prod = ell * (ell + 1) * h
        super().__init__(
            f"{scheme or 'scheme'} unstable: ell={ell}, h={h!r} gives "
            f"ell(ell+1)h={prod!r} > C_c={cap!r}"
        )


class UnsupportedDriverError(LevySphereError):
    """The requested operation does not apply to this noise kind."""
