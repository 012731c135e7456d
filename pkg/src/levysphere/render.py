"""Equirectangular rendering of coefficient fields to PPM images."""
from __future__ import annotations

import enum
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import CoeffField, synthesize
from .errors import ConfigurationError

log = logging.getLogger(__name__)


class ColorMap(str, enum.Enum):
    GRAYSCALE = "grayscale"
    DIVERGING = "diverging"


class Transform(str, enum.Enum):
    IDENTITY = "identity"
    EXP_NORMALIZED = "exp_normalized"


@dataclass(frozen=True)
class EquirectGrid:
    """Rows run from the north pole (theta=0) to the south pole, columns from phi=0 eastwards."""

    n_theta: int
    n_phi: int

    def __post_init__(self):
        if self.n_theta < 2 or self.n_phi < 1:
            raise ConfigurationError(f"image needs n_theta >= 2 and n_phi >= 1, got "
                                     f"{self.n_theta}x{self.n_phi}")

    @property
    def theta(self) -> np.ndarray:
        return np.linspace(0.0, np.pi, self.n_theta)

    @property
    def phi(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi


@dataclass(frozen=True)
class RenderSpec:
    n_theta: int = 256
    n_phi: int = 512
    cmap: ColorMap = ColorMap.DIVERGING
    value_range: tuple[float, float] | None = None
    transform: Transform = Transform.EXP_NORMALIZED

    def __post_init__(self):
        object.__setattr__(self, "cmap", ColorMap(self.cmap))
        object.__setattr__(self, "transform", Transform(self.transform))
        if self.value_range is not None:
            lo, hi = map(float, self.value_range)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ConfigurationError(f"fixed range needs finite lo < hi, got {self.value_range}")
            object.__setattr__(self, "value_range", (lo, hi))
        EquirectGrid(self.n_theta, self.n_phi)

    @property
    def grid(self) -> EquirectGrid:
        return EquirectGrid(self.n_theta, self.n_phi)


def exp_transform(field: CoeffField, grid) -> np.ndarray:
    """``exp(X / ||X||)`` pointwise; a zero field renders as ones."""
    norm = field.l2_norm()
    if norm == 0.0:
        log.warning("zero field under the normalized exponential transform; rendering exp(0)")
        return np.ones((np.size(grid.theta), np.size(grid.phi)))
    return np.exp(synthesize(field, grid) / norm)


def render_matrix(field: CoeffField, spec: RenderSpec) -> np.ndarray:
    grid = spec.grid
    if spec.transform is Transform.EXP_NORMALIZED:
        return exp_transform(field, grid)
    return synthesize(field, grid)


def _unit_values(matrix: np.ndarray, value_range) -> np.ndarray:
    if value_range is None:
        lo, hi = float(matrix.min()), float(matrix.max())
    else:
        lo, hi = value_range
    if hi <= lo:
        return np.full(matrix.shape, 0.5)
    return np.clip((matrix - lo) / (hi - lo), 0.0, 1.0)


def to_rgb(matrix: np.ndarray, cmap: ColorMap = ColorMap.GRAYSCALE, value_range=None) -> np.ndarray:
    """Map values affinely onto ``[0, 1]`` and then to 8-bit RGB."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or not np.all(np.isfinite(matrix)):
        raise ValueError("image matrix must be a finite 2-D array")
    u = _unit_values(matrix, value_range)
    if ColorMap(cmap) is ColorMap.GRAYSCALE:
        rgb = np.repeat(u[..., None], 3, axis=2)
    else:
        # blue -> white -> red
        lo = np.minimum(2.0 * u, 1.0)
        hi = np.minimum(2.0 * (1.0 - u), 1.0)
        rgb = np.stack([lo, np.minimum(lo, hi), hi], axis=2)
    return np.rint(rgb * 255.0).astype(np.uint8)


def write_image(matrix: np.ndarray, spec: RenderSpec, path) -> Path:
    """Write a binary PPM (P6); row 0 is the north pole."""
    rgb = to_rgb(matrix, spec.cmap, spec.value_range)
    path = Path(path)
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(rgb.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc.strerror or exc}") from exc
    return path


def read_ppm(path) -> np.ndarray:
    """Read back a P6 file written by :func:`write_image` as an ``(rows, cols, 3)`` array."""
    data = Path(path).read_bytes()
    # exactly one whitespace byte follows maxval; the raster may start with bytes
    # that look like whitespace, so the header is parsed token by token
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path} is not a binary PPM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError("only 8-bit PPM files are supported")
    return np.frombuffer(data[m.end(): m.end() + w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def write_matrix_csv(matrix: np.ndarray, path) -> Path:
    """Raw matrix dump: header ``n_theta,n_phi``, the shape, then one row per line."""
    matrix = np.asarray(matrix, dtype=float)
    path = Path(path)
    lines = ["n_theta,n_phi", f"{matrix.shape[0]},{matrix.shape[1]}"]
    lines += [",".join(repr(float(v)) for v in row) for row in matrix]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
