"""Dense 2-D scalar and vector fields.

Fields are stored as read-only float64 arrays of shape ``(height, width)``
indexed ``[y, x]``.  Every public operation returns a new field.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, ValidationError

DEFAULT_LOG_EPS = 1e-3


def _frozen(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _frozen(self.data, "ScalarField"))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @classmethod
    def constant(cls, width: int, height: int, value: float) -> "ScalarField":
        return cls(np.full((height, width), float(value)))

    @classmethod
    def from_function(cls, width: int, height: int, fn) -> "ScalarField":
        """Sample ``fn(x, y)`` at integer pixel coordinates."""
        y, x = np.mgrid[0:height, 0:width].astype(np.float64)
        return cls(fn(x, y))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_same(self, other)
        return ScalarField(self.data + other.data)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _check_same(self, other)
        return ScalarField(self.data - other.data)

    def scale(self, k: float) -> "ScalarField":
        return ScalarField(self.data * k)

    def map(self, fn) -> "ScalarField":
        return ScalarField(fn(self.data))

    def sum(self) -> float:
        # fixed sequential order keeps reductions reproducible
        return float(np.sum(self.data.ravel(), dtype=np.float64))

    def max(self) -> float:
        return float(self.data.max())

    def allclose(self, other: "ScalarField", **kw) -> bool:
        return self.shape == other.shape and np.allclose(self.data, other.data, **kw)


@dataclass(frozen=True, eq=False)
class VectorField:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = _frozen(self.u, "VectorField.u")
        v = _frozen(self.v, "VectorField.v")
        if u.shape != v.shape:
            raise DimensionError(f"u {u.shape} and v {v.shape} differ")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def constant(cls, width: int, height: int, u: float, v: float) -> "VectorField":
        return cls(np.full((height, width), float(u)), np.full((height, width), float(v)))

    @classmethod
    def zeros(cls, width: int, height: int) -> "VectorField":
        return cls.constant(width, height, 0.0, 0.0)

    def norm(self) -> ScalarField:
        return ScalarField(np.hypot(self.u, self.v))

    def scale(self, k: float) -> "VectorField":
        return VectorField(self.u * k, self.v * k)

    def __neg__(self) -> "VectorField":
        return VectorField(-self.u, -self.v)

    def __add__(self, other: "VectorField") -> "VectorField":
        _check_same(self, other)
        return VectorField(self.u + other.u, self.v + other.v)

    def stack(self) -> np.ndarray:
        """Return a ``(2, H, W)`` array."""
        return np.stack([self.u, self.v])


def _check_same(a, b) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def log_transform(img: ScalarField, eps: float = DEFAULT_LOG_EPS) -> ScalarField:
    """Log intensity ``ln(img + eps)``."""
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    if np.any(img.data < 0):
        raise DomainError("intensity image has negative values")
    return ScalarField(np.log(img.data + eps))


def _gradient_1d(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    g = np.empty_like(a)
    g[1:-1] = (a[2:] - a[:-2]) / 2.0
    g[0] = a[1] - a[0]
    g[-1] = a[-1] - a[-2]
    return np.moveaxis(g, 0, axis)


def gradient_arrays(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(d/dx, d/dy) of an array whose last two axes are (y, x).

    Central differences inside, one-sided differences on the border.
    """
    if a.shape[-1] < 2 or a.shape[-2] < 2:
        raise DimensionError(f"gradient needs at least 2x2 pixels, got {a.shape[-2:]}")
    return _gradient_1d(a, a.ndim - 1), _gradient_1d(a, a.ndim - 2)


def spatial_gradient(f: ScalarField) -> VectorField:
    gx, gy = gradient_arrays(f.data)
    return VectorField(gx, gy)


def dot_field(g: VectorField, w: VectorField) -> ScalarField:
    _check_same(g, w)
    return ScalarField(g.u * w.u + g.v * w.v)
