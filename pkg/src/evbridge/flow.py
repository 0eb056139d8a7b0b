"""Flow samplers, magnitude-preserving augmentation and Charbonnier smoothness."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DimensionError, UsageError, ValidationError
from .fields import VectorField

CHARBONNIER_ALPHA = 0.45
CHARBONNIER_EPS = 0.001

# (dy, dx) offsets of the 8-neighbourhood
NEIGHBOR_OFFSETS = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0))


@dataclass(frozen=True)
class FlowSamplerSpec:
    kind: str = "translational"
    seed: int = 0
    magnitude_range: tuple[float, float] = (1.0, 2.0)
    # x0, y0, x1, y1 in normalized [0, 1] image coordinates
    epipole_region: tuple[float, float, float, float] = (0.25, 0.25, 0.75, 0.75)

    def __post_init__(self):
        if self.kind not in ("translational", "epipolar"):
            raise ValidationError(f"unknown flow sampler kind {self.kind!r}")
        lo, hi = (float(m) for m in self.magnitude_range)
        if not (0 <= lo <= hi):
            raise ValidationError(f"magnitude_range must satisfy 0 <= lo <= hi, got {self.magnitude_range}")
        x0, y0, x1, y1 = (float(e) for e in self.epipole_region)
        if not (x0 <= x1 and y0 <= y1):
            raise ValidationError(f"degenerate epipole region {self.epipole_region}")
        object.__setattr__(self, "magnitude_range", (lo, hi))
        object.__setattr__(self, "epipole_region", (x0, y0, x1, y1))

    @classmethod
    def from_dict(cls, d: dict) -> "FlowSamplerSpec":
        known = {"kind", "seed", "magnitude_range", "epipole_region"}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown flow_sampler keys: {sorted(extra)}")
        kw = dict(d)
        for key in ("magnitude_range", "epipole_region"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["magnitude_range"] = list(self.magnitude_range)
        d["epipole_region"] = list(self.epipole_region)
        return d


class FlowSampler:
    """Stateful sampler: successive calls draw successive fields from one stream."""

    def __init__(self, spec: FlowSamplerSpec, rng: np.random.Generator | None = None):
        self.spec = spec
        self.rng = rng if rng is not None else np.random.default_rng(spec.seed)

    def sample(self, w: int, h: int) -> VectorField:
        if self.spec.kind == "translational":
            return _translational(self.spec, w, h, self.rng)
        return _epipolar(self.spec, w, h, self.rng)

    def sample_direction(self) -> tuple[float, float]:
        """Unit direction of a translational draw (magnitude discarded)."""
        theta = self.rng.uniform(0.0, 2.0 * np.pi)
        return float(np.cos(theta)), float(np.sin(theta))


def _translational(spec, w, h, rng) -> VectorField:
    theta = rng.uniform(0.0, 2.0 * np.pi)
    mag = rng.uniform(*spec.magnitude_range)
    return VectorField.constant(w, h, mag * np.cos(theta), mag * np.sin(theta))


def _epipolar(spec, w, h, rng) -> VectorField:
    x0, y0, x1, y1 = spec.epipole_region
    ex = rng.uniform(x0, x1) * (w - 1)
    ey = rng.uniform(y0, y1) * (h - 1)
    target = rng.uniform(*spec.magnitude_range)
    return radial_flow(w, h, ex, ey, target)


def radial_flow(w: int, h: int, ex: float, ey: float, max_magnitude: float) -> VectorField:
    """Forward-motion field expanding from the epipole ``(ex, ey)``.

    Magnitude grows linearly with distance and peaks at ``max_magnitude``.
    """
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = x - ex, y - ey
    rmax = np.hypot(dx, dy).max()
    k = max_magnitude / rmax if rmax > 0 else 0.0
    return VectorField(k * dx, k * dy)


def sample_translational_flow(spec: FlowSamplerSpec, w: int, h: int) -> VectorField:
    if spec.kind != "translational":
        raise UsageError(f"sampler kind is {spec.kind!r}, expected 'translational'")
    return _translational(spec, w, h, np.random.default_rng(spec.seed))


def sample_epipolar_flow(spec: FlowSamplerSpec, w: int, h: int) -> VectorField:
    if spec.kind != "epipolar":
        raise UsageError(f"sampler kind is {spec.kind!r}, expected 'epipolar'")
    return _epipolar(spec, w, h, np.random.default_rng(spec.seed))


def augment_flow(pflow: VectorField, dirfield: VectorField) -> VectorField:
    """Keep the magnitude of ``pflow`` and take the direction of ``dirfield``."""
    if pflow.shape != dirfield.shape:
        raise DimensionError(f"shape mismatch: {pflow.shape} vs {dirfield.shape}")
    mag = np.hypot(pflow.u, pflow.v)
    dnorm = np.hypot(dirfield.u, dirfield.v)
    moving = mag > 0
    if np.any(moving & (dnorm == 0)):
        raise ValidationError("direction field vanishes where the pseudo-flow is nonzero")
    scale = np.divide(mag, dnorm, out=np.zeros_like(mag), where=moving)
    return VectorField(scale * dirfield.u, scale * dirfield.v)


def charbonnier(x, alpha: float = CHARBONNIER_ALPHA, eps: float = CHARBONNIER_EPS):
    """rho(x) = (eps^alpha + x^alpha)^(1/alpha) for x >= 0."""
    return (eps ** alpha + np.asarray(x, dtype=np.float64) ** alpha) ** (1.0 / alpha)


def neighbor_pair_count(w: int, h: int) -> int:
    """Number of ordered (pixel, in-bounds 8-neighbour) pairs."""
    n = 0
    for dy, dx in NEIGHBOR_OFFSETS:
        n += (h - abs(dy)) * (w - abs(dx))
    return n


def _shifted_pair(a: np.ndarray, dy: int, dx: int):
    """Views (a[p], a[p + (dy, dx)]) over all p whose neighbour is in bounds."""
    h, w = a.shape[-2:]
    ys = slice(max(0, -dy), h - max(0, dy))
    xs = slice(max(0, -dx), w - max(0, dx))
    yn = slice(max(0, dy), h + min(0, dy))
    xn = slice(max(0, dx), w + min(0, dx))
    return a[..., ys, xs], a[..., yn, xn]


def charbonnier_smoothness(flow: VectorField, alpha: float = CHARBONNIER_ALPHA,
                           eps: float = CHARBONNIER_EPS, componentwise: bool = False) -> float:
    """Sum of rho over every pixel and each of its in-bounds 8 neighbours.

    ``rho`` acts on the Euclidean norm of the flow difference, or on each
    component's absolute difference when ``componentwise`` is set.
    """
    if flow.width < 2 or flow.height < 2:
        raise DimensionError("smoothness needs at least 2x2 pixels")
    total = 0.0
    for dy, dx in NEIGHBOR_OFFSETS:
        u0, u1 = _shifted_pair(flow.u, dy, dx)
        v0, v1 = _shifted_pair(flow.v, dy, dx)
        if componentwise:
            total += float(np.sum(charbonnier(np.abs(u0 - u1), alpha, eps)))
            total += float(np.sum(charbonnier(np.abs(v0 - v1), alpha, eps)))
        else:
            total += float(np.sum(charbonnier(np.hypot(u0 - u1, v0 - v1), alpha, eps)))
    return total
