"""Model-vs-oracle comparison scenes.

Scenes are defined in log intensity: a linear ramp, optionally plus an
area-sampled step edge or bar of height ``J``.  The second frame is the
same analytic scene translated by the motion, so the only difference
between the linearized model and the oracle comes from the step/bar
term.  Pixels touched by that term form the discontinuity mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError, ValidationError
from .events import ContrastThreshold, count_events, log_intensity_change, stream_counts, two_frame_oracle
from .fields import DEFAULT_LOG_EPS, ScalarField, VectorField, gradient_arrays, log_transform, spatial_gradient

SCENES = ("ramp", "step", "bar")
SCENE_SIZE = 16
# ramp slopes in units of C per pixel; chosen so that every motion in
# {-1, -0.5, 0, 0.5, 1}^2 gives a non-integer number of thresholds
RAMP_SLOPE_X = 0.91
RAMP_SLOPE_Y = 0.37
# edge heights in units of C; below the bounds that keep discrepancy <= 1
STEP_HEIGHT = 0.9
BAR_HEIGHT = 0.45
SUPERSAMPLE = 8
TOP_LOG = -0.02


@dataclass
class OracleScene:
    name: str
    frame0: ScalarField
    frame1: ScalarField
    edge_mask: np.ndarray
    motion: tuple[float, float]


def _coverage_step(x, y, edge_x):
    """Area fraction of each pixel to the right of ``x = edge_x``."""
    return np.clip(x + 0.5 - edge_x, 0.0, 1.0) + 0.0 * y


def _coverage_bar(x, y, cx, cy, angle, length, thickness):
    s = SUPERSAMPLE
    off = (np.arange(s) + 0.5) / s - 0.5
    acc = np.zeros_like(x)
    c, sn = np.cos(angle), np.sin(angle)
    for oy in off:
        for ox in off:
            dx, dy = x + ox - cx, y + oy - cy
            along = dx * c + dy * sn
            across = -dx * sn + dy * c
            acc += (np.abs(along) <= length / 2) & (np.abs(across) <= thickness / 2)
    return acc / (s * s)


def build_scene(name: str, motion=(1.0, 0.0), contrast: float = 0.2, eps: float = DEFAULT_LOG_EPS,
                size: int = SCENE_SIZE) -> OracleScene:
    if name not in SCENES:
        raise UsageError(f"unknown scene {name!r}; choose from {', '.join(SCENES)}")
    u, v = (float(m) for m in motion)
    C = float(contrast)
    a, b = RAMP_SLOPE_X * C, RAMP_SLOPE_Y * C
    height = {"ramp": 0.0, "step": STEP_HEIGHT * C, "bar": BAR_HEIGHT * C}[name]

    def term(x, y):
        if name == "step":
            return _coverage_step(x, y, size / 2.0 - 0.5)
        if name == "bar":
            return _coverage_bar(x, y, size / 2.0 - 0.5, size / 2.0 - 0.5, np.deg2rad(30.0),
                                 size * 0.6, 3.0)
        return np.zeros_like(x)

    top = TOP_LOG - height

    def log_frame(dx, dy):
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        xs, ys = xx - dx, yy - dy
        ramp = top - a * (size - xs) - b * (size - ys)
        return ramp + height * term(xs, ys), term(xs, ys)

    l0, t0 = log_frame(0.0, 0.0)
    l1, t1 = log_frame(u, v)
    lowest = np.log(eps)
    if min(l0.min(), l1.min()) < lowest:
        raise ValidationError(f"contrast {C} too large for a {size}px {name} scene")
    img0 = ScalarField(np.exp(l0) - eps)
    img1 = ScalarField(np.exp(l1) - eps)
    gx, gy = gradient_arrays(t0)
    mask = (t0 != t1) | (gx != 0) | (gy != 0)
    return OracleScene(name, img0, img1, mask, (u, v))


def model_counts(img: ScalarField, motion, contrast, eps: float = DEFAULT_LOG_EPS, dt: float = 1.0) -> np.ndarray:
    """Signed counts predicted by the linearized model for a constant motion."""
    flow = VectorField.constant(img.width, img.height, *motion)
    dlog = log_intensity_change(spatial_gradient(log_transform(img, eps)), flow, dt)
    return count_events(dlog, contrast).n


def oracle_counts(img0: ScalarField, img1: ScalarField, contrast, eps: float = DEFAULT_LOG_EPS) -> np.ndarray:
    return stream_counts(two_frame_oracle(img0, img1, contrast, eps)).n


@dataclass
class OracleReport:
    scene: str
    motion: tuple[float, float]
    contrast: float
    max_discrepancy: int          # over all compared pixels
    max_smooth_discrepancy: int   # outside the discontinuity mask
    max_edge_discrepancy: int     # inside the discontinuity mask
    edge_tolerance: int
    passed: bool

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"scene={self.scene} motion=({self.motion[0]:g},{self.motion[1]:g}) C={self.contrast:g} "
                f"max|model-oracle|={self.max_discrepancy} smooth={self.max_smooth_discrepancy} "
                f"edge={self.max_edge_discrepancy} (tolerance {self.edge_tolerance}) {verdict}")


def oracle_check(name: str, motion=(1.0, 0.0), contrast: float = 0.2, eps: float = DEFAULT_LOG_EPS,
                 size: int = SCENE_SIZE) -> OracleReport:
    """Compare model and oracle counts on the interior pixels of a scene.

    Outside the discontinuity mask the counts must agree exactly; inside
    it the ramp scene allows 0 and the step/bar scenes allow 1.
    """
    sc = build_scene(name, motion, contrast, eps, size)
    c = ContrastThreshold(float(contrast))
    diff = np.abs(model_counts(sc.frame0, motion, c, eps) - oracle_counts(sc.frame0, sc.frame1, c, eps))
    inner = np.zeros_like(sc.edge_mask)
    inner[1:-1, 1:-1] = True
    smooth = diff[inner & ~sc.edge_mask]
    edge = diff[inner & sc.edge_mask]
    tol = 0 if name == "ramp" else 1
    ms = int(smooth.max(initial=0))
    me = int(edge.max(initial=0))
    return OracleReport(name, tuple(float(m) for m in motion), float(contrast), max(ms, me), ms, me, tol,
                        ms == 0 and me <= tol)
