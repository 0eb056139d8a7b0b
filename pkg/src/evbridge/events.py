"""Event generation from images: linearized model, pseudo-flow, oracle.

The linearized model predicts the log-intensity change at a pixel as
``-<grad(log I), v> * dt`` and the number of events as that change divided
by the contrast threshold, truncated toward zero.  ``two_frame_oracle``
counts threshold crossings between two explicit frames instead and is
used to validate the model path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, ValidationError
from .fields import (
    DEFAULT_LOG_EPS,
    ScalarField,
    VectorField,
    dot_field,
    log_transform,
    spatial_gradient,
)

DEFAULT_CONTRAST = 0.2


@dataclass(frozen=True)
class ContrastThreshold:
    """Log-intensity step per event; ``neg`` defaults to ``pos``."""

    pos: float = DEFAULT_CONTRAST
    neg: float | None = None

    def __post_init__(self):
        if self.neg is None:
            object.__setattr__(self, "neg", self.pos)
        if not (self.pos > 0 and self.neg > 0):
            raise DomainError(f"contrast thresholds must be positive: {self.pos}, {self.neg}")

    @classmethod
    def coerce(cls, c) -> "ContrastThreshold":
        if isinstance(c, ContrastThreshold):
            return c
        if isinstance(c, (tuple, list)):
            return cls(float(c[0]), float(c[1]))
        return cls(float(c))


@dataclass(frozen=True, eq=False)
class SignedEventCount:
    n: np.ndarray

    def __post_init__(self):
        n = np.array(self.n, dtype=np.int64, copy=True)
        if n.ndim != 2:
            raise DimensionError(f"count field must be 2-D, got {n.shape}")
        n.setflags(write=False)
        object.__setattr__(self, "n", n)

    @property
    def height(self) -> int:
        return self.n.shape[0]

    @property
    def width(self) -> int:
        return self.n.shape[1]

    @property
    def shape(self):
        return self.n.shape


@dataclass(frozen=True, eq=False)
class EventHistogram:
    """Two-channel per-pixel event counts (ON in ``pos``, OFF in ``neg``)."""

    pos: np.ndarray
    neg: np.ndarray

    def __post_init__(self):
        pos = np.array(self.pos, dtype=np.float64, copy=True)
        neg = np.array(self.neg, dtype=np.float64, copy=True)
        if pos.shape != neg.shape or pos.ndim != 2:
            raise DimensionError(f"histogram channels must share a 2-D shape: {pos.shape}, {neg.shape}")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise ValidationError("histogram contains non-finite values")
        if np.any(pos < 0) or np.any(neg < 0):
            raise ValidationError("histogram counts must be nonnegative")
        pos.setflags(write=False)
        neg.setflags(write=False)
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "neg", neg)

    @property
    def height(self) -> int:
        return self.pos.shape[0]

    @property
    def width(self) -> int:
        return self.pos.shape[1]

    @property
    def shape(self):
        return self.pos.shape

    @classmethod
    def zeros(cls, width: int, height: int) -> "EventHistogram":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def from_signed(cls, n) -> "EventHistogram":
        """Split a signed count (integer or real) into ON/OFF channels."""
        a = n.n if isinstance(n, SignedEventCount) else (n.data if isinstance(n, ScalarField) else n)
        a = np.asarray(a, dtype=np.float64)
        return cls(np.maximum(a, 0.0), np.maximum(-a, 0.0))

    def total(self) -> np.ndarray:
        return self.pos + self.neg

    def signed(self) -> np.ndarray:
        return self.pos - self.neg

    def stack(self) -> np.ndarray:
        """Return a ``(2, H, W)`` array, positive channel first."""
        return np.stack([self.pos, self.neg])

    def normalized(self) -> "EventHistogram":
        """Divide both channels by the largest per-pixel count (0/0 -> 0)."""
        m = max(self.pos.max(initial=0.0), self.neg.max(initial=0.0))
        if m == 0:
            return self
        return EventHistogram(self.pos / m, self.neg / m)


EVENT_DTYPE = np.dtype([("t", "<f8"), ("x", "<i8"), ("y", "<i8"), ("p", "<i8")])


@dataclass(frozen=True, eq=False)
class EventStream:
    events: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        ev = np.array(self.events, dtype=EVENT_DTYPE, copy=True).reshape(-1)
        if len(ev):
            if np.any(np.diff(ev["t"]) < 0):
                raise ValidationError("event timestamps must be nondecreasing")
            if np.any((ev["x"] < 0) | (ev["x"] >= self.width) | (ev["y"] < 0) | (ev["y"] >= self.height)):
                raise ValidationError(f"event outside the {self.width}x{self.height} sensor")
            if np.any(np.abs(ev["p"]) != 1):
                raise ValidationError("polarity must be -1 or +1")
        ev.setflags(write=False)
        object.__setattr__(self, "events", ev)

    def __len__(self) -> int:
        return len(self.events)

    @classmethod
    def from_records(cls, records, width: int, height: int) -> "EventStream":
        arr = np.array([tuple(r) for r in records], dtype=EVENT_DTYPE)
        return cls(arr, width, height)


def log_intensity_change(grad: VectorField, flow: VectorField, dt: float = 1.0) -> ScalarField:
    """Linearized brightness-constancy change ``-<grad, flow> * dt``."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    return dot_field(grad, flow).scale(-dt)


def count_events(dlog: ScalarField, C) -> SignedEventCount:
    c = ContrastThreshold.coerce(C)
    d = dlog.data
    n = np.where(d >= 0, np.floor(d / c.pos), -np.floor(-d / c.neg))
    return SignedEventCount(n.astype(np.int64))


def pseudo_flow_counts(grad: VectorField, pflow: VectorField) -> ScalarField:
    """Real-valued signed event count ``<grad, pflow>``.

    ``pflow`` already carries the 1/C, dt and direction factors, so no
    threshold or quantization is applied here.
    """
    return dot_field(grad, pflow)


def initial_event_guess(img: ScalarField, pflow: VectorField, eps: float = DEFAULT_LOG_EPS) -> EventHistogram:
    if img.shape != pflow.shape:
        raise DimensionError(f"image {img.shape} and flow {pflow.shape} differ")
    if np.any(img.data > 1.0):
        raise DomainError("intensity image exceeds 1.0")
    counts = pseudo_flow_counts(spatial_gradient(log_transform(img, eps)), pflow)
    return EventHistogram.from_signed(counts)


def histogram_from_stream(s: EventStream) -> EventHistogram:
    pos = np.zeros((s.height, s.width))
    neg = np.zeros((s.height, s.width))
    ev = s.events
    on = ev["p"] > 0
    np.add.at(pos, (ev["y"][on], ev["x"][on]), 1.0)
    np.add.at(neg, (ev["y"][~on], ev["x"][~on]), 1.0)
    return EventHistogram(pos, neg)


def two_frame_oracle(img0: ScalarField, img1: ScalarField, C, eps: float = DEFAULT_LOG_EPS,
                     dt: float = 1.0) -> EventStream:
    """Brute-force event stream between two frames.

    Each pixel fires one event per full threshold crossed between the two
    log frames.  Crossing times assume the log intensity moves linearly in
    time over ``[0, dt]``.
    """
    if img0.shape != img1.shape:
        raise DimensionError(f"frames differ in shape: {img0.shape} vs {img1.shape}")
    c = ContrastThreshold.coerce(C)
    l0 = log_transform(img0, eps).data
    l1 = log_transform(img1, eps).data
    h, w = l0.shape
    d = (l1 - l0).ravel()
    step = np.where(d >= 0, c.pos, c.neg)
    k = np.floor(np.abs(d) / step).astype(np.int64)
    pix = np.flatnonzero(k)
    reps = k[pix]
    src = np.repeat(pix, reps)
    # j runs 1..k within each pixel's group
    j = np.arange(len(src)) - np.repeat(np.cumsum(reps) - reps, reps) + 1
    arr = np.empty(len(src), dtype=EVENT_DTYPE)
    arr["t"] = dt * j * step[src] / np.abs(d[src])
    arr["x"] = src % w
    arr["y"] = src // w
    arr["p"] = np.where(d[src] > 0, 1, -1)
    arr = arr[np.argsort(arr["t"], kind="stable")]
    return EventStream(arr, w, h)


def stream_counts(s: EventStream) -> SignedEventCount:
    """Signed per-pixel count of a stream (ON minus OFF)."""
    return SignedEventCount(histogram_from_stream(s).signed().astype(np.int64))
