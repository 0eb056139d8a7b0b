"""Scalar loss kernels, the composite weighting, and the 2:1 update schedule.

All kernels take plain arrays and return Python floats.  The autodiff
versions used for training live in :mod:`evbridge.uda.objectives` and are
checked against these.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, fields

import numpy as np

from .errors import DimensionError, UsageError, ValidationError

GRAD_THRESHOLD = 0.7   # minimum normalized gradient magnitude considered
EVENT_TARGET = 0.7     # normalized event density below which a pixel is penalized
AUGM_WEIGHT = 2.0

GEN_TERMS = ("lat_gen", "recons_gen", "cycle", "augm", "grad_coverage", "task", "smooth")
DISC_TERMS = ("lat_disc", "recons_disc")
PART_NAMES = ("lat_gen", "lat_disc", "recons_gen", "recons_disc", "cycle", "augm",
              "grad_coverage", "smooth", "task")
GEN_WEIGHTS = {name: (AUGM_WEIGHT if name == "augm" else 1.0) for name in GEN_TERMS}


def _nonempty(a, name):
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        raise UsageError(f"{name} is empty")
    return a


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def hinge_disc_loss(scores_pos_class, scores_neg_class) -> float:
    """mean(relu(1 - s_pos)) + mean(relu(1 + s_neg))."""
    p = _nonempty(scores_pos_class, "scores_pos_class")
    n = _nonempty(scores_neg_class, "scores_neg_class")
    return float(np.mean(np.maximum(0.0, 1.0 - p)) + np.mean(np.maximum(0.0, 1.0 + n)))


def hinge_gen_loss_latent(scores_img, scores_event) -> float:
    return float(np.mean(_nonempty(scores_img, "scores_img")) - np.mean(_nonempty(scores_event, "scores_event")))


def hinge_gen_loss_recons(scores_fake, standard_sign: bool = False) -> float:
    """Generator term on translated events.

    The default reproduces the printed orientation, +mean(scores); with
    ``standard_sign`` the conventional -mean(scores) is returned.
    """
    m = float(np.mean(_nonempty(scores_fake, "scores_fake")))
    return -m if standard_sign else m


def recons_disc_loss(scores_fake, scores_real, standard_sign: bool = False) -> float:
    """Discriminator term on translated vs real events.

    As printed, translated events take the positive margin; the standard
    orientation swaps the two roles.
    """
    if standard_sign:
        return hinge_disc_loss(scores_real, scores_fake)
    return hinge_disc_loss(scores_fake, scores_real)


def l1_mean(a, b) -> float:
    a, b = _same_shape(a, b)
    return float(np.mean(np.abs(a - b)))


def l1_cycle_loss(z_img, z_img_rec, zeta, zeta_rec) -> float:
    return l1_mean(z_img, z_img_rec) + l1_mean(zeta, zeta_rec)


def augmentation_loss(zeta_aug, zeta_rec) -> float:
    return l1_mean(zeta_aug, zeta_rec)


def normalize_event_density(counts) -> np.ndarray:
    """Scale per-pixel event counts by the frame maximum (0/0 -> 0)."""
    c = np.asarray(counts, dtype=np.float64)
    m = c.max(initial=0.0)
    return c / m if m > 0 else np.zeros_like(c)


def normalized_gradient_magnitude(img) -> np.ndarray:
    """|grad I| of an intensity frame scaled by its maximum (0/0 -> 0)."""
    from .fields import gradient_arrays

    gx, gy = gradient_arrays(np.asarray(img, dtype=np.float64))
    mag = np.hypot(gx, gy)
    m = mag.max()
    return mag / m if m > 0 else mag


def gradient_coverage_loss(n_norm, grad_mag) -> float:
    """Penalty for strong image edges that carry few events.

    Sums ``max(0, 0.7 - n) * |grad|`` over pixels whose gradient magnitude
    exceeds 0.7.
    """
    n, g = _same_shape(n_norm, grad_mag)
    if np.any(n < 0) or np.any(n > 1) or not np.all(np.isfinite(n)):
        raise ValidationError("normalized event counts must lie in [0, 1]")
    if np.any(g < 0):
        raise ValidationError("gradient magnitude must be nonnegative")
    mask = g > GRAD_THRESHOLD
    return float(np.sum(np.maximum(0.0, EVENT_TARGET - n[mask]) * g[mask]))


def cross_entropy_task_loss(logits, label: int) -> float:
    z = np.asarray(logits, dtype=np.float64).ravel()
    if not 0 <= label < z.size:
        raise UsageError(f"label {label} out of range for {z.size} classes")
    m = z.max()
    lse = m + math.log(float(np.sum(np.exp(z - m))))
    return float(lse - z[label])


@dataclass(frozen=True)
class LossReport:
    lat_gen: float
    lat_disc: float
    recons_gen: float
    recons_disc: float
    cycle: float
    augm: float
    grad_coverage: float
    smooth: float
    task: float
    composite_gen: float
    composite_disc: float

    def parts(self) -> dict:
        return {k: getattr(self, k) for k in PART_NAMES}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **extra) -> str:
        d = dict(extra)
        d.update(self.to_dict())
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LossReport":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})


def composite_gen(parts: dict) -> float:
    return sum(GEN_WEIGHTS[k] * float(parts[k]) for k in GEN_TERMS)


def composite_disc(parts: dict) -> float:
    return sum(float(parts[k]) for k in DISC_TERMS)


def compose_losses(parts: dict) -> LossReport:
    """Weight the named parts into generator and discriminator objectives.

    Missing parts count as zero; every weight is 1 except ``augm`` (2).
    """
    unknown = set(parts) - set(PART_NAMES)
    if unknown:
        raise ValidationError(f"unknown loss parts: {sorted(unknown)}")
    full = {k: float(parts.get(k, 0.0)) for k in PART_NAMES}
    bad = [k for k, v in full.items() if not math.isfinite(v)]
    if bad:
        raise ValidationError(f"non-finite loss parts: {bad}")
    return LossReport(**full, composite_gen=composite_gen(full), composite_disc=composite_disc(full))


DISC_STEP = "disc"
GEN_STEP = "gen"


@dataclass
class ScheduleState:
    disc_steps_taken: int = 0
    gen_steps_taken: int = 0
    disc_per_gen: int = 2

    def check(self) -> None:
        lag = self.disc_steps_taken - self.disc_per_gen * self.gen_steps_taken
        if not 0 <= lag <= self.disc_per_gen:
            raise ValidationError(f"schedule out of phase: {self.disc_steps_taken} disc vs {self.gen_steps_taken} gen")


def schedule_next(state: ScheduleState) -> str:
    """Advance the D,D,G,... schedule and return the kind of step to take."""
    if state.disc_steps_taken < state.disc_per_gen * (state.gen_steps_taken + 1):
        state.disc_steps_taken += 1
        return DISC_STEP
    state.gen_steps_taken += 1
    return GEN_STEP
