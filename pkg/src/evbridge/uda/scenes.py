"""Synthetic oriented-bar scenes and the unpaired image/event datasets.

Each scene is one bright bar on a dark background whose orientation is
the class label.  Image samples and event samples are drawn from disjoint
scene ids; event samples are produced by the two-frame oracle under a
random translation, so they never share a scene with any image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..events import histogram_from_stream, two_frame_oracle
from ..fields import ScalarField

CLASS_ANGLES_DEG = (0.0, 45.0, 90.0, 135.0)
SUPERSAMPLE = 4


@dataclass(frozen=True)
class ToyScene:
    scene_id: int
    label: int
    angle: float          # radians
    center: tuple[float, float]
    length: float
    thickness: float
    foreground: float
    background: float
    motion: tuple[float, float]

    def render(self, resolution: int, offset=(0.0, 0.0)) -> ScalarField:
        return ScalarField(render_bar(resolution, self.angle, self.center[0] + offset[0],
                                      self.center[1] + offset[1], self.length, self.thickness,
                                      self.foreground, self.background))

    def frames(self, resolution: int) -> tuple[ScalarField, ScalarField]:
        return self.render(resolution), self.render(resolution, self.motion)


def render_bar(res: int, angle: float, cx: float, cy: float, length: float, thickness: float,
               fg: float, bg: float) -> np.ndarray:
    """Area-sampled bar; pixel (x, y) covers [x-0.5, x+0.5] x [y-0.5, y+0.5]."""
    s = SUPERSAMPLE
    sub = (np.arange(res * s) + 0.5) / s - 0.5
    yy, xx = np.meshgrid(sub, sub, indexing="ij")
    dx, dy = xx - cx, yy - cy
    c, sn = np.cos(angle), np.sin(angle)
    along = dx * c + dy * sn
    across = -dx * sn + dy * c
    inside = (np.abs(along) <= length / 2) & (np.abs(across) <= thickness / 2)
    cover = inside.reshape(res, s, res, s).mean(axis=(1, 3))
    return bg + (fg - bg) * cover


def _scene_rng(seed: int, scene_id: int) -> np.random.Generator:
    # per-scene streams: generation order does not affect any scene
    return np.random.default_rng([int(seed), int(scene_id)])


def sample_scene(seed: int, scene_id: int, label: int, resolution: int = 32,
                 motion_range=(1.0, 2.5)) -> ToyScene:
    rng = _scene_rng(seed, scene_id)
    jitter = np.deg2rad(rng.uniform(-8.0, 8.0))
    angle = np.deg2rad(CLASS_ANGLES_DEG[label]) + jitter
    margin = resolution * 0.3
    center = (float(rng.uniform(margin, resolution - margin)), float(rng.uniform(margin, resolution - margin)))
    length = float(rng.uniform(0.4, 0.6) * resolution)
    thickness = float(rng.uniform(2.5, 4.5))
    background = float(rng.uniform(0.05, 0.25))
    foreground = float(rng.uniform(0.65, 1.0))
    theta = rng.uniform(0.0, 2.0 * np.pi)
    mag = rng.uniform(*motion_range)
    return ToyScene(scene_id, label, float(angle), center, length, thickness, foreground, background,
                    (float(mag * np.cos(theta)), float(mag * np.sin(theta))))


def _balanced_labels(n: int, num_classes: int, rng) -> np.ndarray:
    labels = np.arange(n) % num_classes
    return rng.permutation(labels)


def scene_events(scene: ToyScene, resolution: int, contrast: float, eps: float) -> np.ndarray:
    """Two-channel event histogram [2, H, W] for a scene's motion."""
    f0, f1 = scene.frames(resolution)
    return histogram_from_stream(two_frame_oracle(f0, f1, contrast, eps)).stack()


@dataclass
class ToyDataset:
    images: np.ndarray            # [N, H, W] intensities in [0, 1]
    labels: np.ndarray            # [N]
    image_scene_ids: np.ndarray
    events: np.ndarray            # [M, 2, H, W] raw counts
    event_scene_ids: np.ndarray
    event_labels: np.ndarray      # generator ground truth; never read by training

    def to_npz(self, path) -> None:
        np.savez_compressed(path, **self.__dict__)

    @classmethod
    def from_npz(cls, path) -> "ToyDataset":
        with np.load(path) as z:
            return cls(**{k: z[k] for k in cls.__dataclass_fields__})


@dataclass
class EventTestSet:
    events: np.ndarray
    labels: np.ndarray
    scene_ids: np.ndarray

    def to_npz(self, path) -> None:
        np.savez_compressed(path, **self.__dict__)

    @classmethod
    def from_npz(cls, path) -> "EventTestSet":
        with np.load(path) as z:
            return cls(**{k: z[k] for k in cls.__dataclass_fields__})


def make_dataset(n: int, seed: int, n_events: int | None = None, resolution: int = 32,
                 num_classes: int = 4, contrast: float = 0.2, eps: float = 1e-3,
                 motion_range=(1.0, 2.5)) -> ToyDataset:
    """Labeled images and unlabeled event histograms from disjoint scenes."""
    if n < 8:
        raise ValidationError(f"need at least 8 scenes, got {n}")
    m = n if n_events is None else n_events
    rng = np.random.default_rng([int(seed), 0x1ABE1])
    img_labels = _balanced_labels(n, num_classes, rng)
    ev_labels = _balanced_labels(m, num_classes, rng)
    img_ids = np.arange(n)
    ev_ids = np.arange(n, n + m)
    images = np.stack([sample_scene(seed, i, int(l), resolution, motion_range).render(resolution).data
                       for i, l in zip(img_ids, img_labels)])
    events = np.stack([scene_events(sample_scene(seed, i, int(l), resolution, motion_range),
                                    resolution, contrast, eps)
                       for i, l in zip(ev_ids, ev_labels)])
    return ToyDataset(images, img_labels, img_ids, events, ev_ids, ev_labels)


def make_event_test_set(n: int, seed: int, first_scene_id: int, resolution: int = 32,
                        num_classes: int = 4, contrast: float = 0.2, eps: float = 1e-3,
                        motion_range=(1.0, 2.5)) -> EventTestSet:
    """Labeled event histograms for evaluation, from scene ids >= ``first_scene_id``."""
    rng = np.random.default_rng([int(seed), 0x7E57])
    labels = _balanced_labels(n, num_classes, rng)
    ids = np.arange(first_scene_id, first_scene_id + n)
    events = np.stack([scene_events(sample_scene(seed, i, int(l), resolution, motion_range),
                                    resolution, contrast, eps)
                       for i, l in zip(ids, labels)])
    return EventTestSet(events, labels, ids)


def datasets_for_config(cfg) -> tuple[ToyDataset, EventTestSet]:
    """Training set and held-out event test set as described by a PipelineConfig.

    Test scenes take ids after all training scenes, so they are never seen
    in training.
    """
    kw = dict(resolution=cfg.resolution, num_classes=cfg.num_classes, contrast=cfg.contrast,
              eps=cfg.log_eps, motion_range=cfg.sampler_spec().magnitude_range)
    train = make_dataset(cfg.n_train_images, cfg.seed, n_events=cfg.n_train_events, **kw)
    test = make_event_test_set(cfg.n_test_events, cfg.seed,
                               first_scene_id=cfg.n_train_images + cfg.n_train_events, **kw)
    return train, test
