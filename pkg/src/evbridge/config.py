"""Pipeline configuration: defaults, JSON loading and validation."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError
from .flow import FlowSamplerSpec


def _default_sampler() -> dict:
    return FlowSamplerSpec(kind="translational", seed=0, magnitude_range=(1.0, 2.5)).to_dict()


@dataclass
class PipelineConfig:
    # scene and sensor; input intensities are normalized to [0, 1]
    resolution: int = 32
    num_classes: int = 4
    contrast: float = 0.2
    log_eps: float = 1e-3
    dt: float = 1.0
    intensity_range: str = "[0,1]"
    event_input_scale: float = 0.25
    pflow_scale: float = 10.0
    direct_hist_scale: float = 4.0

    # toy network widths
    enc_channels: tuple = (8, 16, 16)
    attr_channels: tuple = (8, 8)
    zeta_dim: int = 8
    dec_channels: tuple = (16, 8)
    refine_channels: int = 8
    noise_channels: int = 4
    task_channels: int = 16
    disc_channels: int = 16
    residual_init_gain: float = 0.1
    residual_max: float = 1.0          # largest per-pixel correction of the refinement block, in events
    spectral_norm: bool = True         # discriminator weights divided by their largest singular value

    # objective switches
    standard_sign: bool = True
    adaptation_enabled: bool = True
    flow_module_enabled: bool = True
    split_enabled: bool = True
    augm_enabled: bool = True
    task_on_augmented: bool = True
    detach_cycle_targets: bool = False
    smooth_componentwise: bool = False
    per_pixel_losses: bool = True
    smooth_through_encoder: bool = False  # let the smoothness gradient reach the shared features
    align_image_features: bool = False    # latent alignment also moves the image encoder

    # optimization
    steps: int = 900
    batch_size: int = 16
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    # data
    n_train_images: int = 800
    n_train_events: int = 800
    n_test_events: int = 400
    flow_sampler: dict = field(default_factory=_default_sampler)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                setattr(self, f.name, tuple(v))
        for name in ("contrast", "log_eps", "dt", "event_input_scale", "pflow_scale",
                     "direct_hist_scale", "lr", "adam_eps", "residual_max"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be a positive number, got {v!r}")
        for name in ("resolution", "num_classes", "zeta_dim", "refine_channels", "noise_channels",
                     "task_channels", "disc_channels", "batch_size", "n_train_images",
                     "n_train_events", "n_test_events"):
            v = getattr(self, name)
            if not (isinstance(v, int) and not isinstance(v, bool) and v > 0):
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.steps, int) or self.steps < 0:
            raise ValidationError(f"steps must be a nonnegative integer, got {self.steps!r}")
        if self.resolution % 8:
            raise ValidationError("resolution must be a multiple of 8")
        if len(self.enc_channels) != 3 or len(self.attr_channels) != 2 or len(self.dec_channels) != 2:
            raise ValidationError("enc_channels needs 3 entries, attr_channels and dec_channels 2")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")
        for name in ("standard_sign", "adaptation_enabled", "flow_module_enabled", "split_enabled",
                     "augm_enabled", "task_on_augmented", "detach_cycle_targets", "smooth_componentwise",
                     "per_pixel_losses", "spectral_norm", "smooth_through_encoder",
                     "align_image_features"):
            if not isinstance(getattr(self, name), bool):
                raise ValidationError(f"{name} must be true or false")
        self.sampler_spec()

    def sampler_spec(self) -> FlowSamplerSpec:
        if not isinstance(self.flow_sampler, dict):
            raise ValidationError("flow_sampler must be an object")
        return FlowSamplerSpec.from_dict(self.flow_sampler)

    @property
    def augmentation_active(self) -> bool:
        return (self.adaptation_enabled and self.augm_enabled and self.split_enabled
                and self.flow_module_enabled)

    def ablation_flags(self) -> dict:
        return {k: getattr(self, k) for k in ("adaptation_enabled", "flow_module_enabled",
                                              "split_enabled", "augm_enabled", "standard_sign")}

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def replace(self, **kw) -> "PipelineConfig":
        d = self.to_dict()
        d.update(kw)
        return PipelineConfig.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(d, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())
