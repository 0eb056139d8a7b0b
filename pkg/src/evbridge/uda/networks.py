"""Toy encoders, decoder, refinement block, task head and patch discriminators.

Shapes below assume the default 32x32 input and widths.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..config import PipelineConfig
from ..errors import DimensionError
from ..fields import DEFAULT_LOG_EPS, gradient_arrays


class Conv:
    def __init__(self, store: ad.ParamStore, name: str, cin: int, cout: int, rng, k: int = 3,
                 stride: int = 1, gain: float = 1.0):
        std = gain * np.sqrt(2.0 / (cin * k * k))
        self.w = store.add(f"{name}.w", rng.normal(0.0, std, size=(cout, cin, k, k)))
        self.b = store.add(f"{name}.b", np.zeros(cout))
        self.stride = stride

    def __call__(self, x):
        return ad.conv2d(x, self.w, self.b, self.stride)

    def spectral(self, x):
        """Convolution with the kernel divided by its largest singular value.

        The exact value from an SVD of the small [C_out, C_in*k*k] matrix is
        used and treated as a constant when differentiating.
        """
        w = self.w
        sigma = float(np.linalg.norm(ad.detach(w).data.reshape(w.shape[0], -1), 2))
        return ad.conv2d(x, w * (1.0 / sigma), self.b, self.stride)


class Linear:
    def __init__(self, store, name, nin, nout, rng):
        self.w = store.add(f"{name}.w", rng.normal(0.0, np.sqrt(1.0 / nin), size=(nin, nout)))
        self.b = store.add(f"{name}.b", np.zeros(nout))

    def __call__(self, x):
        return ad.matmul(x, self.w) + self.b


def _lrelu(x):
    return ad.leaky_relu(x, 0.2)


class Encoder:
    """[B, C_in, 32, 32] -> shared feature z [B, 16, 8, 8]."""

    def __init__(self, store, name, cin, channels, rng):
        c0, c1, c2 = channels
        self.convs = [Conv(store, f"{name}.c0", cin, c0, rng, stride=1),
                      Conv(store, f"{name}.c1", c0, c1, rng, stride=2),
                      Conv(store, f"{name}.c2", c1, c2, rng, stride=2)]
        self.cin = cin

    def __call__(self, x):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise DimensionError(f"encoder expects [B, {self.cin}, H, W], got {x.shape}")
        h = _lrelu(self.convs[0](x))
        h = _lrelu(self.convs[1](h))
        return self.convs[2](h)


class AttributeEncoder:
    """Event histogram -> event-specific vector zeta [B, zeta_dim]."""

    def __init__(self, store, name, channels, zeta_dim, rng):
        a0, a1 = channels
        self.c0 = Conv(store, f"{name}.c0", 2, a0, rng, stride=2)
        self.c1 = Conv(store, f"{name}.c1", a0, a1, rng, stride=2)
        self.c2 = Conv(store, f"{name}.c2", a1, zeta_dim, rng, k=1)

    def __call__(self, x):
        h = _lrelu(self.c0(x))
        h = _lrelu(self.c1(h))
        return ad.mean(self.c2(h), axis=(2, 3))


class FlowDecoder:
    """(z, zeta) -> two channels at input resolution.

    zeta is broadcast over the 8x8 grid and concatenated with z.
    """

    def __init__(self, store, name, cz, zeta_dim, channels, rng):
        d0, d1 = channels
        self.zeta_dim = zeta_dim
        self.c0 = Conv(store, f"{name}.c0", cz + zeta_dim, d0, rng)
        self.c1 = Conv(store, f"{name}.c1", d0, d1, rng)
        self.c2 = Conv(store, f"{name}.c2", d1, 2, rng, gain=0.5)

    def __call__(self, z, zeta=None):
        b, _, h, w = z.shape
        if zeta is None:
            zmap = ad.Tensor(np.zeros((b, self.zeta_dim, h, w)))
        else:
            if zeta.shape[0] != b:
                raise DimensionError(f"batch mismatch: z has {b}, zeta has {zeta.shape[0]}")
            zmap = ad.broadcast_to(ad.reshape(zeta, (b, self.zeta_dim, 1, 1)), (b, self.zeta_dim, h, w))
        x = ad.concat([z, zmap], axis=1)
        x = ad.upsample_nearest(_lrelu(self.c0(x)))
        x = ad.upsample_nearest(_lrelu(self.c1(x)))
        return self.c2(x)


class Refiner:
    """Three-conv residual on top of the model-based event guess."""

    def __init__(self, store, name, noise_channels, width, rng, gain=0.1):
        self.noise_channels = noise_channels
        self.c0 = Conv(store, f"{name}.c0", 2 + noise_channels, width, rng)
        self.c1 = Conv(store, f"{name}.c1", width, width, rng)
        self.c2 = Conv(store, f"{name}.c2", width, 2, rng, gain=gain)

    def residual(self, guess_scaled, noise):
        x = ad.concat([guess_scaled, noise], axis=1)
        h = _lrelu(self.c0(x))
        h = _lrelu(self.c1(h))
        return self.c2(h)


class TaskHead:
    """z [B, 16, 8, 8] -> class logits [B, K]."""

    def __init__(self, store, name, cz, width, spatial, num_classes, rng):
        self.conv = Conv(store, f"{name}.c0", cz, width, rng, stride=2)
        self.flat = width * (spatial // 2) ** 2
        self.fc = Linear(store, f"{name}.fc", self.flat, num_classes, rng)
        self.cz = cz

    def __call__(self, z):
        if z.ndim != 4 or z.shape[1] != self.cz:
            raise DimensionError(f"task head expects [B, {self.cz}, h, w], got {z.shape}")
        h = _lrelu(self.conv(z))
        return self.fc(ad.reshape(h, (h.shape[0], self.flat)))


class PatchDiscriminator:
    """Three conv layers emitting a grid of real/fake scores."""

    def __init__(self, store, name, cin, width, rng, first_stride=2, spectral_norm=False):
        self.c0 = Conv(store, f"{name}.c0", cin, width, rng, stride=first_stride)
        self.c1 = Conv(store, f"{name}.c1", width, width, rng, stride=2)
        self.c2 = Conv(store, f"{name}.c2", width, 1, rng)
        self.spectral_norm = spectral_norm

    def __call__(self, x):
        layer = (lambda c, h: c.spectral(h)) if self.spectral_norm else (lambda c, h: c(h))
        h = _lrelu(layer(self.c0, x))
        h = _lrelu(layer(self.c1, h))
        return layer(self.c2, h)


def log_gradients(images: np.ndarray, eps: float = DEFAULT_LOG_EPS) -> np.ndarray:
    """[B, H, W] intensities -> [B, 2, H, W] gradient of log intensity."""
    gx, gy = gradient_arrays(np.log(images + eps))
    return np.stack([gx, gy], axis=1)


class Networks:
    """Every module of the pipeline, registered in one ParamStore."""

    GROUPS = ("enc_img", "enc_event", "enc_attr", "dec_flow", "refine", "task", "disc_lat", "disc_event")

    def __init__(self, cfg: PipelineConfig, seed: int | None = None):
        self.cfg = cfg
        seed = cfg.seed if seed is None else seed
        self.store = ad.ParamStore()
        rng = np.random.default_rng([int(seed), 0x5EED])
        cz = cfg.enc_channels[-1]
        s = self.store
        self.enc_img = Encoder(s, "enc_img", 1, cfg.enc_channels, rng)
        self.enc_event = Encoder(s, "enc_event", 2, cfg.enc_channels, rng)
        self.enc_attr = AttributeEncoder(s, "enc_attr", cfg.attr_channels, cfg.zeta_dim, rng)
        self.dec_flow = FlowDecoder(s, "dec_flow", cz, cfg.zeta_dim, cfg.dec_channels, rng)
        self.refine = Refiner(s, "refine", cfg.noise_channels, cfg.refine_channels, rng, cfg.residual_init_gain)
        self.task = TaskHead(s, "task", cz, cfg.task_channels, cfg.resolution // 4, cfg.num_classes, rng)
        self.disc_lat = PatchDiscriminator(s, "disc_lat", cz, cfg.disc_channels, rng, first_stride=1,
                                           spectral_norm=cfg.spectral_norm)
        self.disc_event = PatchDiscriminator(s, "disc_event", 2, cfg.disc_channels, rng,
                                             spectral_norm=cfg.spectral_norm)

    def names(self, *groups) -> list[str]:
        return [n for n in self.store.names() if n.split(".")[0] in groups]

    # -- composite blocks -------------------------------------------------

    def encode_image(self, images):
        """[B, H, W] or [B, 1, H, W] intensities -> z."""
        x = ad.as_tensor(images)
        if x.ndim == 3:
            x = ad.reshape(x, (x.shape[0], 1) + x.shape[1:])
        self._check_res(x)
        return self.enc_img(x)

    def encode_event(self, hist_scaled):
        """Scaled [B, 2, H, W] histogram -> (z, zeta)."""
        x = ad.as_tensor(hist_scaled)
        self._check_res(x)
        return self.enc_event(x), self.enc_attr(x)

    def _check_res(self, x):
        r = self.cfg.resolution
        if x.shape[-2:] != (r, r):
            raise DimensionError(f"expected {r}x{r} input, got {x.shape[-2:]}")

    def decode_pseudo_flow(self, z, zeta):
        """Pseudo-flow [B, 2, H, W] (u then v), already carrying the 1/C factor."""
        return self.dec_flow(z, zeta) * self.cfg.pflow_scale

    def decode_direct(self, z, zeta):
        """Ablation path: nonnegative counts predicted without the flow model."""
        return ad.relu(self.dec_flow(z, zeta) * self.cfg.direct_hist_scale)

    def initial_guess(self, log_grad: np.ndarray, pflow):
        """<grad log I, pseudo-flow> split into ON / OFF channels."""
        n = ad.sum_(ad.mul(log_grad, pflow), axis=1, keepdims=True)
        return ad.concat([ad.relu(n), ad.relu(-n)], axis=1)

    def refine_counts(self, guess, noise):
        """Rectified guess + bounded learned residual, in event counts.

        The residual is squashed to at most ``residual_max`` events per pixel
        and channel, so the model-based guess stays the main source of events.
        """
        k = self.cfg.event_input_scale
        r = self.refine.residual(guess * k, noise)
        return ad.relu(guess + ad.tanh(r) * self.cfg.residual_max)

    def translate(self, images: np.ndarray, z, zeta, noise, log_grad=None):
        """Image -> (events [B, 2, H, W] in counts, pseudo-flow or None)."""
        if self.cfg.flow_module_enabled:
            if log_grad is None:
                log_grad = log_gradients(images, self.cfg.log_eps)
            pflow = self.decode_pseudo_flow(z, zeta)
            return self.refine_counts(self.initial_guess(log_grad, pflow), noise), pflow
        return self.refine_counts(self.decode_direct(z, zeta), noise), None

    def classify_events(self, hist_counts: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            z, _ = self.encode_event(np.asarray(hist_counts) * self.cfg.event_input_scale)
            return self.task(z).data
