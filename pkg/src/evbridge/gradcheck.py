"""Central-difference checks of every autodiff primitive and of the toy pipeline."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad

N_POINTS = 20
RETRY_STEPS = (1e-6, 1e-7)
RETRY_ABOVE = 1e-6     # coordinates worse than this are re-probed with RETRY_STEPS
TOLERANCE = 1e-3


def _away_from_zero(rng, shape, gap=0.05):
    """Normal samples pushed at least ``gap`` away from 0 (kinks of relu/abs/max sit there)."""
    x = rng.normal(size=shape)
    return np.sign(x) * (gap + np.abs(x))


def _param(rng, shape, kind="normal"):
    if kind == "positive":
        data = 0.2 + np.abs(rng.normal(size=shape))
    elif kind == "generic":
        data = _away_from_zero(rng, shape)
    else:
        data = rng.normal(size=shape)
    return ad.Tensor(data, requires_grad=True)


def _readout(out, rng):
    """Fixed random linear functional turning any output into a scalar."""
    w = rng.normal(size=out.shape)
    return lambda t: ad.sum_(t * w)


def _case(build):
    def make(rng):
        params, fn = build(rng)
        probe = fn(*params)
        read = _readout(probe, rng)
        return (lambda: read(fn(*params))), params
    return make


def _conv_case(stride, bias):
    def build(rng):
        ps = [_param(rng, (2, 3, 7, 6)), _param(rng, (4, 3, 3, 3))]
        if bias:
            ps.append(_param(rng, (4,)))
        return ps, lambda x, w, *b: ad.conv2d(x, w, b[0] if b else None, stride)
    return build


PRIMITIVES: dict[str, Callable] = {
    "add": _case(lambda r: ([_param(r, (3, 4)), _param(r, (4,))], ad.add)),
    "sub": _case(lambda r: ([_param(r, (3, 1)), _param(r, (3, 4))], ad.sub)),
    "mul": _case(lambda r: ([_param(r, (2, 3, 4)), _param(r, (3, 1))], ad.mul)),
    "neg": _case(lambda r: ([_param(r, (5,))], ad.neg)),
    "relu": _case(lambda r: ([_param(r, (4, 5), "generic")], ad.relu)),
    "leaky_relu": _case(lambda r: ([_param(r, (4, 5), "generic")], lambda x: ad.leaky_relu(x, 0.2))),
    "tanh": _case(lambda r: ([_param(r, (4, 5))], ad.tanh)),
    "abs": _case(lambda r: ([_param(r, (4, 5), "generic")], ad.abs_)),
    "max_with_scalar": _case(lambda r: ([_param(r, (4, 5), "generic")], lambda x: ad.max_with_scalar(x, 0.0))),
    "power": _case(lambda r: ([_param(r, (4, 5), "positive")], lambda x: ad.power(x, 0.45))),
    "power_negative_exponent": _case(lambda r: ([_param(r, (6,), "positive")], lambda x: ad.power(x, -1.0))),
    "sum": _case(lambda r: ([_param(r, (3, 4, 5))], lambda x: ad.sum_(x, axis=1))),
    "mean": _case(lambda r: ([_param(r, (3, 4, 5))], lambda x: ad.mean(x, axis=(0, 2), keepdims=True))),
    "max": _case(lambda r: ([_param(r, (3, 4, 5))], lambda x: ad.max_(x, axis=(1, 2)))),
    "reshape": _case(lambda r: ([_param(r, (3, 4))], lambda x: ad.reshape(x, (2, 6)))),
    "broadcast_to": _case(lambda r: ([_param(r, (3, 1))], lambda x: ad.broadcast_to(x, (2, 3, 4)))),
    "getitem": _case(lambda r: ([_param(r, (4, 5))], lambda x: ad.getitem(x, (slice(1, 3), slice(None, None, 2))))),
    "concat": _case(lambda r: ([_param(r, (2, 3)), _param(r, (2, 2))], lambda a, b: ad.concat([a, b], axis=1))),
    "matmul": _case(lambda r: ([_param(r, (3, 4)), _param(r, (4, 2))], ad.matmul)),
    "conv2d": _case(_conv_case(1, True)),
    "conv2d_stride2": _case(_conv_case(2, True)),
    "conv2d_nobias": _case(_conv_case(1, False)),
    "avg_pool2d": _case(lambda r: ([_param(r, (2, 3, 4, 6))], lambda x: ad.avg_pool2d(x, 2))),
    "upsample_nearest": _case(lambda r: ([_param(r, (2, 3, 3, 2))], lambda x: ad.upsample_nearest(x, 2))),
    "softmax_cross_entropy": _case(lambda r: ([_param(r, (5, 4))],
                                              lambda x, labels=r.integers(0, 4, size=5):
                                              ad.softmax_cross_entropy(x, labels))),
}


def check_primitive(name: str, n_points: int = N_POINTS, seed: int = 0, step: float = 1e-5) -> float:
    """Worst relative error of one primitive over ``n_points`` random points."""
    worst = 0.0
    for k in range(n_points):
        rng = np.random.default_rng([seed, k, sum(name.encode())])
        f, params = PRIMITIVES[name](rng)
        worst = max(worst, ad.grad_check(f, params, step=step))
    return worst


def check_primitives(n_points: int = N_POINTS, seed: int = 0) -> dict[str, float]:
    return {name: check_primitive(name, n_points, seed) for name in PRIMITIVES}


def tiny_pipeline_config(**over):
    """Smallest configuration that still runs every branch of the pipeline."""
    from .config import PipelineConfig

    kw = dict(resolution=8, enc_channels=(3, 4, 4), attr_channels=(3, 3), zeta_dim=3, dec_channels=(4, 3),
              refine_channels=3, noise_channels=2, task_channels=4, disc_channels=3, batch_size=2,
              residual_init_gain=1.0)
    kw.update(over)
    return PipelineConfig(**kw)


def _tiny_batch(cfg, rng):
    from .uda.networks import log_gradients
    from .uda.objectives import batch_gradient_magnitude
    from .uda.pipeline import Batch

    b, r = cfg.batch_size, cfg.resolution
    yy, xx = np.mgrid[0:r, 0:r]
    images = np.stack([np.clip(0.5 + 0.4 * np.sin(rng.uniform(0.3, 1.2) * xx + rng.uniform(0.3, 1.2) * yy
                                                  + rng.uniform(0, 6)), 0.0, 1.0) for _ in range(b)])
    events = rng.poisson(1.0, size=(b, 2, r, r)).astype(np.float64)
    theta = rng.uniform(0, 2 * np.pi, size=b)
    return Batch(images=images, labels=rng.integers(0, cfg.num_classes, size=b), events=events,
                 log_grad=log_gradients(images, cfg.log_eps), grad_mag=batch_gradient_magnitude(images),
                 noise=[rng.normal(size=(b, cfg.noise_channels, r, r)) for _ in range(3)],
                 directions=np.stack([np.cos(theta), np.sin(theta)], axis=1))


def check_pipeline(n_points: int = N_POINTS, seed: int = 0, max_coords: int = 2, step: float = 1e-5) -> float:
    """Gradient check of the generator objective of a tiny pipeline.

    Covers encoders, flow decoder, refinement, discriminators and every
    loss term.  Each point uses fresh weights, random biases and a fresh
    batch; a few coordinates per parameter tensor are probed.
    """
    from .losses import GEN_STEP
    from .uda.pipeline import Trainer
    from .uda.scenes import ToyDataset

    cfg = tiny_pipeline_config()
    worst = 0.0
    for k in range(n_points):
        rng = np.random.default_rng([seed, k, 0x61])
        batch = _tiny_batch(cfg, rng)
        dummy = ToyDataset(images=batch.images, labels=batch.labels, image_scene_ids=np.arange(2),
                           events=batch.events, event_scene_ids=np.arange(2, 4), event_labels=batch.labels)
        tr = Trainer(cfg.replace(seed=seed * 1000 + k), dummy)
        # zero-initialized biases put activations exactly on kinks where inputs vanish
        for name in tr.nets.store.names():
            if name.endswith(".b"):
                p = tr.nets.store[name]
                p.data[...] = rng.normal(scale=0.1, size=p.shape)

        def f():
            terms, _ = tr.forward(batch)
            return tr.composite(terms, GEN_STEP)

        worst = max(worst, ad.grad_check(f, tr.nets.store, step=step, max_coords=max_coords, seed=k,
                                         retry_steps=RETRY_STEPS, retry_above=RETRY_ABOVE))
    return worst
