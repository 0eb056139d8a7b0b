"""Differentiable counterparts of the loss kernels in :mod:`evbridge.losses`."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..flow import CHARBONNIER_ALPHA, CHARBONNIER_EPS, NEIGHBOR_OFFSETS, _shifted_pair
from ..losses import EVENT_TARGET, GRAD_THRESHOLD, normalized_gradient_magnitude


def hinge_disc(pos, neg):
    return ad.mean(ad.relu(1.0 - pos)) + ad.mean(ad.relu(1.0 + neg))


def hinge_gen_latent(scores_img, scores_event):
    return ad.mean(scores_img) - ad.mean(scores_event)


def hinge_gen_recons(scores_fake, standard_sign: bool):
    m = ad.mean(scores_fake)
    return -m if standard_sign else m


def recons_disc(scores_fake, scores_real, standard_sign: bool):
    if standard_sign:
        return hinge_disc(scores_real, scores_fake)
    return hinge_disc(scores_fake, scores_real)


def l1(a, b):
    return ad.mean(ad.abs_(a - b))


def charbonnier_smoothness(flow, alpha: float = CHARBONNIER_ALPHA, eps: float = CHARBONNIER_EPS,
                           componentwise: bool = False, per_pixel: bool = False):
    """Per-sample 8-neighbour Charbonnier sum of a [B, 2, H, W] flow, averaged over B.

    With ``per_pixel`` the per-sample sum is divided by H*W.
    """
    total = None
    c = eps ** alpha
    for dy, dx in NEIGHBOR_OFFSETS:
        a_idx, b_idx = _pair_slices(flow.shape[-2:], dy, dx)
        d = flow[a_idx] - flow[b_idx]
        if componentwise:
            term = ad.power(ad.power(d * d, alpha / 2.0) + c, 1.0 / alpha)
        else:
            sq = ad.sum_(d * d, axis=1)
            term = ad.power(ad.power(sq, alpha / 2.0) + c, 1.0 / alpha)
        s = ad.sum_(term)
        total = s if total is None else total + s
    scale = flow.shape[0] * (flow.shape[2] * flow.shape[3] if per_pixel else 1)
    return total * (1.0 / scale)


def _pair_slices(hw, dy, dx):
    h, w = hw
    ys = slice(max(0, -dy), h - max(0, dy))
    xs = slice(max(0, -dx), w - max(0, dx))
    yn = slice(max(0, dy), h + min(0, dy))
    xn = slice(max(0, dx), w + min(0, dx))
    return (slice(None), slice(None), ys, xs), (slice(None), slice(None), yn, xn)


def gradient_coverage(fake_counts, grad_mag: np.ndarray, per_pixel: bool = False):
    """Mean over the batch of the per-frame gradient-coverage penalty.

    ``fake_counts`` is [B, 2, H, W]; per-pixel totals are divided by the
    per-frame maximum (an all-zero frame stays zero).  With ``per_pixel``
    the per-frame sum is divided by H*W.
    """
    total = ad.sum_(fake_counts, axis=1)  # [B, H, W]
    m = ad.max_with_scalar(ad.max_(total, axis=(1, 2), keepdims=True), 1e-12)
    n = total * ad.power(m, -1.0)
    weight = np.where(grad_mag > GRAD_THRESHOLD, grad_mag, 0.0)
    per_pixel_loss = ad.max_with_scalar(EVENT_TARGET - n, 0.0) * weight
    scale = total.shape[0] * (total.shape[1] * total.shape[2] if per_pixel else 1)
    return ad.sum_(per_pixel_loss) * (1.0 / scale)


def batch_gradient_magnitude(images: np.ndarray) -> np.ndarray:
    return np.stack([normalized_gradient_magnitude(im) for im in images])


def augment_flow(pflow, directions: np.ndarray):
    """Keep per-pixel magnitude of [B, 2, H, W] ``pflow``; use unit ``directions`` [B, 2]."""
    mag = ad.power(ad.sum_(pflow * pflow, axis=1, keepdims=True), 0.5)
    d = np.asarray(directions, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    return mag * d[:, :, None, None]
