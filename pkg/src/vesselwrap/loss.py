"""Numerical kernels for the segmentation training objectives.

Tensors are plain numpy arrays of shape (C, Z, H, W): predictions hold
sigmoid probabilities, targets hold {0, 1}. Everything here is a pure
value/gradient pair; no training happens in this package.

Definitions:

* bce(p, q)            mean over all elements of -(q ln p + (1-q) ln(1-p)),
                       p clamped to [1e-7, 1 - 1e-7] before the logs
* soft_dice_loss(p, q) channel mean of 1 - (2 sum(pq) + s) / (sum p + sum q + s),
                       s = 1e-5, sums over the spatial axes
* pseudo overlap       alpha = tumor * artery, nu = tumor * vein, element-wise,
                       built the same way from targets and from predictions
* overlap_loss         bce(alpha_hat, alpha) + bce(nu_hat, nu)
* combined_loss        alpha_w * [beta * bce + (1 - beta) * dice]
                       + (1 - alpha_w) * overlap_loss, defaults (0.5, 0.8)

The weight named alpha in the combined objective is called ``alpha_w`` here
to keep it apart from the pseudo overlap label alpha.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .volume import ChannelId, MissingChannelError, STANDARD_CHANNELS

CLAMP_EPS = 1e-7
DICE_SMOOTH = 1e-5
GRADCHECK_STEP = 1e-4
GRADCHECK_MARGIN = 1e-3


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights: beta between BCE and Dice, alpha_w main vs overlap."""

    beta: float = 0.5
    alpha_w: float = 0.8

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0 and 0.0 <= self.alpha_w <= 1.0):
            raise ValueError(f"weights must lie in [0, 1]: beta={self.beta}, alpha_w={self.alpha_w}")


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"tensor dims mismatch: {p.shape} vs {q.shape}")
    return p, q


def _check_binary(q: np.ndarray):
    if not np.isin(q, (0.0, 1.0)).all():
        raise ValueError("target tensor must be binary")


def bce(p, q) -> float:
    """Mean element-wise binary cross-entropy with clamped predictions."""
    p, q = _check_pair(p, q)
    _check_binary(q)
    pc = np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)
    return float(np.mean(-(q * np.log(pc) + (1.0 - q) * np.log1p(-pc))))


def bce_grad(p, q) -> np.ndarray:
    p, q = _check_pair(p, q)
    pc = np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)
    g = (-q / pc + (1.0 - q) / (1.0 - pc)) / p.size
    g[(p < CLAMP_EPS) | (p > 1.0 - CLAMP_EPS)] = 0.0  # clamp plateau
    return g


def _dice_sums(p: np.ndarray, q: np.ndarray):
    axes = tuple(range(1, p.ndim))
    num = 2.0 * np.sum(p * q, axis=axes) + DICE_SMOOTH
    den = np.sum(p, axis=axes) + np.sum(q, axis=axes) + DICE_SMOOTH
    return num, den


def soft_dice_loss(p, q) -> float:
    """Per-channel smoothed soft Dice loss, averaged over channels."""
    p, q = _check_pair(p, q)
    num, den = _dice_sums(p, q)
    return float(np.mean(1.0 - num / den))


def soft_dice_grad(p, q) -> np.ndarray:
    p, q = _check_pair(p, q)
    num, den = _dice_sums(p, q)
    nC = p.shape[0]
    shape = (nC,) + (1,) * (p.ndim - 1)
    num = num.reshape(shape)
    den = den.reshape(shape)
    return -(2.0 * q * den - num) / (den * den) / nC


def pseudo_overlap(tumor, artery, vein):
    """Pseudo overlap grids: (tumor*artery, tumor*vein), element-wise."""
    t = np.asarray(tumor, dtype=np.float64)
    a = np.asarray(artery, dtype=np.float64)
    v = np.asarray(vein, dtype=np.float64)
    if not (t.shape == a.shape == v.shape):
        raise ValueError("tumor/artery/vein dims mismatch")
    return t * a, t * v


def _tav_indices(channels) -> tuple[int, int, int]:
    channels = tuple(ChannelId(c) for c in channels)
    idx = []
    for cid in (ChannelId.TUMOR, ChannelId.ARTERY, ChannelId.VEIN):
        if cid not in channels:
            raise MissingChannelError(f"loss needs the {cid.name.lower()} channel")
        idx.append(channels.index(cid))
    return tuple(idx)


def overlap_loss(pred, gt, channels=STANDARD_CHANNELS) -> float:
    """BCE of predicted vs target pseudo overlap labels, artery + vein terms."""
    pred, gt = _check_pair(pred, gt)
    ti, ai, vi = _tav_indices(channels)
    alpha_hat, nu_hat = pseudo_overlap(pred[ti], pred[ai], pred[vi])
    alpha, nu = pseudo_overlap(gt[ti], gt[ai], gt[vi])
    return bce(alpha_hat, alpha) + bce(nu_hat, nu)


def overlap_grad(pred, gt, channels=STANDARD_CHANNELS) -> np.ndarray:
    pred, gt = _check_pair(pred, gt)
    ti, ai, vi = _tav_indices(channels)
    t, a, v = pred[ti], pred[ai], pred[vi]
    alpha, nu = pseudo_overlap(gt[ti], gt[ai], gt[vi])
    d_alpha = bce_grad(t * a, alpha)
    d_nu = bce_grad(t * v, nu)
    g = np.zeros_like(pred)
    g[ti] = d_alpha * a + d_nu * v
    g[ai] = d_alpha * t
    g[vi] = d_nu * t
    return g


def combined_loss(pred, gt, weights: LossWeights = LossWeights(), channels=STANDARD_CHANNELS) -> float:
    """Weighted blend of BCE, soft Dice and the overlap term."""
    main = weights.beta * bce(pred, gt) + (1.0 - weights.beta) * soft_dice_loss(pred, gt)
    return weights.alpha_w * main + (1.0 - weights.alpha_w) * overlap_loss(pred, gt, channels)


def combined_grad(pred, gt, weights: LossWeights = LossWeights(), channels=STANDARD_CHANNELS) -> np.ndarray:
    main = weights.beta * bce_grad(pred, gt) + (1.0 - weights.beta) * soft_dice_grad(pred, gt)
    return weights.alpha_w * main + (1.0 - weights.alpha_w) * overlap_grad(pred, gt, channels)


def gradcheck(value_fn, grad_fn, pred, *args, step: float = GRADCHECK_STEP) -> float:
    """Max relative error between analytic and central-difference gradients.

    The prediction must sit strictly inside the clamp region with margin
    1e-3 so the losses are differentiable at every probed element.
    """
    pred = np.asarray(pred, dtype=np.float64)
    lo, hi = CLAMP_EPS + GRADCHECK_MARGIN, 1.0 - CLAMP_EPS - GRADCHECK_MARGIN
    if pred.min() < lo or pred.max() > hi:
        raise ValueError("prediction entries too close to the clamp boundary for gradcheck")
    analytic = np.asarray(grad_fn(pred, *args), dtype=np.float64)
    worst = 0.0
    work = pred.copy()
    for idx in np.ndindex(pred.shape):
        orig = work[idx]
        work[idx] = orig + step
        up = value_fn(work, *args)
        work[idx] = orig - step
        down = value_fn(work, *args)
        work[idx] = orig
        fd = (up - down) / (2.0 * step)
        ga = analytic[idx]
        err = abs(ga - fd) / max(1.0, abs(ga), abs(fd))
        if err > worst:
            worst = err
    return worst


# name -> (value_fn, grad_fn, needs_channel_map)
LOSS_FUNCTIONS = {
    "bce": (bce, bce_grad, False),
    "dice": (soft_dice_loss, soft_dice_grad, False),
    "overlap": (overlap_loss, overlap_grad, True),
    "combined": (combined_loss, combined_grad, True),
}


def gradcheck_loss(
    name: str,
    pred,
    gt,
    weights: LossWeights = LossWeights(),
    channels=STANDARD_CHANNELS,
    step: float = GRADCHECK_STEP,
) -> float:
    """gradcheck() for a named loss on a (pred, gt) pair."""
    if name not in LOSS_FUNCTIONS:
        raise ValueError(f"unknown loss {name!r}")
    value_fn, grad_fn, needs_channels = LOSS_FUNCTIONS[name]
    if name == "combined":
        return gradcheck(
            lambda p, g: value_fn(p, g, weights, channels),
            lambda p, g: grad_fn(p, g, weights, channels),
            pred,
            gt,
            step=step,
        )
    if needs_channels:
        return gradcheck(
            lambda p, g: value_fn(p, g, channels),
            lambda p, g: grad_fn(p, g, channels),
            pred,
            gt,
            step=step,
        )
    return gradcheck(value_fn, grad_fn, pred, gt, step=step)
