"""Mask losses with analytic gradients.

All losses return a LossValue carrying d(loss)/d(pred); gradients are
exactly zero wherever the supervision weight mask is zero. Reductions
accumulate in float64.

The low-level (projection + pairwise color affinity) loss is a
reconstruction of box-only supervision terms this engine does not define
authoritatively: the projection term is a dice between the prediction's
row/column max-projections and the box indicator's, and the pairwise term
averages -log(p_i*p_j + (1-p_i)*(1-p_j)) over 8-neighborhood edges inside
the dilated box whose LAB color similarity exp(-||dLAB||/sigma) clears a
threshold. Its defaults (theta = 0.3, sigma = 2) are package conventions,
not claims; it can be skipped and replaced by an externally supplied
scalar at the pipeline level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from skimage.color import rgb2lab

from . import kernels
from .errors import ValidationError
from .fusion import Box, PseudoLabel
from .kernels.numpy_impl import EDGE_DIRS

PRED_CLAMP = 1e-7
DICE_EPS = 1e-6
PAIRWISE_THETA = 0.3
PAIRWISE_SIGMA = 2.0
BOX_DILATION = 2


@dataclass
class LossValue:
    value: float
    grad: np.ndarray


def _as_f64(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _check_masked_inputs(pred, target, weight) -> float:
    if pred.shape != target.shape or pred.shape != weight.shape:
        raise ValidationError(
            f"shape mismatch: pred {pred.shape}, target {target.shape}, weight {weight.shape}"
        )
    n = float(weight.sum())
    if n <= 0:
        raise ValidationError("weight mask ignores every pixel")
    return n


def bce_loss(pred: np.ndarray, target: np.ndarray, weight: np.ndarray) -> LossValue:
    """Binary cross-entropy averaged over supervised pixels, with gradient."""
    pred, target, weight = _as_f64(pred), _as_f64(target), _as_f64(weight)
    n = _check_masked_inputs(pred, target, weight)
    p = np.clip(pred, PRED_CLAMP, 1.0 - PRED_CLAMP)
    value = float((weight * -(target * np.log(p) + (1.0 - target) * np.log1p(-p))).sum() / n)
    inside = (pred >= PRED_CLAMP) & (pred <= 1.0 - PRED_CLAMP)
    grad = weight * inside * (-target / p + (1.0 - target) / (1.0 - p)) / n
    return LossValue(value=value, grad=grad)


def dice_loss(pred: np.ndarray, target: np.ndarray, weight: np.ndarray) -> LossValue:
    """Squared-denominator dice loss over supervised pixels, with gradient."""
    pred, target, weight = _as_f64(pred), _as_f64(target), _as_f64(weight)
    _check_masked_inputs(pred, target, weight)
    inter = float((weight * pred * target).sum())
    denom = float((weight * pred * pred).sum() + (weight * target * target).sum() + DICE_EPS)
    value = 1.0 - 2.0 * inter / denom
    grad = weight * (4.0 * inter * pred - 2.0 * target * denom) / (denom * denom)
    return LossValue(value=value, grad=grad)


def mask_loss(pred: np.ndarray, target: np.ndarray, weight: np.ndarray) -> LossValue:
    """BCE + dice with a shared weight mask."""
    b = bce_loss(pred, target, weight)
    d = dice_loss(pred, target, weight)
    return LossValue(value=b.value + d.value, grad=b.grad + d.grad)


def pseudo_mask_loss(preds: list[np.ndarray], pseudos: list[PseudoLabel]) -> LossValue:
    """Mean of mask_loss over positives, each against its instance's pseudo label.

    Zero positives is defined as loss 0 with an empty gradient.
    """
    if len(preds) != len(pseudos):
        raise ValidationError("one pseudo label per positive prediction required")
    if not preds:
        return LossValue(value=0.0, grad=np.zeros((0,)))
    n = len(preds)
    grads = []
    total = 0.0
    for pred, pl in zip(preds, pseudos):
        lv = mask_loss(pred, pl.hard, pl.weight)
        total += lv.value
        grads.append(lv.grad / n)
    return LossValue(value=total / n, grad=np.stack(grads))


def paste_loss(preds: list[np.ndarray], pasted_masks: list[np.ndarray],
               paste_flags: list[bool]) -> LossValue:
    """Sum (not mean) of mask_loss over pasted instances, full weight mask."""
    if not (len(preds) == len(pasted_masks) == len(paste_flags)):
        raise ValidationError("preds, pasted_masks and paste_flags must align")
    total = 0.0
    grads = []
    for pred, mask, flagged in zip(preds, pasted_masks, paste_flags):
        if not flagged:
            grads.append(np.zeros_like(_as_f64(pred)))
            continue
        lv = mask_loss(pred, mask, np.ones_like(_as_f64(pred)))
        total += lv.value
        grads.append(lv.grad)
    grad = np.stack(grads) if grads else np.zeros((0,))
    return LossValue(value=total, grad=grad)


def _projection_dice_1d(p: np.ndarray, t: np.ndarray):
    inter = float((p * t).sum())
    denom = float((p * p).sum() + (t * t).sum() + DICE_EPS)
    value = 1.0 - 2.0 * inter / denom
    grad = (4.0 * inter * p - 2.0 * t * denom) / (denom * denom)
    return value, grad


def color_similarity(image: np.ndarray, sigma: float = PAIRWISE_SIGMA) -> np.ndarray:
    """Per-direction LAB similarity exp(-||dLAB|| / sigma), shape (H, W, 4).

    Entry (h, w, d) describes the edge from (h, w) toward EDGE_DIRS[d];
    out-of-bounds directions are 0.
    """
    lab = rgb2lab(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0))
    height, width = lab.shape[:2]
    sim = np.zeros((height, width, 4), dtype=np.float64)
    for d, (dy, dx) in enumerate(EDGE_DIRS):
        h0, h1 = 0, height - dy
        w0, w1 = (0, width - dx) if dx >= 0 else (-dx, width)
        diff = lab[h0:h1, w0:w1] - lab[h0 + dy:h1 + dy, w0 + dx:w1 + dx]
        dist = np.sqrt((diff * diff).sum(axis=2))
        sim[h0:h1, w0:w1, d] = np.exp(-dist / sigma)
    return sim


def select_pairwise_edges(sim: np.ndarray, box: Box, theta: float = PAIRWISE_THETA,
                          dilation: int = BOX_DILATION) -> np.ndarray:
    """Boolean (H, W, 4) mask of edges inside the dilated box with sim >= theta."""
    height, width = sim.shape[:2]
    dbox = Box(box.x0 - dilation, box.y0 - dilation,
               box.x1 + dilation, box.y1 + dilation).clamp(width, height)
    r0, c0, r1, c1 = dbox.pixel_slice(width, height)
    region = np.zeros((height, width), dtype=bool)
    region[r0:r1, c0:c1] = True
    sel = np.zeros(sim.shape, dtype=bool)
    for d, (dy, dx) in enumerate(EDGE_DIRS):
        h0, h1 = 0, height - dy
        w0, w1 = (0, width - dx) if dx >= 0 else (-dx, width)
        both = region[h0:h1, w0:w1] & region[h0 + dy:h1 + dy, w0 + dx:w1 + dx]
        sel[h0:h1, w0:w1, d] = both & (sim[h0:h1, w0:w1, d] >= theta)
    return sel


def lowlevel_loss(pred: np.ndarray, gt_box: Box, image: np.ndarray | None = None,
                  theta: float = PAIRWISE_THETA, sigma: float = PAIRWISE_SIGMA,
                  dilation: int = BOX_DILATION,
                  edges: np.ndarray | None = None) -> LossValue:
    """Reconstructed box-only supervision: projection dice + pairwise affinity.

    Either ``image`` (colors in [0, 1]) or a precomputed ``edges`` selection
    from select_pairwise_edges must be provided for the pairwise term. A
    degenerate (zero-area) box contributes a zero projection term.
    """
    pred64 = _as_f64(pred)
    height, width = pred64.shape
    grad = np.zeros_like(pred64)
    value = 0.0

    box = gt_box.clamp(width, height)
    if box.area > 0.0:
        r0, c0, r1, c1 = box.pixel_slice(width, height)
        ind = np.zeros_like(pred64)
        ind[r0:r1, c0:c1] = 1.0
        for axis in (1, 0):
            proj_p = pred64.max(axis=axis)
            proj_t = ind.max(axis=axis)
            v, g1d = _projection_dice_1d(proj_p, proj_t)
            value += v
            argmax = pred64.argmax(axis=axis)
            if axis == 1:
                grad[np.arange(height), argmax] += g1d
            else:
                grad[argmax, np.arange(width)] += g1d

    if edges is None:
        if image is None:
            raise ValidationError("lowlevel_loss needs an image or a precomputed edge selection")
        edges = select_pairwise_edges(color_similarity(image, sigma), gt_box,
                                      theta=theta, dilation=dilation)
    p = np.clip(pred64, PRED_CLAMP, 1.0 - PRED_CLAMP)
    loss_sum, count, pair_grad = kernels.pairwise_edge_loss(p, edges)
    if count > 0:
        inside = (pred64 >= PRED_CLAMP) & (pred64 <= 1.0 - PRED_CLAMP)
        value += loss_sum / count
        grad += pair_grad * inside / count
    return LossValue(value=value, grad=grad)


def total_loss(lowlevel: float, pseudo: float, paste: float,
               lambda1: float, lambda2: float) -> float:
    """Linear combination lowlevel + lambda1 * pseudo + lambda2 * paste."""
    for name, v in (("lowlevel", lowlevel), ("pseudo", pseudo), ("paste", paste)):
        if not np.isfinite(v):
            raise ValidationError(f"{name} loss is not finite: {v}")
    return lowlevel + lambda1 * pseudo + lambda2 * paste


def ramp_lambdas(step: int, warmup_steps: int, lambda1: float, lambda2: float):
    """Warm-up schedule: both trade-off weights are 0 before warmup_steps."""
    if step < warmup_steps:
        return 0.0, 0.0
    return lambda1, lambda2
