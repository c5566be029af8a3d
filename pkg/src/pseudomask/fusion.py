"""Instance-aware map construction, self-correction fusion, and thresholding.

Boxes use half-open pixel coordinates [x0, x1) x [y0, y1): the tight box of
a mask whose pixels span columns c0..c1 is (c0, y0, c1 + 1, y1 + 1), so
continuous areas coincide with pixel counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Box:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValidationError(f"degenerate box corners: {self}")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def clamp(self, width: int, height: int) -> "Box":
        return Box(
            min(max(self.x0, 0.0), width),
            min(max(self.y0, 0.0), height),
            min(max(self.x1, 0.0), width),
            min(max(self.y1, 0.0), height),
        )

    def pixel_slice(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer (row0, col0, row1, col1) covering the box, clamped to the canvas."""
        c0 = max(0, math.floor(self.x0))
        r0 = max(0, math.floor(self.y0))
        c1 = min(width, math.ceil(self.x1))
        r1 = min(height, math.ceil(self.y1))
        return r0, c0, max(r0, r1), max(c0, c1)

    def to_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_mask(cls, mask: np.ndarray, threshold: float = 0.5) -> "Box | None":
        """Tight bounding box of ``mask >= threshold``, or None when empty."""
        rows, cols = np.nonzero(mask >= threshold)
        if rows.size == 0:
            return None
        return cls(float(cols.min()), float(rows.min()),
                   float(cols.max()) + 1.0, float(rows.max()) + 1.0)


@dataclass
class PositiveSample:
    """One positive anchor's mask prediction, linked to its ground-truth instance."""

    anchor_id: str
    gt_instance: int
    pred_mask: np.ndarray
    pred_box: Box | None = None
    source: str = "main"


@dataclass
class PseudoLabel:
    """Fused probability map with its hard mask and supervision weight mask.

    weight == 0 exactly on the ambiguous band tau_low < prob < tau_high;
    hard == 1 iff prob >= tau_high.
    """

    prob: np.ndarray
    hard: np.ndarray
    weight: np.ndarray


def box_iou(a: Box, b: Box) -> float:
    """Axis-aligned intersection over union; 0 when the union has zero area."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(0.0, iw) * max(0.0, ih)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _sample_iou(sample: PositiveSample, gt_box: Box) -> float:
    box = sample.pred_box
    if box is None:
        box = Box.from_mask(sample.pred_mask, 0.5)
    if box is None:
        return 0.0
    return box_iou(box, gt_box)


def positive_weights(samples: list[PositiveSample], gt_box: Box, mu: float) -> np.ndarray:
    """Quality weights exp(mu * IoU) over one instance's positives, normalized to 1.

    IoU is taken between each sample's predicted box and the ground-truth
    box; samples without a predicted box fall back to the tight box of
    their mask at threshold 0.5. Softmax uses max-subtraction for safety
    at large mu.
    """
    if not samples:
        raise ValidationError("positive_weights requires at least one sample")
    ious = np.array([_sample_iou(s, gt_box) for s in samples], dtype=np.float64)
    logits = mu * ious
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def instance_prob_map(samples: list[PositiveSample], weights: np.ndarray) -> np.ndarray:
    """Convex combination of the positives' predicted masks (float32 H x W)."""
    if len(samples) != len(weights):
        raise ValidationError("one weight per sample required")
    if not samples:
        raise ValidationError("instance_prob_map requires at least one sample")
    shape = samples[0].pred_mask.shape
    acc = np.zeros(shape, dtype=np.float64)
    for s, w in zip(samples, weights):
        if s.pred_mask.shape != shape:
            raise ValidationError("positive masks must share one shape")
        acc += float(w) * s.pred_mask.astype(np.float64)
    return acc.astype(np.float32)


def fuse(m_s: np.ndarray | None, m_i: np.ndarray, alpha: float) -> np.ndarray:
    """Blend (1 - alpha) * semantic + alpha * instance map.

    ``m_s`` may be None for classes with no trusted prototypes yet, in which
    case the instance map passes through (the alpha = 1 behavior). The
    endpoints alpha = 0 and alpha = 1 reproduce their input bit-exactly.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    if m_s is None or alpha == 1.0:
        return m_i.copy()
    if m_s.shape != m_i.shape:
        raise ValidationError(f"shape mismatch: {m_s.shape} vs {m_i.shape}")
    if alpha == 0.0:
        return m_s.copy()
    out = (1.0 - alpha) * m_s.astype(np.float64) + alpha * m_i.astype(np.float64)
    return out.astype(np.float32)


def threshold_select(prob: np.ndarray, tau_low: float, tau_high: float) -> PseudoLabel:
    """Split a probability map into confident foreground/background and an ignored band.

    Pixels with prob >= tau_high become supervised foreground, prob <=
    tau_low supervised background, and the open band in between gets
    weight 0. With tau_low == tau_high every pixel is supervised.
    """
    if not 0.0 <= tau_low <= tau_high <= 1.0:
        raise ValidationError(f"thresholds must satisfy 0 <= low <= high <= 1, got ({tau_low}, {tau_high})")
    fg = prob >= tau_high
    bg = prob <= tau_low
    hard = fg.astype(np.float32)
    weight = (fg | bg).astype(np.float32)
    return PseudoLabel(prob=np.asarray(prob, dtype=np.float32), hard=hard, weight=weight)
