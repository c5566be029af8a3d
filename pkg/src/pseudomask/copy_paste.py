"""Online Copy-Paste: FIFO memory bank, importance sampling, and compositing.

Every stochastic choice consumes from one ``numpy.random.Generator`` in a
fixed documented order, so augmentation is reproducible given (inputs,
seed):

    select_instances:  (1) target count ~ integers(1, 4)
                       (2) weighted choice without replacement
    composite, per selected instance (repeated on retry):
                       (1) horizontal flip ~ random()
                       (2) scale ~ uniform(lo, hi)
                       (3) top ~ integers        (4) left ~ integers
"""

from __future__ import annotations

import json
import math
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .fusion import Box
from .tensor_io import read_tensor, write_tensor

DEFAULT_CAPACITY = 100
MANIFEST_FILE = "manifest.json"


@dataclass
class MemoryBankEntry:
    """One stored sample: image, annotations, hard pseudo masks, importance scores."""

    image: np.ndarray
    labels: list[int]
    boxes: list[Box]
    masks: list[np.ndarray]
    scores: list[float]

    def __post_init__(self) -> None:
        n = len(self.labels)
        if not (len(self.boxes) == len(self.masks) == len(self.scores) == n):
            raise ValidationError("entry annotation lists must align")
        if any(not 0.0 <= s <= 1.0 for s in self.scores):
            raise ValidationError("importance scores must lie in [0, 1]")


class MemoryBank:
    """First-in-first-out store of past samples, bounded by ``capacity``."""

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValidationError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.entries: deque[MemoryBankEntry] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, entry: MemoryBankEntry) -> "MemoryBank":
        """Append an entry, evicting the oldest when full."""
        self.entries.append(entry)
        return self

    def sample_entry(self, rng: np.random.Generator) -> tuple[int, MemoryBankEntry] | None:
        """Uniformly pick one stored entry; None when the bank is empty."""
        if not self.entries:
            return None
        idx = int(rng.integers(0, len(self.entries)))
        return idx, self.entries[idx]

    def save(self, directory: str | os.PathLike) -> None:
        os.makedirs(directory, exist_ok=True)
        manifest = {"capacity": self.capacity, "entries": []}
        for i, e in enumerate(self.entries):
            sub = f"entry_{i:04d}"
            os.makedirs(os.path.join(directory, sub), exist_ok=True)
            write_tensor(e.image, os.path.join(directory, sub, "image.tnsr"))
            mask_files = []
            for k, m in enumerate(e.masks):
                name = f"{sub}/mask_{k:03d}.tnsr"
                write_tensor(m, os.path.join(directory, name))
                mask_files.append(name)
            manifest["entries"].append({
                "image": f"{sub}/image.tnsr",
                "labels": list(map(int, e.labels)),
                "boxes": [b.to_list() for b in e.boxes],
                "scores": list(map(float, e.scores)),
                "masks": mask_files,
            })
        with open(os.path.join(directory, MANIFEST_FILE), "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2)

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "MemoryBank":
        with open(os.path.join(directory, MANIFEST_FILE), encoding="utf-8") as f:
            manifest = json.load(f)
        bank = cls(capacity=int(manifest["capacity"]))
        for rec in manifest["entries"]:
            bank.push(MemoryBankEntry(
                image=read_tensor(os.path.join(directory, rec["image"])),
                labels=[int(y) for y in rec["labels"]],
                boxes=[Box(*b) for b in rec["boxes"]],
                masks=[read_tensor(os.path.join(directory, m)) for m in rec["masks"]],
                scores=[float(s) for s in rec["scores"]],
            ))
        return bank


def importance_scores(prob_maps: list[np.ndarray], hard_masks: list[np.ndarray]):
    """Mean fused probability over each instance's foreground pixels.

    Returns (scores, pasteable): instances whose hard mask has no foreground
    get score 0 and pasteable False.
    """
    if len(prob_maps) != len(hard_masks):
        raise ValidationError("one probability map per hard mask required")
    scores = np.zeros(len(prob_maps), dtype=np.float64)
    pasteable = np.zeros(len(prob_maps), dtype=bool)
    for k, (prob, hard) in enumerate(zip(prob_maps, hard_masks)):
        if prob.shape != hard.shape:
            raise ValidationError(f"instance {k}: prob/hard shape mismatch")
        fg = hard >= 0.5
        n = int(fg.sum())
        if n == 0:
            continue
        scores[k] = float(np.asarray(prob, dtype=np.float64)[fg].sum() / n)
        pasteable[k] = True
    return scores, pasteable


def select_instances(entry: MemoryBankEntry, rng: np.random.Generator) -> np.ndarray:
    """Importance-proportional draw of instances to paste from one entry.

    Targets clamp(uniform{1,2,3}, 1, max(1, ceil(K/4))) instances, drawn
    without replacement with probability proportional to the stored scores;
    zero-score instances are never selected. Empty when nothing is
    pasteable.
    """
    scores = np.asarray(entry.scores, dtype=np.float64)
    candidates = np.flatnonzero(scores > 0.0)
    if candidates.size == 0:
        return np.empty(0, dtype=np.int64)
    k_total = len(entry.labels)
    n = int(rng.integers(1, 4))
    n = min(n, max(1, math.ceil(k_total / 4)))
    n = min(n, candidates.size)
    p = scores[candidates] / scores[candidates].sum()
    return rng.choice(candidates, size=n, replace=False, p=p).astype(np.int64)


@dataclass
class CompositeResult:
    """Augmented sample: pasted instances are listed last with paste_flags True."""

    image: np.ndarray
    labels: list[int]
    boxes: list[Box]
    masks: list[np.ndarray]
    paste_flags: list[bool]
    skipped: list[int] = field(default_factory=list)


def _nearest_resize(patch: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = patch.shape[:2]
    rows = np.minimum((np.arange(out_h) + 0.5) * in_h / out_h, in_h - 1).astype(np.int64)
    cols = np.minimum((np.arange(out_w) + 0.5) * in_w / out_w, in_w - 1).astype(np.int64)
    return patch[rows][:, cols]


def composite(target_image: np.ndarray, target_labels: list[int],
              target_boxes: list[Box], target_masks: list[np.ndarray | None],
              source_entry: MemoryBankEntry, selected: np.ndarray,
              rng: np.random.Generator, jitter: bool = True,
              scale_range: tuple[float, float] = (0.5, 1.5),
              flip_prob: float = 0.5, max_retries: int = 10) -> CompositeResult:
    """Paste selected source instances onto the target sample.

    Pasted foreground overwrites target colors and occludes target masks;
    among pasted instances, later pastes occlude earlier ones. Surviving
    annotations get boxes recomputed as the tight bounding box of their
    visible mask; instances with zero visible pixels are removed. Target
    instances without masks fall back to their box indicator for the
    occlusion bookkeeping. Instances whose transform comes up empty after
    ``max_retries`` are skipped (reported in ``skipped``).
    """
    height, width = target_image.shape[:2]
    if not (len(target_labels) == len(target_boxes) == len(target_masks)):
        raise ValidationError("target annotation lists must align")
    out_image = np.asarray(target_image, dtype=np.float32).copy()

    visible: list[np.ndarray] = []
    for box, mask in zip(target_boxes, target_masks):
        if mask is None:
            stand_in = np.zeros((height, width), dtype=bool)
            r0, c0, r1, c1 = box.clamp(width, height).pixel_slice(width, height)
            stand_in[r0:r1, c0:c1] = True
            visible.append(stand_in)
        else:
            if mask.shape != (height, width):
                raise ValidationError("target masks must match the image canvas")
            visible.append(np.asarray(mask) >= 0.5)

    pasted_masks: list[np.ndarray] = []
    pasted_labels: list[int] = []
    skipped: list[int] = []
    for k in selected:
        src_mask = np.asarray(source_entry.masks[k]) >= 0.5
        bbox = Box.from_mask(src_mask, 0.5)
        if bbox is None:
            skipped.append(int(k))
            continue
        r0, c0, r1, c1 = bbox.pixel_slice(source_entry.image.shape[1],
                                          source_entry.image.shape[0])
        patch_mask = src_mask[r0:r1, c0:c1]
        patch_img = np.asarray(source_entry.image, dtype=np.float32)[r0:r1, c0:c1]

        placed = None
        for _ in range(max_retries):
            if jitter:
                flip = rng.random() < flip_prob
                scale = rng.uniform(scale_range[0], scale_range[1])
                pm, pi = patch_mask, patch_img
                if flip:
                    pm = pm[:, ::-1]
                    pi = pi[:, ::-1]
                out_h = min(height, max(1, int(round(pm.shape[0] * scale))))
                out_w = min(width, max(1, int(round(pm.shape[1] * scale))))
                pm = _nearest_resize(pm, out_h, out_w)
                pi = _nearest_resize(pi, out_h, out_w)
                top = int(rng.integers(0, height - out_h + 1))
                left = int(rng.integers(0, width - out_w + 1))
            else:
                pm, pi = patch_mask, patch_img
                top, left = r0, c0
                if top + pm.shape[0] > height or left + pm.shape[1] > width:
                    skipped.append(int(k))
                    break
            if pm.any():
                canvas = np.zeros((height, width), dtype=bool)
                canvas[top:top + pm.shape[0], left:left + pm.shape[1]] = pm
                placed = (canvas, pi, top, left)
                break
            if not jitter:
                skipped.append(int(k))
                break
        else:
            skipped.append(int(k))
        if placed is None:
            continue
        canvas, pi, top, left = placed
        region = canvas[top:top + pi.shape[0], left:left + pi.shape[1]]
        out_image[top:top + pi.shape[0], left:left + pi.shape[1]][region] = pi[region]
        for v in visible:
            v &= ~canvas
        for pm_prev in pasted_masks:
            pm_prev &= ~canvas
        pasted_masks.append(canvas)
        pasted_labels.append(int(source_entry.labels[k]))

    labels: list[int] = []
    boxes: list[Box] = []
    masks: list[np.ndarray] = []
    flags: list[bool] = []
    for label, v in zip(target_labels, visible):
        box = Box.from_mask(v, 0.5)
        if box is None:
            continue
        labels.append(int(label))
        boxes.append(box)
        masks.append(v.astype(np.float32))
        flags.append(False)
    for label, pm in zip(pasted_labels, pasted_masks):
        box = Box.from_mask(pm, 0.5)
        if box is None:
            continue
        labels.append(label)
        boxes.append(box)
        masks.append(pm.astype(np.float32))
        flags.append(True)
    return CompositeResult(image=out_image, labels=labels, boxes=boxes,
                           masks=masks, paste_flags=flags, skipped=skipped)
