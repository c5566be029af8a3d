"""Per-class semantic probability maps from prototype cosine similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import UninitializedClassError, ValidationError
from .prototypes import PrototypeBank
from .tensor_io import FeatureMap

# Strictly-inside-(0,1) bounds representable in float32.
_PROB_LO = np.float32(1e-7)
_PROB_HI = np.nextafter(np.float32(1.0), np.float32(0.0))


@dataclass
class SemanticMap:
    """Full-canvas class probability map; values strictly in (0, 1)."""

    probs: np.ndarray
    class_id: int
    tau: float


def semantic_prob_map(fm: FeatureMap, bank: PrototypeBank, class_id: int,
                      tau: float) -> SemanticMap:
    """sigmoid(best sub-center cosine / tau) per pixel for one class.

    Requires an initialized class and a normalized feature map. Zero
    feature vectors have cosine 0 by convention and map to 0.5.
    """
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    if not fm.normalized:
        raise ValidationError("semantic_prob_map requires a normalized feature map")
    if not 0 <= class_id < bank.num_classes:
        raise ValidationError(f"class_id {class_id} out of range")
    if not bank.initialized[class_id]:
        raise UninitializedClassError(
            f"class {class_id} has no trusted prototypes yet; fall back to the instance map"
        )
    protos = bank.prototypes[class_id].astype(np.float64)
    cos = np.einsum("hwd,ld->hwl", fm.data.astype(np.float64), protos)
    best = cos.max(axis=2)
    probs = expit(best / tau).astype(np.float32)
    np.clip(probs, _PROB_LO, _PROB_HI, out=probs)
    return SemanticMap(probs=probs, class_id=class_id, tau=tau)


def assign_to_instances(maps: dict[int, SemanticMap | None], labels: list[int],
                        num_classes: int) -> list[SemanticMap | None]:
    """Route per-class maps to instances by label; shared by reference.

    Classes marked absent (value None, e.g. uninitialized) stay None so the
    caller can fall back to the instance map. Labels outside [0,
    num_classes) are rejected.
    """
    out: list[SemanticMap | None] = []
    for label in labels:
        if not 0 <= label < num_classes:
            raise ValidationError(f"unknown class id {label}")
        out.append(maps.get(label))
    return out
