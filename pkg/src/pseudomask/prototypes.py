"""Dataset-level class prototypes: balanced transport assignment and EMA updates.

Each class keeps L unit-norm sub-centers. Foreground pixels gathered from
pseudo masks are assigned to sub-centers by entropy-regularized optimal
transport with uniform marginals (solved by log-domain Sinkhorn scaling),
hardened to per-pixel argmax, averaged into fresh centroids, and folded
into the bank with a momentum update.

The bank has a single-writer contract: ``ema_update`` calls must be
serialized, while reads of ``snapshot()`` copies are freely concurrent.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ValidationError
from .fusion import Box
from .tensor_io import FeatureMap, read_tensor, write_tensor

PROTO_FILE = "prototypes.tnsr"
META_FILE = "bank.json"


@dataclass
class TransportPlan:
    """Nonnegative (L, N) coupling with uniform row/column marginals."""

    q: np.ndarray
    row_marginal: np.ndarray
    col_marginal: np.ndarray
    n_iter: int
    violation: float
    converged: bool


def sinkhorn_assign(scores: np.ndarray, epsilon: float,
                    max_iter: int = 100, tol: float = 1e-6) -> TransportPlan:
    """Balanced-assignment transport plan for an (L, N) score matrix.

    Maximizes ``sum(Q * scores) + epsilon * H(Q)`` over couplings whose rows
    sum to 1/L and columns to 1/N. Runs in the log domain so small epsilon
    cannot overflow. Non-convergence within ``max_iter`` is reported as a
    warning; the best plan found is still returned.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] < 1 or scores.shape[1] < 1:
        raise ValidationError(f"scores must be a non-empty 2D matrix, got shape {scores.shape}")
    if not np.isfinite(scores).all():
        raise ValidationError("scores contain non-finite values")
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    if tol < 0:
        raise ValidationError(f"tol must be nonnegative, got {tol}")
    length, n = scores.shape
    log_r = np.full(length, -np.log(length))
    log_h = np.full(n, -np.log(n))
    log_q, n_iter, viol = kernels.sinkhorn_log(scores / epsilon, log_r, log_h, max_iter, tol)
    converged = viol <= tol
    if not converged:
        warnings.warn(
            f"sinkhorn_assign: marginal violation {viol:.3e} > tol {tol:.3e} "
            f"after {n_iter} iterations",
            RuntimeWarning,
            stacklevel=2,
        )
    return TransportPlan(
        q=np.exp(log_q),
        row_marginal=np.exp(log_r),
        col_marginal=np.exp(log_h),
        n_iter=n_iter,
        violation=float(viol),
        converged=converged,
    )


def harden_assignments(plan: TransportPlan) -> np.ndarray:
    """Per-pixel sub-center index: argmax mass per column, ties to the lowest index."""
    return plan.q.argmax(axis=0)


def compute_subcenters(features: np.ndarray, assignment: np.ndarray, num_subcenters: int):
    """Mean-then-normalize centroid per sub-center.

    Returns (centroids, counts). Sub-centers with no assigned pixels (or a
    degenerate zero mean) get count 0 and a zero centroid row; callers must
    skip them.
    """
    features = np.asarray(features)
    assignment = np.asarray(assignment)
    if assignment.ndim != 1 or features.shape[0] != assignment.shape[0]:
        raise ValidationError("assignment must pair one index per feature row")
    if assignment.size and (assignment.min() < 0 or assignment.max() >= num_subcenters):
        raise ValidationError("assignment index out of range")
    dim = features.shape[1]
    centroids = np.zeros((num_subcenters, dim), dtype=np.float32)
    counts = np.zeros(num_subcenters, dtype=np.int64)
    feats64 = features.astype(np.float64, copy=False)
    for l in range(num_subcenters):
        mask = assignment == l
        c = int(mask.sum())
        if c == 0:
            continue
        mean = feats64[mask].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            continue
        centroids[l] = (mean / norm).astype(np.float32)
        counts[l] = c
    return centroids, counts


def gather_class_pixels(fm: FeatureMap, boxes: list[Box], labels: list[int],
                        hard_masks: list[np.ndarray], class_id: int) -> np.ndarray:
    """Feature vectors of pixels inside any ``class_id`` box that its instance's
    hard pseudo mask marks as foreground; de-duplicated across instances.

    Returns an (N_c, D) float32 matrix, empty when nothing qualifies.
    """
    if not fm.normalized:
        raise ValidationError("gather_class_pixels requires a normalized feature map")
    if not (len(boxes) == len(labels) == len(hard_masks)):
        raise ValidationError("boxes, labels and hard_masks must align by instance")
    height, width = fm.height, fm.width
    selected = np.zeros((height, width), dtype=bool)
    for box, label, mask in zip(boxes, labels, hard_masks):
        if label != class_id or mask is None:
            continue
        r0, c0, r1, c1 = box.pixel_slice(width, height)
        if r1 <= r0 or c1 <= c0:
            continue
        region = np.zeros_like(selected)
        region[r0:r1, c0:c1] = mask[r0:r1, c0:c1] >= 0.5
        selected |= region
    return fm.data[selected].astype(np.float32, copy=False)


class PrototypeBank:
    """C x L x D unit-norm sub-centers with per-class initialization state.

    Classes start from seeded random unit vectors and are not trusted for
    semantic maps until every sub-center row has been set directly from
    data at least once; from then on updates are momentum blends followed
    by re-normalization.
    """

    def __init__(self, prototypes: np.ndarray, initialized: np.ndarray,
                 rows_seeded: np.ndarray, gamma: float, update_count: int = 0):
        if prototypes.ndim != 3:
            raise ValidationError("prototypes must be C x L x D")
        if not 0.0 <= gamma <= 1.0:
            raise ValidationError(f"gamma must lie in [0, 1], got {gamma}")
        self.prototypes = prototypes.astype(np.float32)
        self.initialized = initialized.astype(bool)
        self.rows_seeded = rows_seeded.astype(bool)
        self.gamma = float(gamma)
        self.update_count = int(update_count)

    @classmethod
    def create(cls, num_classes: int, num_subcenters: int, dim: int,
               gamma: float = 0.999, seed: int = 0) -> "PrototypeBank":
        """Fresh bank with deterministic random unit prototypes, all uninitialized."""
        rng = np.random.default_rng(seed)
        p = rng.standard_normal((num_classes, num_subcenters, dim))
        p /= np.linalg.norm(p, axis=2, keepdims=True)
        return cls(
            prototypes=p.astype(np.float32),
            initialized=np.zeros(num_classes, dtype=bool),
            rows_seeded=np.zeros((num_classes, num_subcenters), dtype=bool),
            gamma=gamma,
        )

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def num_subcenters(self) -> int:
        return self.prototypes.shape[1]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[2]

    def snapshot(self) -> "PrototypeBank":
        """Deep copy for concurrent reads while the live bank keeps updating."""
        return PrototypeBank(
            prototypes=self.prototypes.copy(),
            initialized=self.initialized.copy(),
            rows_seeded=self.rows_seeded.copy(),
            gamma=self.gamma,
            update_count=self.update_count,
        )

    def class_scores(self, class_id: int, features: np.ndarray) -> np.ndarray:
        """(L, N) cosine scores of the class's sub-centers against unit features."""
        protos = self.prototypes[class_id].astype(np.float64)
        return protos @ features.astype(np.float64).T

    def save(self, directory: str | os.PathLike) -> None:
        os.makedirs(directory, exist_ok=True)
        write_tensor(self.prototypes, os.path.join(directory, PROTO_FILE))
        meta = {
            "initialized": self.initialized.tolist(),
            "gamma": self.gamma,
            "update_count": self.update_count,
            "rows_seeded": self.rows_seeded.tolist(),
        }
        with open(os.path.join(directory, META_FILE), "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2)

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "PrototypeBank":
        protos = read_tensor(os.path.join(directory, PROTO_FILE))
        with open(os.path.join(directory, META_FILE), encoding="utf-8") as f:
            meta = json.load(f)
        return cls(
            prototypes=protos,
            initialized=np.asarray(meta["initialized"], dtype=bool),
            rows_seeded=np.asarray(meta["rows_seeded"], dtype=bool),
            gamma=float(meta["gamma"]),
            update_count=int(meta["update_count"]),
        )


def ema_update(bank: PrototypeBank, class_id: int, centroids: np.ndarray,
               counts: np.ndarray) -> PrototypeBank:
    """Fold fresh centroids into the bank for one class.

    Initialized classes blend ``gamma * old + (1 - gamma) * centroid`` and
    re-normalize; sub-centers with count 0 are untouched. While a class is
    uninitialized, populated rows are set directly, and the class flips to
    initialized once every row has been seeded.
    """
    if not 0 <= class_id < bank.num_classes:
        raise ValidationError(f"class_id {class_id} out of range")
    centroids = np.asarray(centroids, dtype=np.float64)
    counts = np.asarray(counts)
    if centroids.shape != (bank.num_subcenters, bank.dim):
        raise ValidationError(
            f"centroids shape {centroids.shape} does not match bank "
            f"({bank.num_subcenters}, {bank.dim})"
        )
    if counts.shape != (bank.num_subcenters,):
        raise ValidationError("counts must have one entry per sub-center")
    active = counts > 0
    if bank.initialized[class_id]:
        for l in np.flatnonzero(active):
            blended = bank.gamma * bank.prototypes[class_id, l].astype(np.float64) \
                + (1.0 - bank.gamma) * centroids[l]
            norm = np.linalg.norm(blended)
            if norm == 0.0:
                continue
            bank.prototypes[class_id, l] = (blended / norm).astype(np.float32)
    else:
        for l in np.flatnonzero(active):
            bank.prototypes[class_id, l] = centroids[l].astype(np.float32)
            bank.rows_seeded[class_id, l] = True
        if bank.rows_seeded[class_id].all():
            bank.initialized[class_id] = True
    bank.update_count += 1
    return bank
