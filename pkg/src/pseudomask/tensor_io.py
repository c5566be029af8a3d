"""Dense tensor file IO and feature normalization.

Tensors are plain ``numpy.ndarray`` values: row-major (C order), float32
storage, with reductions done in float64. The on-disk format (".tnsr"):

    8-byte ASCII magic "SIMTNSR\\0"
    4-byte little-endian unsigned header length
    UTF-8 JSON header {"dtype":"f32","shape":[...]}
    raw little-endian float32 payload, row-major, no padding

Round trips are bit-exact. Non-finite payloads are rejected on both read
and write, with the offending index reported.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import TensorFormatError, ValidationError

MAGIC = b"SIMTNSR\x00"

_F32 = np.dtype("<f4")


def _check_finite(data: np.ndarray, context: str) -> None:
    if not np.isfinite(data).all():
        flat = np.argmin(np.isfinite(data).ravel())
        idx = np.unravel_index(int(flat), data.shape) if data.ndim else ()
        raise TensorFormatError(
            f"{context}: non-finite value {data.ravel()[flat]!r} at index {tuple(int(i) for i in idx)}"
        )


def write_tensor(t: np.ndarray, path: str | os.PathLike) -> None:
    """Write ``t`` to ``path`` in the binary tensor format (float32, row-major)."""
    arr = np.ascontiguousarray(t, dtype=_F32)
    _check_finite(arr, f"write_tensor({path})")
    header = json.dumps({"dtype": "f32", "shape": list(arr.shape)}, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(4, "little"))
        f.write(header)
        f.write(arr.tobytes(order="C"))


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    """Read a ".tnsr" file, returning its float32 payload bit-identically."""
    if not os.path.isfile(path):
        raise TensorFormatError(f"tensor file not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise TensorFormatError(f"{path}: bad magic {magic!r}")
        raw_len = f.read(4)
        if len(raw_len) != 4:
            raise TensorFormatError(f"{path}: truncated header length")
        header_len = int.from_bytes(raw_len, "little")
        raw_header = f.read(header_len)
        if len(raw_header) != header_len:
            raise TensorFormatError(f"{path}: truncated header")
        try:
            header = json.loads(raw_header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise TensorFormatError(f"{path}: unparseable header: {e}") from e
        if header.get("dtype") != "f32":
            raise TensorFormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        shape = header.get("shape")
        if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
            raise TensorFormatError(f"{path}: invalid shape {shape!r}")
        expected = math.prod(shape)
        payload = f.read()
    if len(payload) != expected * 4:
        raise TensorFormatError(
            f"{path}: payload length mismatch: shape {shape} needs {expected} values, "
            f"found {len(payload) // 4}"
        )
    data = np.frombuffer(payload, dtype=_F32).reshape(shape).copy()
    _check_finite(data, f"read_tensor({path})")
    return data


@dataclass
class FeatureMap:
    """An H x W x D feature map with a per-pixel-normalized flag.

    ``zero_pixels`` records (row, col) coordinates of all-zero feature
    vectors left untouched by normalization; cosine similarity against
    them is defined as 0 downstream.
    """

    data: np.ndarray
    normalized: bool = False
    zero_pixels: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise ValidationError(f"feature map must be H x W x D, got shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


def l2_normalize(fm: FeatureMap | np.ndarray) -> FeatureMap:
    """Divide every pixel vector by its Euclidean norm.

    Zero vectors are left as zero and reported via ``zero_pixels`` instead of
    producing NaN. Norms accumulate in float64; output is float32. The
    operation is idempotent to within float32 rounding.
    """
    arr = fm.data if isinstance(fm, FeatureMap) else fm
    if arr.ndim != 3:
        raise ValidationError(f"feature map must be H x W x D, got shape {arr.shape}")
    data = arr.astype(np.float64, copy=False)
    norms = np.sqrt(np.einsum("hwd,hwd->hw", data, data))
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    out = (data / safe[:, :, None]).astype(np.float32)
    zero_pixels = np.argwhere(zero)
    return FeatureMap(data=out, normalized=True, zero_pixels=zero_pixels)
