"""Dense fields, coordinate maps, spatial embeddings and per-instance statistics.

Fields are numpy arrays laid out ``(H, W)`` or ``(H, W, C)`` (row-major,
channel-innermost). Stored fields are float32; statistics are accumulated in
float64.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_field, check_labels, check_plane, check_same_grid
from .exceptions import DimensionError, DomainError, FormatError, ShapeError

FIELD_MAGIC = b"LEF1"
LABEL_MAGIC = b"LEL1"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class CoordMaps:
    """Pixel-center coordinates: ``x[r, c] == c + 0.5``, ``y[r, c] == r + 0.5``."""

    x: np.ndarray
    y: np.ndarray

    @property
    def shape(self):
        return self.x.shape

    def stack(self):
        """Return the coordinates as a 2-channel ``(H, W, 2)`` field."""
        return np.stack([self.x, self.y], axis=-1)


@dataclass(frozen=True)
class InstanceStats:
    """Per-instance centroid, mean bandwidth and pixel count (row ``k-1`` is instance ``k``)."""

    centroid: np.ndarray
    sigma_mean: np.ndarray
    pixel_count: np.ndarray

    @property
    def num_instances(self):
        return len(self.pixel_count)


def make_coordinate_maps(height, width):
    """Build the x and y coordinate maps for an ``height x width`` grid."""
    if height < 1 or width < 1:
        raise DimensionError(f"grid must be at least 1x1, got {height}x{width}")
    xs = np.arange(width, dtype=np.float32) + np.float32(0.5)
    ys = np.arange(height, dtype=np.float32) + np.float32(0.5)
    x = np.broadcast_to(xs[None, :], (height, width)).copy()
    y = np.broadcast_to(ys[:, None], (height, width)).copy()
    return CoordMaps(x=x, y=y)


def spatial_embedding(offsets, coords):
    """Return ``e = [x + o_x; y + o_y]`` as an ``(H, W, 2)`` field.

    The sum is taken in the dtype of ``offsets`` (float32 offsets give a
    float32 embedding).
    """
    offsets = np.asarray(offsets)
    if offsets.ndim != 3 or offsets.shape[2] != 2:
        raise ShapeError(f"offsets must be (H, W, 2), got {offsets.shape}")
    if offsets.shape[:2] != coords.shape:
        raise ShapeError(f"offsets grid {offsets.shape[:2]} != coordinate grid {coords.shape}")
    dtype = np.result_type(offsets.dtype, np.float32)
    return coords.stack().astype(dtype) + offsets.astype(dtype)


def foreground(labels):
    return np.asarray(labels) > 0


def instance_stats(embedding, sigma, labels):
    """Centroid, mean sigma and pixel count of every instance in ``labels``.

    Raises DomainError if sigma is not strictly positive on the foreground.
    """
    emb = check_field(embedding, channels=2, name="embedding")
    sig = check_plane(sigma, name="sigma")
    labels, k = check_labels(labels)
    check_same_grid(emb, sig, labels, names=["embedding", "sigma", "labels"])
    fg = labels > 0
    if np.any(sig[fg] <= 0):
        raise DomainError("sigma must be > 0 on every foreground pixel")

    ids = labels[fg] - 1
    counts = np.bincount(ids, minlength=k).astype(np.int64)
    cx = np.bincount(ids, weights=emb[fg][:, 0], minlength=k)
    cy = np.bincount(ids, weights=emb[fg][:, 1], minlength=k)
    ssum = np.bincount(ids, weights=sig[fg], minlength=k)
    centroid = np.stack([cx, cy], axis=1) / counts[:, None]
    sigma_mean = ssum / counts
    return InstanceStats(centroid=centroid, sigma_mean=sigma_mean, pixel_count=counts)


# -- LEF1 / LEL1 serialization ----------------------------------------------


def write_field(path, field):
    """Write a field as LEF1: magic, u32 H/W/C, then f32 values (little-endian)."""
    arr = np.asarray(field, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"field must be 2-D or 3-D, got {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, h, w, c))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_field(path):
    """Read a LEF1 file; always returns an ``(H, W, C)`` float32 array."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, h, w, c = _HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    n = h * w * c
    if len(raw) != _HEADER.size + 4 * n:
        raise FormatError(f"{path}: expected {n} values, got {(len(raw) - _HEADER.size) // 4}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size, count=n)
    return data.reshape(h, w, c).astype(np.float32)


def write_labels(path, labels):
    """Write a labeling as LEL1: magic, u32 H/W/K, then u16 labels."""
    labels, k = check_labels(labels)
    if k > np.iinfo(np.uint16).max:
        raise DomainError(f"too many instances for u16 storage: {k}")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(LABEL_MAGIC, h, w, k))
        fh.write(labels.astype("<u2").tobytes())


def read_labels(path):
    """Read a LEL1 file and return the ``(H, W)`` int64 labeling."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, h, w, k = _HEADER.unpack_from(raw)
    if magic != LABEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if len(raw) != _HEADER.size + 2 * h * w:
        raise FormatError(f"{path}: payload size does not match {h}x{w}")
    labels = np.frombuffer(raw, dtype="<u2", offset=_HEADER.size, count=h * w)
    labels = labels.reshape(h, w).astype(np.int64)
    _, found = check_labels(labels)
    if found != k:
        raise FormatError(f"{path}: header declares K={k} but labels hold {found}")
    return labels
