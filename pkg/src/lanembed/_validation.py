"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import DomainError, ShapeError


def check_field(field, channels=None, name="field", dtype=np.float64):
    """Return ``field`` as an ``(H, W, C)`` array of ``dtype``.

    2-D input is treated as a single-channel field.
    """
    arr = np.asarray(field, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be 2-D or 3-D, got shape {arr.shape}")
    if channels is not None and arr.shape[2] != channels:
        raise ShapeError(f"{name} must have {channels} channel(s), got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    return arr


def check_plane(field, name="field", dtype=np.float64):
    """Return a single-channel field as an ``(H, W)`` array."""
    return check_field(field, channels=1, name=name, dtype=dtype)[:, :, 0]


def check_labels(labels, name="labels"):
    """Validate an instance labeling; return ``(labels, num_instances)``.

    Ids must be ``0..K`` with every id in ``1..K`` present.
    """
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == np.round(arr)):
            raise DomainError(f"{name} must hold integer ids")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise DomainError(f"{name} contains negative ids")
    k = int(arr.max()) if arr.size else 0
    present = np.unique(arr[arr > 0])
    if present.size != k:
        missing = sorted(set(range(1, k + 1)) - set(present.tolist()))
        raise DomainError(f"{name} is missing instance ids {missing}")
    return arr, k


def check_same_grid(*arrays, names=None):
    """Raise ShapeError unless every array shares the leading ``(H, W)``."""
    shapes = [np.shape(a)[:2] for a in arrays]
    if any(s != shapes[0] for s in shapes[1:]):
        names = names or [f"arg{i}" for i in range(len(arrays))]
        desc = ", ".join(f"{n}={s}" for n, s in zip(names, shapes))
        raise ShapeError(f"grid shapes differ: {desc}")


def check_open_unit(value, name):
    if not 0.0 < value < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {value}")
    return float(value)


def check_positive(value, name):
    if not value > 0:
        raise DomainError(f"{name} must be > 0, got {value}")
    return float(value)
