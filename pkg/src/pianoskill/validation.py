"""Input validation helpers shared by the estimators and pipeline modules."""

from __future__ import annotations

from typing import Sequence

import numpy as np

N_LEVELS = 10


class ValidationError(ValueError):
    """Raised when an input violates a documented contract.

    ``subject`` names the offending object (a record id, a clip, an
    argument) and ``field`` the attribute that failed, when known.
    """

    def __init__(self, message: str, subject: str | None = None, field: str | None = None):
        self.subject = subject
        self.field = field
        prefix = ""
        if subject is not None:
            prefix = f"{subject}"
            if field is not None:
                prefix += f".{field}"
            prefix += ": "
        super().__init__(prefix + message)


def check_level(value, name: str = "level", subject: str | None = None) -> int:
    """Return ``value`` as an int grade in 1..10, or raise."""
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ValidationError(f"expected an integer in 1-10, got {value!r}", subject, name)
    if not 1 <= int(value) <= N_LEVELS:
        raise ValidationError(f"must be in range 1-10, got {value}", subject, name)
    return int(value)


def check_levels(y, name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValidationError(f"expected a 1-D array of levels, got shape {y.shape}", name)
    if y.size and (not np.issubdtype(y.dtype, np.integer) or y.min() < 1 or y.max() > N_LEVELS):
        raise ValidationError("levels must be integers in 1-10", name)
    return y.astype(np.int64)


def check_positive(value, name: str, subject: str | None = None, integer: bool = False):
    if isinstance(value, bool):
        raise ValidationError(f"expected a number, got {value!r}", subject, name)
    if integer and not isinstance(value, (int, np.integer)):
        raise ValidationError(f"expected an integer, got {value!r}", subject, name)
    if not isinstance(value, (int, float, np.integer, np.floating)) or not value > 0:
        raise ValidationError(f"must be positive, got {value!r}", subject, name)
    return value


def check_bbox_in_frame(bbox, frame_width: int, frame_height: int, subject: str | None = None) -> None:
    """Raise unless ``bbox`` (x, y, w, h) lies inside a ``frame_width`` x ``frame_height`` frame."""
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise ValidationError(f"box extents must be positive, got w={w}, h={h}", subject, "bbox")
    if x < 0 or y < 0 or x + w > frame_width or y + h > frame_height:
        raise ValidationError(
            f"box {tuple(bbox)} exceeds frame bounds {frame_width}x{frame_height}", subject, "bbox"
        )


def check_array_shape(array, shape: Sequence[int | None], name: str) -> np.ndarray | object:
    """Check trailing dimensions of ``array`` against ``shape`` (``None`` = any size)."""
    actual = tuple(array.shape)
    if len(actual) != len(shape) or any(s is not None and a != s for a, s in zip(actual, shape)):
        expected = tuple("*" if s is None else s for s in shape)
        raise ValidationError(f"expected shape {expected}, got {actual}", name)
    return array


def check_finite(array, name: str) -> None:
    if not np.all(np.isfinite(np.asarray(array))):
        raise ValidationError("contains non-finite values", name)
