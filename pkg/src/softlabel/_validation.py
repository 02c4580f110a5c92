"""Input validation helpers for the estimator API."""
from __future__ import annotations

from collections.abc import Mapping

from .annotations import Dataset
from .errors import BadConfig, InputError
from .geometry import Detection


def check_dataset(X) -> Dataset:
    if not isinstance(X, Dataset):
        raise TypeError(f"expected a Dataset, got {type(X).__name__}")
    return X


def check_detections(X) -> dict:
    """Validate a mapping of image id -> Detection sequence and return it as a dict of lists."""
    if not isinstance(X, Mapping):
        raise TypeError(f"expected a mapping of image id to detections, got {type(X).__name__}")
    out = {}
    for image_id, dets in X.items():
        dets = list(dets)
        for d in dets:
            if not isinstance(d, Detection):
                raise InputError(f"image {image_id!r}: expected Detection, got {type(d).__name__}")
        out[str(image_id)] = dets
    return out


def check_unit_interval(name, value, *, open_low=False, allow_none=False):
    if value is None and allow_none:
        return None
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise BadConfig(f"{name} must be a number, got {value!r}") from None
    if not (0.0 < v <= 1.0 if open_low else 0.0 <= v <= 1.0):
        raise BadConfig(f"{name} must be in {'(0, 1]' if open_low else '[0, 1]'}, got {value}")
    return v
