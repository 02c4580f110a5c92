"""Normalized center-format boxes and IoU."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True, slots=True)
class Box:
    """Axis-aligned box in normalized center format.

    ``cx``/``cy`` lie in [0, 1] and ``w``/``h`` in (0, 1]. Corners derived
    from these may stick out of the unit square; they are only clamped when
    written out in pixel space.
    """

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center out of [0, 1]: ({self.cx}, {self.cy})")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box size out of (0, 1]: ({self.w}, {self.h})")

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        """Return ``(x0, y0, x1, y1)`` without clamping."""
        hw, hh = self.w / 2.0, self.h / 2.0
        return self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh

    @classmethod
    def from_corners(cls, x0, y0, x1, y1) -> "Box":
        return cls((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True, slots=True)
class Annotation:
    category_id: int
    box: Box

    def __post_init__(self):
        if self.category_id < 0:
            raise ValueError(f"negative category id {self.category_id}")


@dataclass(frozen=True, slots=True)
class Detection:
    category_id: int
    box: Box
    confidence: float

    def __post_init__(self):
        if self.category_id < 0:
            raise ValueError(f"negative category id {self.category_id}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of [0, 1]: {self.confidence}")

    def to_annotation(self) -> Annotation:
        return Annotation(self.category_id, self.box)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; symmetric, 0 when disjoint."""
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    # areas from corners so identical boxes give exactly 1
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    return inter / (area_a + area_b - inter)


def to_xyxy(boxes: Sequence[Box]) -> np.ndarray:
    """Stack boxes into an ``(n, 4)`` array of unclamped corners."""
    if not boxes:
        return np.zeros((0, 4))
    c = np.array([(b.cx, b.cy, b.w, b.h) for b in boxes], dtype=float)
    half = c[:, 2:] / 2.0
    return np.concatenate([c[:, :2] - half, c[:, :2] + half], axis=1)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two ``(n, 4)``/``(m, 4)`` corner arrays."""
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)
