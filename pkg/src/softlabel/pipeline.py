"""Turn detections into a soft-label dataset and measure how it differs from ground truth.

Soft labels here are hard pseudo-labels: a detection that survives the
confidence threshold (and optional NMS) becomes an ordinary annotation.
Its confidence is kept in a ``.conf`` sidecar next to the label file.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .annotations import Dataset, emission_key
from .errors import BadConfig, DatasetMismatch, MalformedRecord
from .geometry import Detection, iou_matrix, to_xyxy

MATCH_IOU = 0.5


@dataclass(frozen=True)
class SoftLabelConfig:
    confidence_threshold: float = 0.3
    nms_iou: float | None = 0.45  # None disables NMS
    keep_confidence_sidecar: bool = True

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise BadConfig(f"confidence_threshold must be in [0, 1], got {self.confidence_threshold}")
        if self.nms_iou is not None and not 0.0 < self.nms_iou <= 1.0:
            raise BadConfig(f"nms_iou must be in (0, 1], got {self.nms_iou}")


def filter_confidence(dets: Sequence[Detection], threshold: float) -> list[Detection]:
    """Detections with confidence >= threshold, input order preserved."""
    return [d for d in dets if d.confidence >= threshold]


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Category-aware greedy non-maximum suppression.

    Visits detections by descending confidence (stable on ties) and drops
    any whose IoU with an already kept same-category detection is at least
    ``iou_threshold``. Survivors are returned in input order.
    """
    n = len(dets)
    if n < 2:
        return list(dets)
    xy = to_xyxy([d.box for d in dets])
    ious = iou_matrix(xy, xy)
    cats = np.array([d.category_id for d in dets])
    suppress = (ious >= iou_threshold) & (cats[:, None] == cats[None, :])
    order = sorted(range(n), key=lambda i: -dets[i].confidence)
    keep = np.zeros(n, dtype=bool)
    for i in order:
        if not np.any(suppress[i] & keep):
            keep[i] = True
    return [d for d, k in zip(dets, keep) if k]


def soft_labels_for_image(dets: Sequence[Detection], cfg: SoftLabelConfig) -> list[Detection]:
    """Threshold first, then NMS; result sorted in label-file emission order."""
    kept = filter_confidence(dets, cfg.confidence_threshold)
    if cfg.nms_iou is not None:
        kept = nms(kept, cfg.nms_iou)
    return sorted(kept, key=emission_key)


def generate_soft_dataset(
    skeleton: Dataset,
    dets_by_image: Mapping[str, Sequence[Detection]],
    cfg: SoftLabelConfig = SoftLabelConfig(),
) -> tuple[Dataset, dict | None]:
    """Build a soft-label dataset over the skeleton's images.

    Returns:
        ``(dataset, sidecars)``. ``sidecars`` maps image id to confidences
        aligned with the emitted label lines, or is None when
        ``cfg.keep_confidence_sidecar`` is off. Images without surviving
        detections become background.
    """
    ids = set(skeleton.ids)
    unknown = [i for i in dets_by_image if i not in ids]
    if unknown:
        raise MalformedRecord(f"detections for unknown image id {unknown[0]!r}")
    images, sidecars = [], {}
    for rec in skeleton.images:
        kept = soft_labels_for_image(dets_by_image.get(rec.id, ()), cfg)
        images.append(replace(rec, annotations=tuple(d.to_annotation() for d in kept)))
        sidecars[rec.id] = [d.confidence for d in kept]
    out = Dataset(skeleton.categories, tuple(images))
    return out, (sidecars if cfg.keep_confidence_sidecar else None)


@dataclass(frozen=True)
class DiscrepancyReport:
    """Dataset-level ground truth vs soft label differences.

    box_mse: mean over matched pairs and the four (cx, cy, w, h) coordinates
        of the squared difference; the box-loss analog.
    coverage: matched truths / all truths (1.0 when there are no truths).
    false_positive_rate: unmatched soft labels per image; with coverage,
        the objectness-loss analog.
    class_disagreement: share of matched pairs whose categories differ; the
        classification-loss analog.
    """

    box_mse: float = 0.0
    coverage: float = 1.0
    false_positive_rate: float = 0.0
    class_disagreement: float = 0.0
    n_truths: int = 0
    n_soft: int = 0
    n_matched: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _geometric_pairs(ious: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    # highest IoU first across the image; ties by (soft, truth) index
    rows, cols = np.nonzero(ious >= threshold)
    if len(rows) == 0:
        return []
    srt = np.lexsort((cols, rows, -ious[rows, cols]))
    used_r, used_c, pairs = set(), set(), []
    for r, c in zip(rows[srt].tolist(), cols[srt].tolist()):
        if r not in used_r and c not in used_c:
            used_r.add(r)
            used_c.add(c)
            pairs.append((r, c))
    return pairs


def compare_datasets(truth: Dataset, soft: Dataset, iou_threshold: float = MATCH_IOU) -> DiscrepancyReport:
    """Match soft labels to ground truth by geometry alone, then compare.

    Matching ignores category so that a well placed box with the wrong
    class counts toward ``class_disagreement`` instead of coverage.
    """
    t_by = {r.id: r.annotations for r in truth.images}
    s_by = {r.id: r.annotations for r in soft.images}
    if t_by.keys() != s_by.keys():
        missing = sorted(t_by.keys() ^ s_by.keys())
        raise DatasetMismatch(f"image id sets differ, e.g. {missing[:3]}")
    sq_err = 0.0
    n_truth = n_soft = n_match = n_wrong = 0
    for image_id in sorted(t_by):
        ts, ss = t_by[image_id], s_by[image_id]
        n_truth += len(ts)
        n_soft += len(ss)
        if not ts or not ss:
            continue
        tb = np.array([t.box.as_tuple() for t in ts])
        sb = np.array([s.box.as_tuple() for s in ss])
        ious = iou_matrix(to_xyxy([s.box for s in ss]), to_xyxy([t.box for t in ts]))
        for si, ti in _geometric_pairs(ious, iou_threshold):
            n_match += 1
            sq_err += float(np.sum((sb[si] - tb[ti]) ** 2))
            n_wrong += ss[si].category_id != ts[ti].category_id
    n_images = len(t_by)
    return DiscrepancyReport(
        box_mse=sq_err / (4 * n_match) if n_match else 0.0,
        coverage=n_match / n_truth if n_truth else 1.0,
        false_positive_rate=(n_soft - n_match) / n_images if n_images else 0.0,
        class_disagreement=n_wrong / n_match if n_match else 0.0,
        n_truths=n_truth,
        n_soft=n_soft,
        n_matched=n_match,
    )
