"""Detection matching and the PR / AP / mAP / F1 evaluation stack.

AP uses 101-point interpolation over the recall grid {0.00, 0.01, ..., 1.00}.
``map5095`` is the mean AP over IoU thresholds 0.50:0.05:0.95. Categories
with no ground-truth instances are left out of every category mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DatasetMismatch, NoGroundTruth
from .geometry import Annotation, Detection, iou_matrix, to_xyxy

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.arange(101) / 100.0
CONFIDENCE_GRID = np.arange(1001) / 1000.0


@dataclass(frozen=True)
class MatchSet:
    pairs: list  # (detection index, truth index, iou)
    unmatched_detections: list
    unmatched_truths: list
    iou_threshold: float


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    iou_threshold: float

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


@dataclass
class EvalSummary:
    """Dataset-level evaluation result.

    Per-category dicts are keyed by category id and only contain categories
    that have ground truth. ``precision``/``recall`` are taken at
    ``best_f1_confidence``.
    """

    category_names: dict
    n_truths: dict
    ap50: dict
    ap5095: dict
    precision: dict
    recall: dict
    map50: float
    map5095: float
    best_f1: float
    best_f1_confidence: float
    f1_curve: np.ndarray = field(repr=False)
    curves: dict = field(default_factory=dict, repr=False)


def _order_by_confidence(confidences) -> list[int]:
    # stable: equal confidences keep input order
    return sorted(range(len(confidences)), key=lambda i: -confidences[i])


def _greedy_match(ious: np.ndarray, order: Sequence[int], thresholds: Sequence[float]):
    """Greedy matching of detections (rows) to truths (columns).

    Rows are visited in ``order``; each row takes the still-free column with
    the highest IoU at or above the threshold, lower column index winning
    ties. Returns, per threshold, an array mapping row -> column (-1 when
    unmatched).
    """
    n_det, n_truth = ious.shape
    out = [np.full(n_det, -1, dtype=np.int64) for _ in thresholds]
    if n_det == 0 or n_truth == 0:
        return out
    lowest = min(thresholds)
    rows, cols = np.nonzero(ious >= lowest)
    if len(rows) == 0:
        return out
    vals = ious[rows, cols]
    # per row: candidates by IoU descending, column ascending
    srt = np.lexsort((cols, -vals, rows))
    cand: dict[int, list] = {}
    for r, c, v in zip(rows[srt].tolist(), cols[srt].tolist(), vals[srt].tolist()):
        cand.setdefault(r, []).append((v, c))
    for k, thr in enumerate(thresholds):
        taken = set()
        assign = out[k]
        for r in order:
            for v, c in cand.get(r, ()):
                if v < thr:
                    break
                if c not in taken:
                    taken.add(c)
                    assign[r] = c
                    break
    return out


def match_detections(
    dets: Sequence[Detection], truths: Sequence[Annotation], iou_threshold: float
) -> MatchSet:
    """Greedily match one category's detections to its ground truth.

    Detections are processed by descending confidence (stable on ties);
    each one claims the unmatched truth with the highest IoU at or above
    ``iou_threshold``.
    """
    ious = iou_matrix(to_xyxy([d.box for d in dets]), to_xyxy([t.box for t in truths]))
    order = _order_by_confidence([d.confidence for d in dets])
    assign = _greedy_match(ious, order, [iou_threshold])[0]
    pairs = [(i, int(assign[i]), float(ious[i, assign[i]])) for i in order if assign[i] >= 0]
    matched = {p[1] for p in pairs}
    return MatchSet(
        pairs=pairs,
        unmatched_detections=[i for i in order if assign[i] < 0],
        unmatched_truths=[j for j in range(len(truths)) if j not in matched],
        iou_threshold=iou_threshold,
    )


def interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """101-point interpolated AP of a ranked PR sequence.

    At each grid recall r the interpolated precision is the maximum
    precision over ranks with recall >= r (0 if none).
    """
    if len(recall) == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    q = np.zeros(len(RECALL_GRID))
    ok = idx < len(recall)
    q[ok] = envelope[idx[ok]]
    return float(q.mean())


def _curve_from_flags(tp: np.ndarray, n_truth: int, iou_threshold: float) -> PRCurve:
    ctp = np.cumsum(tp, dtype=np.int64)
    ranks = np.arange(1, len(tp) + 1)
    recall = ctp / n_truth
    precision = ctp / ranks if len(tp) else np.zeros(0)
    return PRCurve(recall, precision, interpolated_ap(recall, precision), iou_threshold)


def pr_curve(dets: Sequence[Detection], truths: Sequence[Annotation], iou_threshold: float) -> PRCurve:
    """Ranked precision/recall of one category in one image."""
    if not truths:
        raise NoGroundTruth("pr_curve needs at least one ground-truth instance")
    ms = match_detections(dets, truths, iou_threshold)
    matched = {p[0] for p in ms.pairs}
    order = _order_by_confidence([d.confidence for d in dets])
    tp = np.array([i in matched for i in order], dtype=bool)
    return _curve_from_flags(tp, len(truths), iou_threshold)


# -- dataset-level accumulation ------------------------------------------------

@dataclass
class _CategoryAccumulator:
    confidences: np.ndarray  # descending
    tp: np.ndarray  # (n_thresholds, n_dets) bool, same ranking
    n_truth: int


def _category_names(categories) -> dict:
    if isinstance(categories, Mapping):
        return {int(k): str(v) for k, v in categories.items()}
    return {i: str(name) for i, name in enumerate(categories)}


def _accumulate(dets_by_image, truths_by_image, thresholds=IOU_THRESHOLDS):
    unknown = set(dets_by_image) - set(truths_by_image)
    if unknown:
        raise DatasetMismatch(f"detections for unknown images: {sorted(unknown)[:5]}")
    cats, confs, flags = [], [], []
    n_truth: dict[int, int] = {}
    for image_id in sorted(truths_by_image):
        truths = truths_by_image[image_id]
        dets = dets_by_image.get(image_id, ())
        for t in truths:
            n_truth[t.category_id] = n_truth.get(t.category_id, 0) + 1
        if not dets:
            continue
        det_conf = [d.confidence for d in dets]
        order = _order_by_confidence(det_conf)
        det_cat = np.array([d.category_id for d in dets])
        if truths:
            ious = iou_matrix(to_xyxy([d.box for d in dets]), to_xyxy([t.box for t in truths]))
            truth_cat = np.array([t.category_id for t in truths])
            ious[det_cat[:, None] != truth_cat[None, :]] = 0.0
            assign = np.stack(_greedy_match(ious, order, thresholds))
        else:
            assign = np.full((len(thresholds), len(dets)), -1)
        idx = np.asarray(order)
        cats.append(det_cat[idx])
        confs.append(np.asarray(det_conf)[idx])
        flags.append(assign[:, idx] >= 0)
    if cats:
        cats_a = np.concatenate(cats)
        conf_a = np.concatenate(confs)
        flag_a = np.concatenate(flags, axis=1)
    else:
        cats_a = np.zeros(0, dtype=np.int64)
        conf_a = np.zeros(0)
        flag_a = np.zeros((len(thresholds), 0), dtype=bool)
    out = {}
    for c in sorted(n_truth):
        sel = np.nonzero(cats_a == c)[0]
        # stable sort keeps (image id, in-image rank) order on equal confidence
        rank = sel[np.argsort(-conf_a[sel], kind="stable")]
        out[c] = _CategoryAccumulator(conf_a[rank], flag_a[:, rank], n_truth[c])
    if not out:
        raise NoGroundTruth("no category has ground-truth instances")
    return out


def _f1_table(acc: dict):
    """Per-category precision/recall/F1 over the confidence grid at IoU 0.50."""
    table = {}
    for c, a in acc.items():
        ctp = np.concatenate([[0], np.cumsum(a.tp[0], dtype=np.int64)])
        # number of detections with confidence >= tau (prefix of the ranking)
        k = np.searchsorted(-a.confidences, -CONFIDENCE_GRID, side="right")
        tp = ctp[k]
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(k > 0, tp / np.maximum(k, 1), 0.0)
        r = tp / a.n_truth
        denom = p + r
        f1 = np.where(denom > 0, 2 * p * r / np.where(denom > 0, denom, 1.0), 0.0)
        table[c] = (p, r, f1)
    return table


def _best_f1(table):
    curve = np.mean([t[2] for t in table.values()], axis=0)
    best = int(np.argmax(curve))  # first maximum = lowest tau
    return curve, float(curve[best]), best


def f1_sweep(dets_by_image, truths_by_image, categories=None):
    """Mean-over-categories F1 as a function of the confidence cutoff.

    Returns ``(curve, best_f1, best_confidence)`` where ``curve[i]`` is the
    mean F1 using detections with confidence >= ``CONFIDENCE_GRID[i]``.
    """
    acc = _accumulate(dets_by_image, truths_by_image, IOU_THRESHOLDS[:1])
    curve, best, i = _best_f1(_f1_table(acc))
    return curve, best, float(CONFIDENCE_GRID[i])


def map_summary(dets_by_image, truths_by_image, categories) -> EvalSummary:
    """Evaluate detections against ground truth over a whole dataset.

    Args:
        dets_by_image: mapping image id -> Detection sequence. Images may
            be absent (no detections).
        truths_by_image: mapping image id -> Annotation sequence, covering
            every evaluated image.
        categories: category names indexed by id, or an id -> name mapping.

    The result does not depend on image iteration order: images are
    visited in sorted id order and equal-confidence detections are ranked
    by (image id, position in the image's list).
    """
    names = _category_names(categories)
    acc = _accumulate(dets_by_image, truths_by_image)
    curves, ap50, ap5095 = {}, {}, {}
    for c, a in acc.items():
        per_thr = [_curve_from_flags(a.tp[k], a.n_truth, t) for k, t in enumerate(IOU_THRESHOLDS)]
        curves[c] = per_thr[0]
        ap50[c] = per_thr[0].ap
        ap5095[c] = float(np.mean([pc.ap for pc in per_thr]))
    table = _f1_table(acc)
    curve, best, i = _best_f1(table)
    return EvalSummary(
        category_names={c: names.get(c, str(c)) for c in acc},
        n_truths={c: a.n_truth for c, a in acc.items()},
        ap50=ap50,
        ap5095=ap5095,
        precision={c: float(table[c][0][i]) for c in acc},
        recall={c: float(table[c][1][i]) for c in acc},
        map50=float(np.mean(list(ap50.values()))),
        map5095=float(np.mean(list(ap5095.values()))),
        best_f1=best,
        best_f1_confidence=float(CONFIDENCE_GRID[i]),
        f1_curve=curve,
        curves=curves,
    )


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean, defined as 0 when both inputs are 0."""
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


def ap_at_iou(dets_by_image, truths_by_image, iou_threshold: float) -> dict:
    """Per-category AP at a single IoU threshold (categories with ground truth only)."""
    acc = _accumulate(dets_by_image, truths_by_image, (iou_threshold,))
    return {c: _curve_from_flags(a.tp[0], a.n_truth, iou_threshold).ap for c, a in acc.items()}
