"""scikit-learn style wrappers around the functional core.

Each estimator keeps its constructor arguments untouched (so ``get_params``
/ ``set_params`` / ``clone`` work) and does its validation in ``fit``.
Data flows as mappings of image id to annotation or detection lists, or as
:class:`~softlabel.annotations.Dataset` objects.
"""
from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_dataset, check_detections, check_unit_interval
from .errors import BadConfig, DatasetMismatch
from .metrics import EvalSummary, map_summary
from .pipeline import SoftLabelConfig, compare_datasets, generate_soft_dataset, soft_labels_for_image
from .simulator import NoiseModel, simulate_detections


class SoftLabeler(TransformerMixin, BaseEstimator):
    """Detections in, soft-label annotations out.

    Parameters
    ----------
    confidence_threshold : float
        Minimum confidence admitted into the soft-label set.
    nms_iou : float or None
        Same-category NMS IoU threshold, applied after thresholding. None
        disables NMS.
    keep_confidence_sidecar : bool
        Whether :meth:`transform_dataset` returns per-label confidences.
    """

    def __init__(self, confidence_threshold=0.3, nms_iou=0.45, keep_confidence_sidecar=True):
        self.confidence_threshold = confidence_threshold
        self.nms_iou = nms_iou
        self.keep_confidence_sidecar = keep_confidence_sidecar

    def fit(self, X=None, y=None):
        self.config_ = SoftLabelConfig(
            check_unit_interval("confidence_threshold", self.confidence_threshold),
            check_unit_interval("nms_iou", self.nms_iou, open_low=True, allow_none=True),
            bool(self.keep_confidence_sidecar),
        )
        return self

    def transform(self, X):
        """Map image id -> detections onto image id -> annotations."""
        check_is_fitted(self, "config_")
        dets = check_detections(X)
        return {i: [d.to_annotation() for d in soft_labels_for_image(v, self.config_)] for i, v in dets.items()}

    def transform_dataset(self, skeleton, X):
        """Soft-label dataset (and sidecar confidences) over ``skeleton``'s images."""
        check_is_fitted(self, "config_")
        return generate_soft_dataset(check_dataset(skeleton), check_detections(X), self.config_)


class SyntheticDetector(BaseEstimator):
    """Seeded noisy detector; ``predict`` returns detections per image.

    Parameters mirror :class:`~softlabel.simulator.NoiseModel`. ``fit``
    records the dataset's categories; ``predict`` requires the same table.
    """

    def __init__(
        self,
        drop_rate=0.1,
        center_jitter_sd=0.003,
        size_jitter_sd=0.05,
        confusion=None,
        fp_per_image=0.5,
        tp_confidence=(8.0, 2.0),
        fp_confidence=(2.0, 4.0),
        seed=0,
        drop_area_exponent=0.0,
        drop_reference_area=0.0025,
    ):
        self.drop_rate = drop_rate
        self.center_jitter_sd = center_jitter_sd
        self.size_jitter_sd = size_jitter_sd
        self.confusion = confusion
        self.fp_per_image = fp_per_image
        self.tp_confidence = tp_confidence
        self.fp_confidence = fp_confidence
        self.seed = seed
        self.drop_area_exponent = drop_area_exponent
        self.drop_reference_area = drop_reference_area

    def fit(self, X, y=None):
        X = check_dataset(X)
        self.noise_model_ = NoiseModel(**self.get_params())
        if self.noise_model_.confusion is not None and len(self.noise_model_.confusion) != len(X.categories):
            raise BadConfig("confusion table size does not match the dataset's categories")
        self.categories_ = tuple(X.categories)
        return self

    def predict(self, X):
        check_is_fitted(self, "noise_model_")
        X = check_dataset(X)
        if tuple(X.categories) != self.categories_:
            raise DatasetMismatch("dataset categories differ from those seen in fit")
        return simulate_detections(X, self.noise_model_)


class DetectionEvaluator(BaseEstimator):
    """Scores detections against the ground truth given to ``fit``.

    ``metric`` picks the number returned by :meth:`score`: ``map50``,
    ``map5095`` or ``best_f1``.
    """

    def __init__(self, metric="map50"):
        self.metric = metric

    def fit(self, X, y=None):
        if self.metric not in ("map50", "map5095", "best_f1"):
            raise BadConfig(f"unknown metric {self.metric!r}")
        self.dataset_ = check_dataset(X)
        self.truths_ = self.dataset_.truths_by_image()
        return self

    def evaluate(self, X) -> EvalSummary:
        check_is_fitted(self, "truths_")
        return map_summary(check_detections(X), self.truths_, self.dataset_.categories)

    def score(self, X, y=None) -> float:
        return getattr(self.evaluate(X), self.metric)

    def discrepancy(self, soft):
        """GT-vs-soft discrepancy of a soft-label Dataset over the fitted images."""
        check_is_fitted(self, "dataset_")
        return compare_datasets(self.dataset_, check_dataset(soft))
