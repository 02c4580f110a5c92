"""Soft-label dataset generation and from-scratch detection evaluation."""
from .annotations import (
    Dataset,
    ImageRecord,
    RemapTable,
    emit_detections,
    emit_yolo_labels,
    ingest_xview,
    load_dataset,
    parse_detections,
    parse_yolo_labels,
    save_dataset,
)
from .errors import (
    BadConfig,
    DatasetMismatch,
    DuplicateImageId,
    EmptyInput,
    EmptySelection,
    InputError,
    MalformedRecord,
    MissingLabelFile,
    NoGroundTruth,
    SoftLabelError,
    UndefinedDelta,
    UnknownCategory,
)
from .estimators import DetectionEvaluator, SoftLabeler, SyntheticDetector
from .geometry import Annotation, Box, Detection, iou
from .harness import (
    ExperimentConfig,
    Report,
    aggregate_deltas,
    emit_report,
    relative_delta,
    run_experiment,
)
from .metrics import EvalSummary, MatchSet, PRCurve, f1_sweep, map_summary, match_detections, pr_curve
from .pipeline import (
    DiscrepancyReport,
    SoftLabelConfig,
    compare_datasets,
    filter_confidence,
    generate_soft_dataset,
    nms,
)
from .simulator import NoiseModel, simulate_detections
from .tools import DatasetStats, SplitSpec, dataset_stats, render_overlay, split_dataset, synth_dataset

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "BadConfig",
    "Box",
    "Dataset",
    "DatasetMismatch",
    "DatasetStats",
    "Detection",
    "DetectionEvaluator",
    "DiscrepancyReport",
    "DuplicateImageId",
    "EmptyInput",
    "EmptySelection",
    "EvalSummary",
    "ExperimentConfig",
    "ImageRecord",
    "InputError",
    "MalformedRecord",
    "MatchSet",
    "MissingLabelFile",
    "NoGroundTruth",
    "NoiseModel",
    "PRCurve",
    "RemapTable",
    "Report",
    "SoftLabelConfig",
    "SoftLabelError",
    "SoftLabeler",
    "SplitSpec",
    "SyntheticDetector",
    "UndefinedDelta",
    "UnknownCategory",
    "aggregate_deltas",
    "compare_datasets",
    "dataset_stats",
    "emit_detections",
    "emit_report",
    "emit_yolo_labels",
    "f1_sweep",
    "filter_confidence",
    "generate_soft_dataset",
    "ingest_xview",
    "iou",
    "load_dataset",
    "map_summary",
    "match_detections",
    "nms",
    "parse_detections",
    "parse_yolo_labels",
    "pr_curve",
    "relative_delta",
    "render_overlay",
    "run_experiment",
    "save_dataset",
    "simulate_detections",
    "split_dataset",
    "synth_dataset",
]
