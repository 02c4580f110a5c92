"""Experiment flow and comparison reports.

Flow: split a dataset 40/40/20 into train1/train2/valid; the model of each
train half labels the *other* half; soft-label datasets are built at each
confidence threshold and compared with ground truth; every model (two
ground-truth baselines, one soft model per half and threshold) is scored
on the valid split.

The simulator stands in for training. A model "trained" on a soft-label
set is the base noise model degraded by that set's discrepancies: missed
objects raise the drop rate, spurious labels add false positives, box error
adds jitter, class disagreement mixes the confusion table toward uniform.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from contextlib import contextmanager
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from .annotations import Dataset, load_dataset, save_dataset, save_detections, write_text_atomic
from .errors import BadConfig, EmptySelection, InputError, UndefinedDelta
from .metrics import map_summary
from .pipeline import DiscrepancyReport, SoftLabelConfig, compare_datasets, generate_soft_dataset
from .rng import derive_seed
from .simulator import NoiseModel, simulate_detections
from .tools import SplitSpec, render_overlay, split_dataset, synth_dataset

log = logging.getLogger(__name__)

DELTA_MODES = ("percent", "log")
MODEL_METRICS = ("map50", "map5095", "best_f1")
CATEGORY_METRICS = ("precision", "recall", "ap50", "ap5095")
DISCREPANCY_FIELDS = ("box_mse", "coverage", "fp_rate", "class_disagreement")


def relative_delta(baseline: float, value: float, mode: str = "percent") -> float:
    """Change of ``value`` against ``baseline`` in percent.

    ``percent`` is ``100 * (value - baseline) / baseline``; ``log`` is
    ``100 * ln(value / baseline)``.
    """
    if baseline == 0:
        raise UndefinedDelta("relative change against a zero baseline")
    if mode == "percent":
        return 100.0 * (value - baseline) / baseline
    if mode == "log":
        if value <= 0 or baseline < 0:
            raise UndefinedDelta("log-ratio change needs positive values")
        return 100.0 * math.log(value / baseline)
    raise BadConfig(f"unknown delta mode {mode!r}; expected one of {DELTA_MODES}")


@dataclass(frozen=True)
class DeltaEntry:
    model: str
    conf: float | None
    category: str | None  # None for model-level metrics
    metric: str
    value: float


def _matches(entry: DeltaEntry, selector) -> bool:
    if selector is None:
        return True
    if callable(selector):
        return bool(selector(entry))
    for key, want in selector.items():
        have = getattr(entry, key)
        if want == "*":
            if have is None:
                return False
        elif isinstance(want, (list, tuple, set, frozenset)):
            if have not in want:
                return False
        elif have != want:
            return False
    return True


def aggregate_deltas(
    table: Iterable[DeltaEntry],
    selector: Mapping | Callable | None = None,
    mode: str = "signed-mean",
) -> float:
    """Mean of the selected percent deltas.

    ``selector`` is a callable predicate or a mapping of DeltaEntry field to
    a required value, a collection of allowed values, or ``"*"`` (any
    non-null value). ``mode`` is ``signed-mean`` or ``absolute-mean``.
    """
    values = [e.value for e in table if _matches(e, selector)]
    if not values:
        raise EmptySelection(f"no deltas match {selector!r}")
    if mode == "signed-mean":
        return float(np.mean(values))
    if mode == "absolute-mean":
        return float(np.mean(np.abs(values)))
    raise BadConfig(f"unknown aggregation mode {mode!r}")


@dataclass
class CategoryMetrics:
    precision: float
    recall: float
    ap50: float
    ap5095: float


@dataclass
class ModelRow:
    name: str
    train_set: str
    conf: float | None  # None marks a ground-truth baseline row
    map50: float
    map5095: float
    best_f1: float
    best_f1_confidence: float | None
    discrepancy: dict = field(default_factory=dict)
    per_category: dict = field(default_factory=dict)  # name -> CategoryMetrics
    extra: dict = field(default_factory=dict)  # further model-level metrics, e.g. losses

    @property
    def is_baseline(self) -> bool:
        return self.conf is None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "train_set": self.train_set,
            "conf": self.conf,
            "map50": self.map50,
            "map5095": self.map5095,
            "best_f1": self.best_f1,
            "best_f1_confidence": self.best_f1_confidence,
            "discrepancy": {k: self.discrepancy.get(k) for k in DISCREPANCY_FIELDS},
            "per_category": {
                c: {m: getattr(cm, m) for m in CATEGORY_METRICS} for c, cm in self.per_category.items()
            },
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelRow":
        try:
            return cls(
                name=d["name"],
                train_set=d["train_set"],
                conf=d.get("conf"),
                map50=d["map50"],
                map5095=d["map5095"],
                best_f1=d["best_f1"],
                best_f1_confidence=d.get("best_f1_confidence"),
                discrepancy={k: v for k, v in (d.get("discrepancy") or {}).items() if v is not None},
                per_category={c: CategoryMetrics(**v) for c, v in (d.get("per_category") or {}).items()},
                extra=dict(d.get("extra") or {}),
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad report row: {exc}") from None


@dataclass
class Report:
    """Model rows plus derived deltas against each row's baseline.

    Deltas are always recomputed from the stored metric values.
    """

    categories: list
    rows: list
    delta_mode: str = "percent"

    def __post_init__(self):
        if self.delta_mode not in DELTA_MODES:
            raise BadConfig(f"unknown delta mode {self.delta_mode!r}")
        for r in self.rows:
            if not r.is_baseline:
                self.baseline_of(r)

    def baseline_of(self, row: ModelRow) -> ModelRow:
        for r in self.rows:
            if r.is_baseline and r.train_set == row.train_set:
                return r
        raise InputError(f"row {row.name!r} has no baseline row for {row.train_set!r}")

    def soft_rows(self) -> list:
        return [r for r in self.rows if not r.is_baseline]

    def _delta(self, base, value):
        if base is None or value is None:
            return None
        try:
            return relative_delta(base, value, self.delta_mode)
        except UndefinedDelta:
            return None

    def row_deltas(self, row: ModelRow) -> dict:
        base = self.baseline_of(row)
        out = {m: self._delta(getattr(base, m), getattr(row, m)) for m in MODEL_METRICS}
        for k, v in row.extra.items():
            out[k] = self._delta(base.extra.get(k), v)
        return out

    def category_deltas(self, row: ModelRow) -> dict:
        base = self.baseline_of(row)
        out = {}
        for c, cm in row.per_category.items():
            bm = base.per_category.get(c)
            out[c] = {m: self._delta(getattr(bm, m) if bm else None, getattr(cm, m)) for m in CATEGORY_METRICS}
        return out

    def delta_table(self) -> list[DeltaEntry]:
        table = []
        for r in self.soft_rows():
            for m, v in self.row_deltas(r).items():
                if v is not None:
                    table.append(DeltaEntry(r.name, r.conf, None, m, v))
            for c, ds in self.category_deltas(r).items():
                for m, v in ds.items():
                    if v is not None:
                        table.append(DeltaEntry(r.name, r.conf, c, m, v))
        return table

    def map50_gap(self) -> dict | None:
        """Largest mAP50 drop of a soft row below its baseline, in points and percent."""
        best = None
        for r in self.soft_rows():
            base = self.baseline_of(r)
            gap = base.map50 - r.map50
            if best is None or abs(gap) > abs(best["points"]):
                best = {
                    "model": r.name,
                    "conf": r.conf,
                    "points": gap,
                    "relative_pct": self._delta(base.map50, r.map50),
                }
        return best

    def aggregates(self) -> dict:
        table = self.delta_table()
        per_cat = [e for e in table if e.category is not None]
        by_category = {}
        for c in self.categories:
            sel = [e.value for e in per_cat if e.category == c]
            if sel:
                by_category[c] = float(np.mean(sel))
        by_metric = {}
        for m in sorted({e.metric for e in table if e.category is None}):
            vals = [e.value for e in table if e.category is None and e.metric == m]
            by_metric[m] = {"signed_mean": float(np.mean(vals)), "absolute_mean": float(np.mean(np.abs(vals)))}
        return {
            "max_map50_gap": self.map50_gap(),
            "per_category_signed_mean": by_category,
            "all_per_category_signed_mean": float(np.mean([e.value for e in per_cat])) if per_cat else None,
            "model_metric_means": by_metric,
        }

    def to_dict(self) -> dict:
        deltas = []
        for r in self.soft_rows():
            deltas.append({"name": r.name, "conf": r.conf, "model": self.row_deltas(r), "per_category": self.category_deltas(r)})
        return {
            "delta_mode": self.delta_mode,
            "categories": list(self.categories),
            "rows": [r.to_dict() for r in self.rows],
            "deltas": deltas,
            "aggregates": self.aggregates(),
        }

    @classmethod
    def from_dict(cls, d: dict, delta_mode: str | None = None) -> "Report":
        """Rebuild from stored rows; derived sections in ``d`` are ignored."""
        try:
            rows = [ModelRow.from_dict(r) for r in d["rows"]]
            categories = list(d["categories"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"bad report document: {exc}") from None
        return cls(categories, rows, delta_mode or d.get("delta_mode", "percent"))


# -- emission ---------------------------------------------------------------------

def _f(v, digits=5) -> str:
    return "-" if v is None else f"{v:.{digits}f}"


def _pct(v) -> str:
    return "" if v is None else f" ({v:+.2f}%)"


def _conf(v) -> str:
    return "-" if v is None else f"{v:g}"


def _markdown(r: Report) -> str:
    extras = sorted({k for row in r.rows for k in row.extra})
    head = ["Model", "Conf", "mAP50", "mAP95", "F1", *DISCREPANCY_FIELDS, *extras]
    lines = ["## Test set metrics", "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for row in r.rows:
        d = {} if row.is_baseline else r.row_deltas(row)
        f1 = f"{row.best_f1:.2f} @ {row.best_f1_confidence:.3f}c" if row.best_f1_confidence is not None else f"{row.best_f1:.2f}"
        cells = [
            row.name,
            _conf(row.conf),
            _f(row.map50) + _pct(d.get("map50")),
            _f(row.map5095) + _pct(d.get("map5095")),
            f1 + _pct(d.get("best_f1")),
            *("-" if row.discrepancy.get(k) is None else f"{row.discrepancy[k]:.4g}" for k in DISCREPANCY_FIELDS),
            *(_f(row.extra.get(k), 6) + _pct(d.get(k)) for k in extras),
        ]
        lines.append("| " + " | ".join(cells) + " |")
    lines.append("")
    lines.append("mAP95 is mean AP over IoU 0.50:0.05:0.95. Percentages are changes against the matching baseline row.")
    if any(row.per_category for row in r.rows):
        lines += ["", "## Per-category metrics", "", "| Model | Conf | Class | P | R | mAP50 | mAP95 |", "|---|---|---|---|---|---|---|"]
        for row in r.rows:
            cd = {} if row.is_baseline else r.category_deltas(row)
            for c, cm in row.per_category.items():
                d = cd.get(c, {})
                cells = [row.name, _conf(row.conf), c] + [_f(getattr(cm, m), 3) + _pct(d.get(m)) for m in CATEGORY_METRICS]
                lines.append("| " + " | ".join(cells) + " |")
    agg = r.aggregates()
    lines += ["", "## Aggregates", ""]
    gap = agg["max_map50_gap"]
    if gap:
        rel = "n/a" if gap["relative_pct"] is None else f"{gap['relative_pct']:+.2f}%"
        lines.append(
            f"- Largest mAP50 gap vs baseline: {gap['points']:.4f} points ({rel} relative), "
            f"{gap['model']} at conf {_conf(gap['conf'])}"
        )
    for c, v in agg["per_category_signed_mean"].items():
        lines.append(f"- {c}: mean per-category change {v:+.2f}%")
    if agg["all_per_category_signed_mean"] is not None:
        lines.append(f"- all categories: mean per-category change {agg['all_per_category_signed_mean']:+.2f}%")
    for m, v in agg["model_metric_means"].items():
        lines.append(f"- {m}: mean change {v['signed_mean']:+.2f}%, mean absolute change {v['absolute_mean']:.2f}%")
    return "\n".join(lines) + "\n"


CSV_FIELDS = (
    "model", "train_set", "conf", "category",
    "map50", "map5095", "best_f1", "best_f1_confidence", *DISCREPANCY_FIELDS,
    *CATEGORY_METRICS,
    *(f"delta_{m}" for m in MODEL_METRICS), *(f"delta_{m}" for m in CATEGORY_METRICS),
)


def _csv(r: Report) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in r.rows:
        base = {"model": row.name, "train_set": row.train_set, "conf": "" if row.conf is None else row.conf}
        d = {} if row.is_baseline else r.row_deltas(row)
        summary = dict(base, category="all", map50=row.map50, map5095=row.map5095, best_f1=row.best_f1,
                       best_f1_confidence=row.best_f1_confidence)
        summary.update({k: row.discrepancy.get(k) for k in DISCREPANCY_FIELDS})
        summary.update({f"delta_{m}": d.get(m) for m in MODEL_METRICS})
        w.writerow(summary)
        cd = {} if row.is_baseline else r.category_deltas(row)
        for c, cm in row.per_category.items():
            line = dict(base, category=c, **{m: getattr(cm, m) for m in CATEGORY_METRICS})
            line.update({f"delta_{m}": cd.get(c, {}).get(m) for m in CATEGORY_METRICS})
            w.writerow(line)
    return buf.getvalue()


def emit_report(r: Report, fmt: str = "json") -> str:
    """Serialize a report as ``json`` (canonical), ``csv`` or ``markdown``."""
    if fmt == "json":
        return json.dumps(r.to_dict(), indent=2) + "\n"
    if fmt == "csv":
        return _csv(r)
    if fmt in ("markdown", "md"):
        return _markdown(r)
    raise BadConfig(f"unknown report format {fmt!r}")


# -- experiment -------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    output_dir: str = "experiment_out"
    manifest: str | None = None
    synth: dict = field(default_factory=lambda: {"n_images": 2000})
    split_ratios: tuple = (0.4, 0.4, 0.2)
    noise: NoiseModel = field(default_factory=NoiseModel)
    thresholds: tuple = (0.3, 0.5)
    nms_iou: float | None = 0.45
    seed: int = 0
    delta_mode: str = "percent"
    overlays: int = 3

    def __post_init__(self):
        self.thresholds = tuple(float(t) for t in self.thresholds)
        if not self.thresholds or any(not 0.0 <= t <= 1.0 for t in self.thresholds):
            raise BadConfig(f"thresholds must each be in [0, 1], got {self.thresholds}")
        if self.delta_mode not in DELTA_MODES:
            raise BadConfig(f"unknown delta mode {self.delta_mode!r}")
        self.split_ratios = tuple(self.split_ratios)
        SplitSpec(self.split_ratios, self.seed)  # validates
        SoftLabelConfig(self.thresholds[0], self.nms_iou)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "noise" in d:
            d["noise"] = NoiseModel.from_dict(d["noise"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise BadConfig(str(exc)) from None

    def to_dict(self) -> dict:
        return {
            "output_dir": self.output_dir,
            "manifest": self.manifest,
            "synth": dict(self.synth),
            "split_ratios": list(self.split_ratios),
            "noise": self.noise.to_dict(),
            "thresholds": list(self.thresholds),
            "nms_iou": self.nms_iou,
            "seed": self.seed,
            "delta_mode": self.delta_mode,
            "overlays": self.overlays,
        }


def trained_on(base: NoiseModel, disc: DiscrepancyReport, n_categories: int, seed: int) -> NoiseModel:
    """Noise model of a detector trained on labels with the given discrepancies."""
    confusion = base.confusion
    if disc.class_disagreement > 0:
        table = np.asarray(confusion if confusion is not None else np.eye(n_categories))
        uniform = np.asarray(NoiseModel.uniform_confusion(n_categories, 1.0))
        d = disc.class_disagreement
        confusion = ((1 - d) * table + d * uniform).tolist()
    return replace(
        base,
        drop_rate=base.drop_rate + (1.0 - base.drop_rate) * (1.0 - disc.coverage),
        fp_per_image=base.fp_per_image + disc.false_positive_rate,
        center_jitter_sd=math.sqrt(base.center_jitter_sd**2 + disc.box_mse),
        confusion=confusion,
        seed=seed,
    )


def _evaluate_model(name, train_set, conf, model, valid: Dataset, disc: DiscrepancyReport) -> ModelRow:
    dets = simulate_detections(valid, model)
    s = map_summary(dets, valid.truths_by_image(), valid.categories)
    per_cat = {
        s.category_names[c]: CategoryMetrics(s.precision[c], s.recall[c], s.ap50[c], s.ap5095[c])
        for c in sorted(s.ap50)
    }
    return ModelRow(
        name=name,
        train_set=train_set,
        conf=conf,
        map50=s.map50,
        map5095=s.map5095,
        best_f1=s.best_f1,
        best_f1_confidence=s.best_f1_confidence,
        discrepancy={
            "box_mse": disc.box_mse,
            "coverage": disc.coverage,
            "fp_rate": disc.false_positive_rate,
            "class_disagreement": disc.class_disagreement,
        },
        per_category=per_cat,
    )


@contextmanager
def _stage(name):
    """Prefix package errors raised inside the block with the experiment stage."""
    try:
        yield
    except (InputError, BadConfig) as exc:
        if not getattr(exc, "_staged", False):
            exc.args = (f"[{name}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
            exc._staged = True
        raise


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> Report:
    """Run the full flow and write every artifact under ``cfg.output_dir``.

    Identical configs produce byte-identical files; ``jobs`` only changes
    how many models are scored concurrently.
    """
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BadConfig(f"output directory {out} not writable: {exc}") from None

    with _stage("load"):
        if cfg.manifest:
            source = load_dataset(cfg.manifest)
        else:
            synth = dict(cfg.synth)
            synth.setdefault("seed", cfg.seed)
            try:
                source = synth_dataset(**synth)
            except TypeError as exc:
                raise BadConfig(f"synth: {exc}") from None
    with _stage("split"):
        parts = dict(zip(("train1", "train2", "valid"), split_dataset(source, SplitSpec(cfg.split_ratios, cfg.seed))))
        for name, part in parts.items():
            save_dataset(part, out / "splits" / f"{name}.json")
    valid = parts["valid"]
    n_cat = len(source.categories)
    models = {k: replace(cfg.noise, seed=derive_seed(cfg.seed, f"model:train{k}")) for k in (1, 2)}

    jobs_spec = []  # (name, train_set, conf, model, discrepancy)
    for k, other in ((1, 2), (2, 1)):
        train = parts[f"train{k}"]
        jobs_spec.append((f"Train Set {k}", f"train{k}", None, models[k], DiscrepancyReport()))
        with _stage(f"label train{k}"):
            dets = simulate_detections(train, models[other])
            save_detections(out / "detections" / f"train{k}", dets)
        for tau in cfg.thresholds:
            tag = f"train{k}_soft{tau:.2f}"
            with _stage(tag):
                soft, sidecars = generate_soft_dataset(train.skeleton(), dets, SoftLabelConfig(tau, cfg.nms_iou))
                save_dataset(soft, out / "soft" / f"{tag}.json", sidecars)
                disc = compare_datasets(train, soft)
                log.info("%s: coverage %.4f, fp/image %.3f", tag, disc.coverage, disc.false_positive_rate)
                _write_overlays(out / "overlays" / tag, train, soft, cfg.overlays)
            model = trained_on(cfg.noise, disc, n_cat, derive_seed(cfg.seed, f"model:{tag}"))
            jobs_spec.append((f"Train Set {k} Soft", f"train{k}", tau, model, disc))

    with _stage("evaluate"):
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                rows = list(pool.map(lambda j: _evaluate_model(*j[:4], valid, j[4]), jobs_spec))
        else:
            rows = [_evaluate_model(*j[:4], valid, j[4]) for j in jobs_spec]
    report = Report(list(source.categories), rows, cfg.delta_mode)
    write_text_atomic(out / "config.json", json.dumps(cfg.to_dict(), indent=2) + "\n")
    for fmt, ext in (("json", "json"), ("markdown", "md"), ("csv", "csv")):
        write_text_atomic(out / f"report.{ext}", emit_report(report, fmt))
    return report


def _write_overlays(directory: Path, truth: Dataset, soft: Dataset, limit: int) -> None:
    soft_by = {r.id: r for r in soft.images}
    done = 0
    for rec in truth.images:
        if done >= limit:
            break
        if rec.background:
            continue
        svg = render_overlay(rec, rec.annotations, soft_by[rec.id].annotations)
        write_text_atomic(directory / f"{rec.id}.svg", svg)
        done += 1
