"""Seeded synthetic detector.

Stands in for a trained model: each ground-truth box is dropped, jittered,
possibly relabelled and given a confidence; spurious boxes are added per
image. Every image draws from its own substream keyed by (seed, image id),
so output does not depend on processing order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .annotations import Dataset
from .errors import BadConfig
from .geometry import Box, Detection
from .rng import substream

MIN_SIZE = 1e-4
FP_SIZE_RANGE = (0.01, 0.15)


def _check_confidence_spec(name, spec):
    if isinstance(spec, (int, float)):
        if not 0.0 <= spec <= 1.0:
            raise BadConfig(f"{name}: constant confidence must be in [0, 1], got {spec}")
        return float(spec)
    try:
        a, b = (float(v) for v in spec)
    except (TypeError, ValueError):
        raise BadConfig(f"{name}: expected a constant or (alpha, beta), got {spec!r}") from None
    if a <= 0 or b <= 0:
        raise BadConfig(f"{name}: Beta parameters must be > 0, got {spec!r}")
    return (a, b)


@dataclass
class NoiseModel:
    """Parameters of the synthetic detector.

    ``tp_confidence`` and ``fp_confidence`` are Beta ``(alpha, beta)`` pairs
    or a constant confidence. ``confusion`` is a row-stochastic K x K table
    (row = true category, column = emitted category); None means identity.
    ``drop_area_exponent`` > 0 makes small boxes drop more often: the drop
    probability becomes ``drop_rate * (drop_reference_area / area) ** exponent``,
    capped at 1.
    """

    drop_rate: float = 0.1
    center_jitter_sd: float = 0.003
    size_jitter_sd: float = 0.05
    confusion: list | None = None
    fp_per_image: float = 0.5
    tp_confidence: tuple | float = (8.0, 2.0)
    fp_confidence: tuple | float = (2.0, 4.0)
    seed: int = 0
    drop_area_exponent: float = 0.0
    drop_reference_area: float = 0.0025
    _confusion_cdf: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise BadConfig(f"drop_rate must be in [0, 1], got {self.drop_rate}")
        if self.center_jitter_sd < 0 or self.size_jitter_sd < 0:
            raise BadConfig("jitter standard deviations must be >= 0")
        if self.fp_per_image < 0:
            raise BadConfig("fp_per_image must be >= 0")
        if self.drop_area_exponent < 0 or self.drop_reference_area <= 0:
            raise BadConfig("drop_area_exponent must be >= 0 and drop_reference_area > 0")
        self.tp_confidence = _check_confidence_spec("tp_confidence", self.tp_confidence)
        self.fp_confidence = _check_confidence_spec("fp_confidence", self.fp_confidence)
        if self.confusion is not None:
            table = np.asarray(self.confusion, dtype=float)
            if table.ndim != 2 or table.shape[0] != table.shape[1]:
                raise BadConfig("confusion must be a square table")
            if np.any(table < 0) or np.any(table > 1):
                raise BadConfig("confusion probabilities must be in [0, 1]")
            if np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-9):
                raise BadConfig("confusion rows must sum to 1")
            self.confusion = table.tolist()
            self._confusion_cdf = np.cumsum(table, axis=1)

    @classmethod
    def zero_noise(cls, seed: int = 0) -> "NoiseModel":
        """A perfect detector: every truth returned unchanged at confidence 1."""
        return cls(0.0, 0.0, 0.0, None, 0.0, 1.0, 1.0, seed)

    @staticmethod
    def uniform_confusion(n_categories: int, error_rate: float) -> list:
        """Confusion table keeping the category with ``1 - error_rate``, else uniform over the others."""
        if n_categories == 1:
            return [[1.0]]
        off = error_rate / (n_categories - 1)
        return [[1.0 - error_rate if i == j else off for j in range(n_categories)] for i in range(n_categories)]

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.init}
        for k in ("tp_confidence", "fp_confidence"):
            if isinstance(d[k], tuple):
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseModel":
        known = {f.name for f in fields(cls) if f.init}
        extra = set(doc) - known
        if extra:
            raise BadConfig(f"unknown noise model fields: {sorted(extra)}")
        doc = dict(doc)
        for k in ("tp_confidence", "fp_confidence"):
            if isinstance(doc.get(k), list):
                doc[k] = tuple(doc[k])
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "NoiseModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except ValueError as exc:
            if isinstance(exc, BadConfig):
                raise
            raise BadConfig(f"{path}: {exc}") from None


def _confidences(rng: np.random.Generator, spec, n: int) -> np.ndarray:
    if isinstance(spec, float):
        return np.full(n, spec)
    return rng.beta(spec[0], spec[1], size=n)


def _simulate_image(rng, truths, n_categories, m: NoiseModel) -> list[Detection]:
    n = len(truths)
    out = []
    if n:
        arr = np.array([t.box.as_tuple() for t in truths])
        cats = np.array([t.category_id for t in truths])
        u_drop = rng.random(n)
        jitter = rng.normal(0.0, 1.0, size=(n, 4))
        u_cat = rng.random(n)
        conf = _confidences(rng, m.tp_confidence, n)
        p_drop = np.full(n, m.drop_rate)
        if m.drop_area_exponent > 0:
            area = arr[:, 2] * arr[:, 3]
            p_drop = np.minimum(1.0, m.drop_rate * (m.drop_reference_area / area) ** m.drop_area_exponent)
        cx = np.clip(arr[:, 0] + m.center_jitter_sd * jitter[:, 0], 0.0, 1.0)
        cy = np.clip(arr[:, 1] + m.center_jitter_sd * jitter[:, 1], 0.0, 1.0)
        w = np.clip(arr[:, 2] * np.exp(m.size_jitter_sd * jitter[:, 2]), MIN_SIZE, 1.0)
        h = np.clip(arr[:, 3] * np.exp(m.size_jitter_sd * jitter[:, 3]), MIN_SIZE, 1.0)
        if m._confusion_cdf is not None:
            if m._confusion_cdf.shape[0] != n_categories:
                raise BadConfig(
                    f"confusion is {m._confusion_cdf.shape[0]}x{m._confusion_cdf.shape[0]}, dataset has {n_categories} categories"
                )
            rows = m._confusion_cdf[cats]
            emitted = np.minimum((rows <= u_cat[:, None]).sum(axis=1), n_categories - 1)
        else:
            emitted = cats
        for i in range(n):
            if u_drop[i] < p_drop[i]:
                continue
            out.append(Detection(int(emitted[i]), Box(float(cx[i]), float(cy[i]), float(w[i]), float(h[i])), float(conf[i])))
    k = int(rng.poisson(m.fp_per_image)) if m.fp_per_image > 0 else 0
    if k:
        lo, hi = FP_SIZE_RANGE
        geo = rng.random((k, 4))
        fcat = rng.integers(0, n_categories, size=k)
        fconf = _confidences(rng, m.fp_confidence, k)
        for i in range(k):
            w = lo + geo[i, 2] * (hi - lo)
            h = lo + geo[i, 3] * (hi - lo)
            out.append(Detection(int(fcat[i]), Box(float(geo[i, 0]), float(geo[i, 1]), w, h), float(fconf[i])))
    return out


def simulate_detections(d: Dataset, m: NoiseModel) -> dict[str, list[Detection]]:
    """Synthetic detections for every image of ``d``.

    Per truth: kept with probability ``1 - drop_rate``, center jittered by
    Gaussian noise, width/height jittered on log scale (floored at 1e-4),
    category drawn from the confusion row, confidence from ``tp_confidence``.
    Per image: ``Poisson(fp_per_image)`` extra boxes with uniform geometry,
    uniform category and ``fp_confidence``.
    """
    k = len(d.categories)
    return {rec.id: _simulate_image(substream(m.seed, "sim:" + rec.id), rec.annotations, k, m) for rec in d.images}
