"""Dataset splitting, statistics, overlay rendering and synthetic ground truth."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence
from xml.sax.saxutils import quoteattr

import numpy as np

from .annotations import Dataset, ImageRecord, emission_key
from .errors import BadConfig, EmptyInput
from .geometry import Annotation, Box, iou_matrix
from .rng import SplitMix64, substream

DEFAULT_MIXTURE = {"ship": 0.15, "car": 0.77, "plane": 0.08}

# median normalized side length and log-scale spread per category;
# cars are the smallest objects, planes the largest
SIZE_PRIORS = {"car": (0.025, 0.30), "ship": (0.06, 0.45), "plane": (0.10, 0.35)}
_FALLBACK_PRIOR = (0.05, 0.40)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.4, 0.4, 0.2)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise BadConfig(f"split ratios must be three non-negative numbers, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise BadConfig(f"split ratios must sum to 1, got {sum(self.ratios)}")
        if not 0 <= self.seed <= (1 << 64) - 1:
            raise BadConfig("seed must be an unsigned 64-bit integer")


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def split_dataset(d: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded image-level split into (train1, train2, valid).

    Image positions are shuffled with SplitMix64 Fisher-Yates, then cut at
    ``floor(N*r1 + 0.5)`` and ``floor(N*(r1+r2) + 0.5)``. Each part keeps the
    input's relative image order.
    """
    n = len(d.images)
    if n == 0:
        raise EmptyInput("cannot split an empty dataset")
    order = list(range(n))
    SplitMix64(spec.seed).shuffle(order)
    r1, r2, _ = spec.ratios
    a = _round_half_up(n * r1)
    b = _round_half_up(n * (r1 + r2))
    parts = (order[:a], order[a:b], order[b:])
    return tuple(Dataset(d.categories, tuple(d.images[i] for i in sorted(p))) for p in parts)


@dataclass
class DatasetStats:
    category_names: list
    counts: list
    fractions: list
    n_images: int
    n_instances: int
    background_fraction: float
    heatmap: np.ndarray = field(repr=False)  # [row = cy cell, col = cx cell]
    width_hist: np.ndarray = field(repr=False)
    height_hist: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "category_names": list(self.category_names),
            "counts": [int(c) for c in self.counts],
            "fractions": [float(f) for f in self.fractions],
            "n_images": self.n_images,
            "n_instances": self.n_instances,
            "background_fraction": self.background_fraction,
            "heatmap": self.heatmap.astype(int).tolist(),
            "width_hist": self.width_hist.astype(int).tolist(),
            "height_hist": self.height_hist.astype(int).tolist(),
        }


def _size_bins(v: np.ndarray, bins: int) -> np.ndarray:
    # bins are (k/B, (k+1)/B]
    return np.clip(np.ceil(v * bins).astype(np.int64) - 1, 0, bins - 1)


def dataset_stats(d: Dataset, grid: int = 64, bins: int = 50) -> DatasetStats:
    """Instance counts, background share, center heatmap and size histograms."""
    boxes = [(a.category_id, a.box.cx, a.box.cy, a.box.w, a.box.h) for r in d.images for a in r.annotations]
    arr = np.array(boxes, dtype=float).reshape(-1, 5)
    k = len(d.categories)
    counts = np.bincount(arr[:, 0].astype(np.int64), minlength=k)[:k] if len(arr) else np.zeros(k, int)
    total = int(counts.sum())
    fractions = counts / total if total else np.zeros(k)
    heat = np.zeros((grid, grid), dtype=np.int64)
    if len(arr):
        col = np.clip((arr[:, 1] * grid).astype(np.int64), 0, grid - 1)
        row = np.clip((arr[:, 2] * grid).astype(np.int64), 0, grid - 1)
        np.add.at(heat, (row, col), 1)
    wh = np.bincount(_size_bins(arr[:, 3], bins), minlength=bins)
    hh = np.bincount(_size_bins(arr[:, 4], bins), minlength=bins)
    n_img = len(d.images)
    n_bg = sum(1 for r in d.images if r.background)
    return DatasetStats(
        category_names=list(d.categories),
        counts=counts.tolist(),
        fractions=fractions.tolist(),
        n_images=n_img,
        n_instances=total,
        background_fraction=n_bg / n_img if n_img else 0.0,
        heatmap=heat,
        width_hist=wh,
        height_hist=hh,
    )


def _num(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("", "-0") else s


def _pixel_rect(box: Box, width: int, height: int) -> tuple[float, float, float, float]:
    x0, y0, x1, y1 = box.corners()
    x0, x1 = max(x0, 0.0) * width, min(x1, 1.0) * width
    y0, y1 = max(y0, 0.0) * height, min(y1, 1.0) * height
    return x0, y0, x1 - x0, y1 - y0


def render_overlay(
    record: ImageRecord,
    truth: Sequence[Annotation],
    soft: Sequence[Annotation],
    image_href: str | None = None,
    stroke_width: float = 2.0,
) -> str:
    """SVG of ground truth (green) and soft labels (red) over an optional image."""
    w, h = record.width, record.height
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
    ]
    if image_href is not None:
        out.append(f'<image x="0" y="0" width="{w}" height="{h}" xlink:href={quoteattr(image_href)}/>')
    for color, anns in (("green", truth), ("red", soft)):
        for a in anns:
            x, y, rw, rh = _pixel_rect(a.box, w, h)
            out.append(
                f'<rect x="{_num(x)}" y="{_num(y)}" width="{_num(rw)}" height="{_num(rh)}" '
                f'fill="none" stroke="{color}" stroke-width="{_num(stroke_width)}" '
                f'data-category="{a.category_id}"/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _place(rng, cats, bw, bh, max_overlap, tries=20):
    placed = np.zeros((0, 4))
    out = []
    for c, w, h in zip(cats.tolist(), bw.tolist(), bh.tolist()):
        for _ in range(tries):
            x = w / 2 + rng.random() * (1 - w)
            y = h / 2 + rng.random() * (1 - h)
            cand = np.array([[x - w / 2, y - h / 2, x + w / 2, y + h / 2]])
            if len(placed) == 0 or iou_matrix(cand, placed).max() < max_overlap:
                placed = np.vstack([placed, cand])
                out.append(Annotation(int(c), Box(x, y, w, h)))
                break
    return out


def synth_dataset(
    n_images: int,
    mixture: Mapping[str, float] | None = None,
    background_fraction: float = 1 / 3,
    seed: int = 0,
    objects_per_image: float = 11.0,
    image_size: tuple[int, int] = (640, 640),
    max_overlap: float = 0.3,
) -> Dataset:
    """Seeded synthetic ground truth.

    Exactly ``round(n_images * background_fraction)`` images are background.
    The others hold ``1 + Poisson(objects_per_image - 1)`` boxes whose
    category is drawn from ``mixture`` and whose size follows a per-category
    log-normal prior. Boxes lie fully inside the image and overlap earlier
    boxes by IoU < ``max_overlap``; a box that cannot be placed after a few
    tries is dropped. Annotations are stored in label-file emission order, so
    a saved and reloaded dataset compares equal.
    """
    mixture = dict(DEFAULT_MIXTURE if mixture is None else mixture)
    probs = np.array(list(mixture.values()), dtype=float)
    if n_images < 0:
        raise BadConfig("n_images must be >= 0")
    if len(probs) == 0 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise BadConfig(f"mixture fractions must be non-negative and sum to 1: {mixture}")
    if not 0.0 <= background_fraction <= 1.0:
        raise BadConfig(f"background_fraction must be in [0, 1], got {background_fraction}")
    if objects_per_image < 1.0:
        raise BadConfig("objects_per_image must be >= 1")
    names = list(mixture)
    priors = [SIZE_PRIORS.get(n, _FALLBACK_PRIOR) for n in names]
    rng = substream(seed, "synth_dataset")
    n_bg = _round_half_up(n_images * background_fraction)
    background = set(rng.permutation(n_images)[:n_bg].tolist())
    width, height = image_size
    images = []
    for i in range(n_images):
        anns = ()
        if i not in background:
            n = 1 + int(rng.poisson(objects_per_image - 1.0))
            cats = rng.choice(len(names), size=n, p=probs)
            med = np.array([priors[c][0] for c in cats])
            spread = np.array([priors[c][1] for c in cats])
            side = med * np.exp(rng.normal(0.0, spread))
            aspect = np.exp(rng.normal(0.0, 0.25, size=n))
            bw = np.clip(side * np.sqrt(aspect), 0.004, 0.5)
            bh = np.clip(side / np.sqrt(aspect), 0.004, 0.5)
            anns = tuple(sorted(_place(rng, cats, bw, bh, max_overlap), key=emission_key))
        images.append(ImageRecord(f"img_{i:06d}", width, height, anns))
    return Dataset(tuple(names), tuple(images))
