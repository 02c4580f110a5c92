"""Label, detection, manifest and xView annotation formats.

Label line:      ``<category_id> <cx> <cy> <w> <h>``
Detection line:  ``<category_id> <cx> <cy> <w> <h> <confidence>``
Sidecar line:    ``<confidence>``, aligned with the label file's lines

All coordinates are normalized center format and are emitted with six
decimals. Background images have an empty label file.
"""
from __future__ import annotations

import json
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .errors import DuplicateImageId, MalformedRecord, MissingLabelFile, UnknownCategory
from .geometry import Annotation, Box, Detection

log = logging.getLogger(__name__)

# upstream tools overshoot the unit interval by float noise; clamp up to this
CLAMP_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ImageRecord:
    id: str
    width: int
    height: int
    annotations: tuple = ()

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image {self.id!r}: dimensions must be >= 1")

    @property
    def background(self) -> bool:
        return not self.annotations


@dataclass(frozen=True)
class Dataset:
    categories: tuple
    images: tuple = ()

    def __post_init__(self):
        seen = set()
        n = len(self.categories)
        for rec in self.images:
            if rec.id in seen:
                raise DuplicateImageId(f"duplicate image id {rec.id!r}")
            seen.add(rec.id)
            for a in rec.annotations:
                if a.category_id >= n:
                    raise UnknownCategory(
                        f"image {rec.id!r}: category {a.category_id} not in {n} declared categories"
                    )

    def __len__(self):
        return len(self.images)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.images]

    def truths_by_image(self) -> dict:
        return {r.id: r.annotations for r in self.images}

    def skeleton(self) -> "Dataset":
        """Same images and categories, no annotations."""
        return replace(self, images=tuple(replace(r, annotations=()) for r in self.images))

    def subset(self, ids) -> "Dataset":
        by_id = {r.id: r for r in self.images}
        return replace(self, images=tuple(by_id[i] for i in ids))

    def instance_count(self) -> int:
        return sum(len(r.annotations) for r in self.images)


@dataclass
class RemapTable:
    """Source type identifier -> destination category id.

    Unmapped identifiers are skipped and counted, never guessed.
    """

    categories: tuple
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        self.categories = tuple(str(c) for c in self.categories)
        self.entries = {int(k): int(v) for k, v in self.entries.items()}
        for src, dst in self.entries.items():
            if not 0 <= dst < len(self.categories):
                raise UnknownCategory(f"remap {src} -> {dst}: no such destination category")

    @classmethod
    def from_json(cls, text: str) -> "RemapTable":
        try:
            doc = json.loads(text)
            categories = list(doc["categories"])
            mapping = doc["map"].items()
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise MalformedRecord(f"invalid remap table: {exc}") from None
        entries = {}
        for name, type_ids in mapping:
            if name not in categories:
                raise UnknownCategory(f"remap target {name!r} is not a declared category")
            for t in type_ids:
                entries[int(t)] = categories.index(name)
        return cls(categories, entries)

    @classmethod
    def load(cls, path) -> "RemapTable":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def example_remap_path() -> Path:
    """Path of the bundled example xView moving-object remap table."""
    return Path(__file__).parent / "data" / "xview_moving_objects.json"


# -- line formats ----------------------------------------------------------------

def _coord(raw: str, name: str, locator: str, source, *, positive=False) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise MalformedRecord(f"{name} is not a number: {raw!r}", locator, source) from None
    if not math.isfinite(v):
        raise MalformedRecord(f"{name} is not finite: {raw!r}", locator, source)
    lo = 0.0
    if positive and v <= 0.0:
        raise MalformedRecord(f"{name} must be > 0, got {raw}", locator, source)
    if v < lo or v > 1.0:
        if lo - CLAMP_TOLERANCE <= v <= 1.0 + CLAMP_TOLERANCE:
            log.warning("%s %s: clamping %s=%r into [0, 1]", source or "<text>", locator, name, raw)
            v = min(max(v, lo), 1.0)
        else:
            raise MalformedRecord(f"{name} outside [0, 1]: {raw}", locator, source)
    return v


def _category(raw: str, locator, source) -> int:
    try:
        c = int(raw)
    except ValueError:
        raise MalformedRecord(f"category id is not an integer: {raw!r}", locator, source) from None
    if c < 0:
        raise MalformedRecord(f"negative category id {c}", locator, source)
    return c


def _parse_lines(text: str, n_fields: int, source):
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        loc = f"line {lineno}"
        if len(fields) != n_fields:
            raise MalformedRecord(f"expected {n_fields} fields, got {len(fields)}", loc, source)
        cat = _category(fields[0], loc, source)
        box = Box(
            _coord(fields[1], "cx", loc, source),
            _coord(fields[2], "cy", loc, source),
            _coord(fields[3], "w", loc, source, positive=True),
            _coord(fields[4], "h", loc, source, positive=True),
        )
        yield loc, cat, box, fields


def parse_yolo_labels(text: str, source=None) -> list[Annotation]:
    """Parse a label file body. Blank lines are ignored; empty text is a background image.

    Raises:
        MalformedRecord: with the 1-based line number of the first bad line.
    """
    return [Annotation(cat, box) for _, cat, box, _ in _parse_lines(text, 5, source)]


def parse_detections(text: str, source=None) -> list[Detection]:
    """Parse a detection file body (label fields plus a confidence), in file order."""
    out = []
    for loc, cat, box, fields in _parse_lines(text, 6, source):
        conf = _coord(fields[5], "confidence", loc, source)
        out.append(Detection(cat, box, conf))
    return out


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _fmt_size(v: float) -> str:
    s = f"{v:.6f}"
    # never emit a zero size from a tiny positive one
    return "0.000001" if s == "0.000000" else s


def _line(category_id: int, box: Box) -> str:
    return f"{category_id} {_fmt(box.cx)} {_fmt(box.cy)} {_fmt_size(box.w)} {_fmt_size(box.h)}"


def emission_key(item) -> tuple:
    """Sort key of emitted label lines: (category, cx, cy) at six decimals."""
    b = item.box
    line = _line(item.category_id, b)
    return (item.category_id, float(_fmt(b.cx)), float(_fmt(b.cy)), line)


def emit_yolo_labels(annotations: Sequence[Annotation]) -> str:
    """Label file text, one LF-terminated line per annotation, sorted by :func:`emission_key`."""
    return "".join(_line(a.category_id, a.box) + "\n" for a in sorted(annotations, key=emission_key))


def emit_detections(dets: Sequence[Detection]) -> str:
    """Detection file text in the given order."""
    return "".join(f"{_line(d.category_id, d.box)} {_fmt(d.confidence)}\n" for d in dets)


def emit_sidecar(confidences: Sequence[float]) -> str:
    return "".join(_fmt(c) + "\n" for c in confidences)


def parse_sidecar(text: str, source=None) -> list[float]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            out.append(_coord(line.strip(), "confidence", f"line {lineno}", source))
    return out


# -- xView ingestion ----------------------------------------------------------------

def ingest_xview(
    geojson_text: str,
    image_dims: Mapping[str, tuple[int, int]],
    remap: RemapTable,
) -> tuple[Dataset, Counter]:
    """Convert an xView-style GeoJSON FeatureCollection into a Dataset.

    Each feature needs ``type_id``, ``bounds_imcoords`` (``"xmin,ymin,xmax,ymax"``
    in pixels) and ``image_id`` properties. Every image in ``image_dims``
    appears in the result, background if nothing maps onto it.

    Returns:
        The dataset and a Counter of skipped (unmapped) type ids. Mapped
        instances plus skipped features always equal the feature count.
    """
    try:
        doc = json.loads(geojson_text)
        features = doc["features"]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedRecord(f"not a GeoJSON FeatureCollection: {exc}") from None
    per_image: dict[str, list] = {k: [] for k in image_dims}
    skipped: Counter = Counter()
    for n, feat in enumerate(features):
        loc = f"feature {n}"
        try:
            props = feat["properties"]
            type_id = int(props["type_id"])
            image_id = str(props["image_id"])
            raw = props["bounds_imcoords"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(f"missing or invalid property: {exc}", loc) from None
        if type_id not in remap.entries:
            skipped[type_id] += 1
            continue
        if image_id not in image_dims:
            raise MalformedRecord(f"unknown image id {image_id!r}", loc)
        width, height = image_dims[image_id]
        try:
            x0, y0, x1, y1 = (float(v) for v in str(raw).split(","))
        except ValueError:
            raise MalformedRecord(f"bad bounds {raw!r}", loc) from None
        if x1 <= x0 or y1 <= y0:
            raise MalformedRecord(f"empty or inverted bounds {raw!r}", loc)
        if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
            raise MalformedRecord(f"bounds {raw!r} outside {width}x{height} image", loc)
        box = Box((x0 + x1) / 2 / width, (y0 + y1) / 2 / height, (x1 - x0) / width, (y1 - y0) / height)
        per_image[image_id].append(Annotation(remap.entries[type_id], box))
    images = tuple(
        ImageRecord(i, int(image_dims[i][0]), int(image_dims[i][1]), tuple(anns))
        for i, anns in per_image.items()
    )
    return Dataset(tuple(remap.categories), images), skipped


# -- manifests ------------------------------------------------------------------

def _read_text(path: Path) -> str:
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.read()


def load_dataset(manifest_path) -> Dataset:
    """Load and validate a dataset from a JSON manifest.

    Label paths are resolved relative to the manifest. A record flagged
    ``background`` may omit its label file; any other missing label file is
    an error.
    """
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(_read_text(manifest_path))
        categories = tuple(str(c) for c in doc["categories"])
        entries = doc["images"]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedRecord(f"invalid manifest: {exc}", source=str(manifest_path)) from None
    root = manifest_path.parent
    seen = set()
    images = []
    for n, entry in enumerate(entries):
        try:
            image_id = str(entry["id"])
            width, height = int(entry["width"]), int(entry["height"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(f"bad image record: {exc}", f"image {n}", str(manifest_path)) from None
        if image_id in seen:
            raise DuplicateImageId(f"duplicate image id {image_id!r}")
        seen.add(image_id)
        background = bool(entry.get("background", False))
        labels = entry.get("labels")
        path = root / labels if labels else None
        if path is not None and path.is_file():
            anns = parse_yolo_labels(_read_text(path), source=str(path))
        elif background:
            anns = []
        else:
            raise MissingLabelFile(f"image {image_id!r}: label file {labels!r} not found")
        if background and anns:
            raise MalformedRecord("flagged background but has labels", f"image {n}", str(manifest_path))
        for a in anns:
            if a.category_id >= len(categories):
                raise UnknownCategory(
                    f"{path}: category {a.category_id} not in {len(categories)} declared categories"
                )
        images.append(ImageRecord(image_id, width, height, tuple(anns)))
    return Dataset(categories, tuple(images))


def write_text_atomic(path, text: str) -> None:
    """Write via a temporary file and rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def manifest_text(dataset: Dataset, labels_dir: str) -> str:
    images = []
    for r in dataset.images:
        entry = {"id": r.id, "width": r.width, "height": r.height, "labels": f"{labels_dir}/{r.id}.txt"}
        if r.background:
            entry["background"] = True
        images.append(entry)
    return json.dumps({"categories": list(dataset.categories), "images": images}, indent=1) + "\n"


def save_dataset(dataset: Dataset, manifest_path, sidecars: Mapping[str, Sequence[float]] | None = None) -> Path:
    """Write a manifest plus one label file per image (and optional ``.conf`` sidecars).

    Labels go to ``<manifest stem>_labels/`` next to the manifest. Sidecar
    confidences must already be aligned with the emitted (sorted) line order.
    """
    manifest_path = Path(manifest_path)
    labels_dir = manifest_path.stem + "_labels"
    root = manifest_path.parent / labels_dir
    for r in dataset.images:
        write_text_atomic(root / f"{r.id}.txt", emit_yolo_labels(r.annotations))
        if sidecars is not None and r.id in sidecars:
            write_text_atomic(root / f"{r.id}.conf", emit_sidecar(sidecars[r.id]))
    write_text_atomic(manifest_path, manifest_text(dataset, labels_dir))
    return manifest_path


def load_detections(directory, image_ids) -> dict[str, list[Detection]]:
    """Read ``<directory>/<image id>.txt`` detection files; a missing file means no detections."""
    directory = Path(directory)
    out = {}
    for image_id in image_ids:
        path = directory / f"{image_id}.txt"
        if path.is_file():
            out[image_id] = parse_detections(_read_text(path), source=str(path))
    return out


def save_detections(directory, dets_by_image: Mapping[str, Sequence[Detection]]) -> None:
    directory = Path(directory)
    for image_id, dets in dets_by_image.items():
        write_text_atomic(directory / f"{image_id}.txt", emit_detections(dets))
