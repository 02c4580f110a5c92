import json
from pathlib import Path

import pytest

from softlabel import Annotation, Box, Dataset, Detection, ImageRecord

DATA = Path(__file__).parent / "data"


@pytest.fixture
def reference():
    return json.loads((DATA / "reference_results.json").read_text())


def make_dataset(per_image, categories=("ship", "car", "plane"), size=(1000, 500)):
    """per_image: {image id: [(cat, cx, cy, w, h), ...]}"""
    images = tuple(
        ImageRecord(i, size[0], size[1], tuple(Annotation(c, Box(x, y, w, h)) for c, x, y, w, h in anns))
        for i, anns in per_image.items()
    )
    return Dataset(tuple(categories), images)


def perfect_detections(ds, confidence=1.0):
    return {r.id: [Detection(a.category_id, a.box, confidence) for a in r.annotations] for r in ds.images}


# acceptance criterion outcomes, printed at the end of the run
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, text = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{n:>2}] {text}")
