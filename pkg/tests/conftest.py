import sys
from datetime import datetime, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from caprank.store import (
    CaptionCandidate,
    CriteriaAnnotation,
    ImageEntry,
    PreferenceDataset,
    PreferenceRecord,
)

TS = datetime(2024, 6, 1, 12, 0, 0, tzinfo=timezone.utc)


def make_store(n_images=2, captions=("a", "b", "c")) -> PreferenceDataset:
    store = PreferenceDataset("test-store")
    for i in range(n_images):
        image_id = f"img{i}"
        store.add_image(ImageEntry(image_id, f"file:///images/{image_id}.jpg"))
        for cid in captions:
            store.add_caption(CaptionCandidate(cid, image_id, f"the {cid} caption of {image_id}"))
    return store


def make_record(image_id="img0", ranking=(("a",), ("b",), ("c",)), record_id=None,
                labeler_id="alice", criteria=None) -> PreferenceRecord:
    return PreferenceRecord(
        record_id=record_id or f"rec-{image_id}-{labeler_id}",
        image_id=image_id,
        labeler_id=labeler_id,
        ranking=ranking,
        criteria=criteria or {},
        timestamp=TS,
    )


@pytest.fixture
def store():
    return make_store()


@pytest.fixture
def criteria_full():
    return CriteriaAnnotation(accuracy=True, completeness=2, vividness=1, context=0)
