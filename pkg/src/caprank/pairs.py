"""Turn preference rankings into ordered comparison pairs.

A record ranking captions into groups g_1..g_m yields one pair for every
(a, b) with rank_group(a) < rank_group(b): sum over p<q of |g_p|*|g_q|
pairs, which is C(k,2) exactly when every group is a singleton. Tied
captions produce no pair. Output order is deterministic: group index
first, then caption id lexicographically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CorruptLog, DegenerateRecord, EmptyStore, InvalidField
from .ioutil import check_identifier
from .store import PreferenceDataset, PreferenceRecord

PAIR_FILE_HEADER = "#caprank-pairs v1"


@dataclass(frozen=True)
class ComparisonPair:
    image_id: str
    preferred_caption_id: str
    dispreferred_caption_id: str
    source_record_id: str

    def __post_init__(self):
        if self.preferred_caption_id == self.dispreferred_caption_id:
            raise InvalidField("a caption cannot be compared against itself")


def generate_pairs(rec: PreferenceRecord) -> list[ComparisonPair]:
    """All strict-preference pairs of one record, in canonical order."""
    if rec.degenerate:
        raise DegenerateRecord(
            f"record {rec.record_id!r} ranks all captions in a single group"
        )
    pairs = []
    groups = rec.ranking  # groups are stored sorted, so iteration is canonical
    for p in range(len(groups)):
        for q in range(p + 1, len(groups)):
            for preferred in groups[p]:
                for dispreferred in groups[q]:
                    pairs.append(
                        ComparisonPair(
                            image_id=rec.image_id,
                            preferred_caption_id=preferred,
                            dispreferred_caption_id=dispreferred,
                            source_record_id=rec.record_id,
                        )
                    )
    return pairs


def pair_count(group_sizes) -> int:
    """Closed-form count: sum over p<q of g_p * g_q."""
    sizes = list(group_sizes)
    total = sum(sizes)
    return (total * total - sum(g * g for g in sizes)) // 2


def generate_dataset_pairs(
    store: PreferenceDataset,
    split_seed: int,
    holdout_fraction: float = 0.0,
    max_pairs_per_image: int | None = None,
) -> tuple[list[ComparisonPair], list[ComparisonPair]]:
    """Generate all pairs in a store and split them by image.

    The split is over images, never over pairs, so every pair of one image
    lands on the same side and the holdout cannot leak ranking information
    from trained images. Holdout size is round(fraction * images-with-pairs)
    and the assignment is a seeded permutation of the sorted image ids, so
    the same store and seed always produce the same split.
    """
    if not 0.0 <= holdout_fraction < 1.0:
        raise InvalidField("holdout_fraction must be in [0, 1)")

    per_image: dict[str, list[ComparisonPair]] = {}
    for rec in store.records:
        if rec.degenerate:
            continue
        per_image.setdefault(rec.image_id, []).extend(generate_pairs(rec))
    if not per_image:
        raise EmptyStore("store contains no non-degenerate preference records")

    if max_pairs_per_image is not None:
        if max_pairs_per_image < 1:
            raise InvalidField("max_pairs_per_image must be >= 1")
        per_image = {k: v[:max_pairs_per_image] for k, v in per_image.items()}

    image_ids = sorted(per_image)
    rng = np.random.default_rng(split_seed)
    order = rng.permutation(len(image_ids))
    n_holdout = round(holdout_fraction * len(image_ids))
    holdout_images = {image_ids[i] for i in order[:n_holdout]}

    train: list[ComparisonPair] = []
    holdout: list[ComparisonPair] = []
    for image_id in image_ids:
        side = holdout if image_id in holdout_images else train
        side.extend(per_image[image_id])
    return train, holdout


# ---- pair file format ------------------------------------------------------

def write_pairs(pairs, path):
    """Write the tab-separated pair file consumed by reward-head training."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(PAIR_FILE_HEADER + "\n")
        for p in pairs:
            f.write(
                f"{p.image_id}\t{p.preferred_caption_id}\t"
                f"{p.dispreferred_caption_id}\t{p.source_record_id}\n"
            )


def read_pairs(path) -> list[ComparisonPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != PAIR_FILE_HEADER:
            raise CorruptLog(1, f"expected pair file header {PAIR_FILE_HEADER!r}")
        for line_number, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line:
                raise CorruptLog(line_number, "blank line inside pair file")
            cols = line.split("\t")
            if len(cols) != 4:
                raise CorruptLog(line_number, f"expected 4 columns, found {len(cols)}")
            for col in cols:
                check_identifier(col, "pair file column")
            pairs.append(ComparisonPair(cols[0], cols[1], cols[2], cols[3]))
    return pairs
