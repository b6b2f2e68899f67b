"""Synthetic, fully self-contained dataset for exercising the whole pipeline.

A hidden unit vector plays the role of a perfect alignment judge: every
embedding is constructed so its dot product with that vector equals a
chosen target score exactly (a random vector is shifted along the hidden
direction). Preference rankings order captions by those scores with
adjacent margins of at least 0.1, so they are noiselessly induced by a
linear scorer; the random-labels variant shuffles the rankings instead,
giving a chance-level control.

The corpus half of the demo mirrors a noisy web crawl: aligned pairs draw
target scores from a high band, corrupted pairs from a disjoint low band
(the corruption is a fixed downward shift along the hidden direction), and
a labels file records which is which so filtering efficacy is checkable.

Everything is a pure function of the seed, including timestamps, so two
demo runs produce byte-identical artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingRecord, write_shard
from .ioutil import canonical_json
from .store import (
    CaptionCandidate,
    CriteriaAnnotation,
    ImageEntry,
    PreferenceDataset,
    PreferenceRecord,
    export_store,
)

_FIXED_TIMESTAMP = datetime(2024, 1, 1, tzinfo=timezone.utc)

ALIGNED_BAND = (0.5, 3.0)
CORRUPTION_SHIFT = 3.0


@dataclass(frozen=True)
class DemoSpec:
    images: int = 500
    captions_per_image: int = 8
    dimension: int = 32
    seed: int = 0
    labels: str = "oracle"  # oracle | random
    corpus_size: int = 4000
    min_margin: float = 0.2
    max_margin: float = 0.9

    def __post_init__(self):
        if self.labels not in ("oracle", "random"):
            raise ValueError("labels must be 'oracle' or 'random'")
        if not 2 <= self.captions_per_image <= 16:
            raise ValueError("captions_per_image must lie in 2..16")
        if self.min_margin <= 0 or self.max_margin < self.min_margin:
            raise ValueError("margins must satisfy 0 < min <= max")


def _embed_with_score(rng, direction: np.ndarray, score: float, dim: int) -> np.ndarray:
    base = rng.normal(size=dim)
    return base + (score - direction @ base) * direction


def generate_demo(out_dir, spec: DemoSpec = DemoSpec()) -> dict:
    """Write store log, preference shard, corpus shard, and labels file.

    Returns the paths plus the hidden direction metadata file. Captions
    get descending target scores with per-step margins drawn from
    [min_margin, max_margin], assigned to caption ids in shuffled order so
    caption ids carry no rank signal.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    direction = rng.normal(size=spec.dimension)
    direction /= np.linalg.norm(direction)

    store = PreferenceDataset(store_id=f"demo-seed{spec.seed}")
    pref_records: list[EmbeddingRecord] = []
    k = spec.captions_per_image

    for i in range(spec.images):
        image_id = f"img{i:05d}"
        store.add_image(ImageEntry(image_id=image_id, uri=f"demo://image/{image_id}"))

        start = rng.uniform(-1.0, 1.0)
        margins = rng.uniform(spec.min_margin, spec.max_margin, size=k - 1)
        targets = start + np.concatenate(([0.0], np.cumsum(margins)))[::-1]
        assignment = rng.permutation(k)  # rank position -> caption index

        ranked_ids = []
        for rank_pos in range(k):
            caption_id = f"c{assignment[rank_pos]:02d}"
            ranked_ids.append(caption_id)
            store.add_caption(
                CaptionCandidate(
                    caption_id=caption_id,
                    image_id=image_id,
                    text=f"synthetic caption {caption_id} for {image_id}",
                    source="dataset-sampled",
                )
            )
            vec = _embed_with_score(rng, direction, targets[rank_pos], spec.dimension)
            pref_records.append(EmbeddingRecord(key=(image_id, caption_id), vector=vec))

        if spec.labels == "random":
            order = rng.permutation(k)
            ranking = [(ranked_ids[j],) for j in order]
        else:
            ranking = [(cid,) for cid in ranked_ids]

        top = ranking[0][0]
        store.append_record(
            PreferenceRecord(
                record_id=f"rec-{image_id}",
                image_id=image_id,
                labeler_id=f"demo-{spec.labels}",
                ranking=ranking,
                criteria={top: CriteriaAnnotation(True, 2, 2, 2)},
                timestamp=_FIXED_TIMESTAMP,
            )
        )

    store_path = out / "store.log"
    export_store(store, store_path)

    embeddings_path = out / "preference-embeddings.shard"
    write_shard(pref_records, embeddings_path, spec.dimension)

    # mixed corpus: first half aligned, second half corrupted by a fixed
    # downward shift along the hidden direction
    n_aligned = spec.corpus_size // 2
    corpus_records = []
    labels = []
    for n in range(spec.corpus_size):
        pair_id = f"p{n:07d}"
        aligned = n < n_aligned
        target = rng.uniform(*ALIGNED_BAND)
        if not aligned:
            target -= CORRUPTION_SHIFT
        corpus_records.append(
            EmbeddingRecord(
                key=pair_id,
                vector=_embed_with_score(rng, direction, target, spec.dimension),
            )
        )
        labels.append((pair_id, "aligned" if aligned else "corrupted"))

    corpus_path = out / "corpus.shard"
    write_shard(corpus_records, corpus_path, spec.dimension)

    listing_path = out / "corpus-listing.tsv"
    with open(listing_path, "w", encoding="utf-8") as f:
        for pair_id, label in labels:
            f.write(f"{pair_id}\t{label}\n")

    meta_path = out / "demo-meta.json"
    with open(meta_path, "w", encoding="utf-8") as f:
        f.write(
            canonical_json(
                {
                    "spec": {
                        "images": spec.images,
                        "captions_per_image": spec.captions_per_image,
                        "dimension": spec.dimension,
                        "seed": spec.seed,
                        "labels": spec.labels,
                        "corpus_size": spec.corpus_size,
                    },
                    "hidden_direction": [float(x) for x in direction],
                    "aligned_band": list(ALIGNED_BAND),
                    "corruption_shift": CORRUPTION_SHIFT,
                }
            )
            + "\n"
        )

    return {
        "store": str(store_path),
        "embeddings": str(embeddings_path),
        "corpus": str(corpus_path),
        "listing": str(listing_path),
        "meta": str(meta_path),
    }
