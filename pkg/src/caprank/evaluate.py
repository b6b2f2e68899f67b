"""Measure how well a scorer predicts human caption preferences.

Two scorer families share the evaluation path: the trained reward head
over fused embeddings, and the cosine-similarity baseline over separately
supplied image-only and text-only embeddings. Both report best-caption
accuracy (the scorer's argmax caption lands in the labeler's top rank
group) and pairwise accuracy (the quantity the ranking loss optimizes).
Both metrics depend only on score order, so any strictly increasing
transform of a scorer leaves them unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyEvalSet,
    EmptyTable,
    InvalidField,
    MissingEmbedding,
    ZeroVector,
)
from .pairs import generate_pairs
from .reward.checkpoint import Checkpoint
from .reward.head import forward_batch
from .store import PreferenceDataset


def cosine_score(image_vec: np.ndarray, text_vec: np.ndarray) -> float:
    u = np.asarray(image_vec, dtype=np.float64)
    v = np.asarray(text_vec, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch(f"cosine needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


class CaptionScorer(Protocol):
    provenance: dict

    def score(self, image_id: str, caption_id: str) -> float: ...


class RewardHeadScorer:
    """Scores (image, caption) keys with a checkpointed head in eval mode."""

    def __init__(self, checkpoint: Checkpoint, embeddings: Mapping, checkpoint_hash: str = ""):
        self._arch = checkpoint.architecture
        self._params = checkpoint.parameters
        self._embeddings = embeddings
        self.provenance = {
            "scorer": "reward-head",
            "checkpoint_hash": checkpoint_hash,
            "update_count": checkpoint.update_count,
        }

    def score(self, image_id: str, caption_id: str) -> float:
        key = (image_id, caption_id)
        if key not in self._embeddings:
            raise MissingEmbedding([key])
        x = np.asarray(self._embeddings[key], dtype=np.float64)[None, :]
        return float(forward_batch(self._arch, self._params, x)[0])


class CosineScorer:
    """Baseline: cosine similarity between aligned image and text vectors.

    Both mappings are keyed (image_id, caption_id); the image mapping
    repeats its image vector across that image's caption keys so the two
    shards stay key-aligned.
    """

    def __init__(self, image_vectors: Mapping, text_vectors: Mapping):
        self._images = image_vectors
        self._texts = text_vectors
        self.provenance = {"scorer": "cosine-similarity"}

    def score(self, image_id: str, caption_id: str) -> float:
        key = (image_id, caption_id)
        if key not in self._images or key not in self._texts:
            raise MissingEmbedding([key])
        return cosine_score(self._images[key], self._texts[key])


@dataclass
class PreferenceEvalReport:
    best_caption_accuracy: float
    pairwise_accuracy: float
    n_images: int
    n_records: int
    n_pairs: int
    n_constant_score_images: int
    scorer: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("best_caption_accuracy", "pairwise_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidField(f"{name} must lie in [0, 1]")

    @property
    def degenerate_scorer(self) -> bool:
        """True when any evaluated image saw identical scores on all captions."""
        return self.n_constant_score_images > 0

    def to_dict(self) -> dict:
        return {
            "best_caption_accuracy": self.best_caption_accuracy,
            "pairwise_accuracy": self.pairwise_accuracy,
            "n_images": self.n_images,
            "n_records": self.n_records,
            "n_pairs": self.n_pairs,
            "n_constant_score_images": self.n_constant_score_images,
            "degenerate_scorer": self.degenerate_scorer,
            "scorer": self.scorer,
        }

    def render(self) -> str:
        lines = [
            f"best-caption accuracy : {self.best_caption_accuracy:.4f}",
            f"pairwise accuracy     : {self.pairwise_accuracy:.4f}",
            f"images evaluated      : {self.n_images}",
            f"records evaluated     : {self.n_records}",
            f"pairs evaluated       : {self.n_pairs}",
            f"scorer                : {self.scorer.get('scorer', '?')}",
        ]
        if self.degenerate_scorer:
            lines.append(
                f"WARNING: constant scores on {self.n_constant_score_images} image(s); "
                "argmax fell back to caption-id order there"
            )
        return "\n".join(lines)


def best_caption_accuracy(
    scorer: CaptionScorer,
    eval_store: PreferenceDataset,
    strict: bool = False,
) -> PreferenceEvalReport:
    """Evaluate a scorer against every ranked record of a store.

    Each record contributes one best-caption trial: the argmax caption
    over that record's ranked set (ties broken by ascending caption id)
    counts as correct when it sits in the record's top rank group, or,
    with ``strict=True``, only when the top group is exactly that single
    caption. Pairwise accuracy runs over the record's generated pairs.
    """
    if not eval_store.records:
        raise EmptyEvalSet("store holds no preference records")

    correct = 0
    n_records = 0
    n_pairs = 0
    pairs_correct = 0
    constant_images: set[str] = set()
    images: set[str] = set()

    for rec in eval_store.records:
        caption_ids = sorted(rec.ranked_caption_ids)
        if len(caption_ids) < 2:
            continue
        scores = {cid: scorer.score(rec.image_id, cid) for cid in caption_ids}
        if any(not math.isfinite(s) for s in scores.values()):
            raise InvalidField(f"scorer produced a non-finite score on {rec.image_id}")
        n_records += 1
        images.add(rec.image_id)

        # highest score wins; score ties resolve to the smallest caption id
        best = min(caption_ids, key=lambda cid: (-scores[cid], cid))
        if len(set(scores.values())) == 1:
            constant_images.add(rec.image_id)
        top_group = rec.ranking[0]
        if strict:
            hit = len(top_group) == 1 and best == top_group[0]
        else:
            hit = best in top_group
        correct += hit

        if not rec.degenerate:
            for pair in generate_pairs(rec):
                n_pairs += 1
                pairs_correct += (
                    scores[pair.preferred_caption_id] > scores[pair.dispreferred_caption_id]
                )

    if n_records == 0:
        raise EmptyEvalSet("no record ranks two or more captions")

    return PreferenceEvalReport(
        best_caption_accuracy=correct / n_records,
        pairwise_accuracy=(pairs_correct / n_pairs) if n_pairs else 0.0,
        n_images=len(images),
        n_records=n_records,
        n_pairs=n_pairs,
        n_constant_score_images=len(constant_images),
        scorer=dict(scorer.provenance),
    )


# ---- score statistics -----------------------------------------------------------

EXACT_STATS_LIMIT = 10_000_000
_QUANTILES = (0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99)


def score_stats(
    scores: np.ndarray,
    histogram_bins: int = 20,
    exact_limit: int = EXACT_STATS_LIMIT,
    sample_size: int = 1_000_000,
    seed: int = 0,
) -> dict:
    """Order statistics of a score set.

    Quantiles use linear interpolation between order statistics (so the
    median of 1..100 is 50.5 and p90 is 90.1). Above ``exact_limit``
    entries the quantiles come from a uniform subsample and the report
    carries a 95%-confidence rank-error bound (DKW inequality) instead of
    claiming exactness.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyTable("no scores to summarize")
    if not np.all(np.isfinite(scores)):
        raise InvalidField("score statistics require finite scores")

    exact = scores.size <= exact_limit
    if exact:
        sample = scores
        error_bound = 0.0
    else:
        rng = np.random.default_rng(seed)
        sample = scores[rng.choice(scores.size, size=sample_size, replace=False)]
        # DKW: sup-norm CDF error <= sqrt(ln(2/alpha) / (2k)) w.p. 1-alpha
        error_bound = float(np.sqrt(np.log(2 / 0.05) / (2 * sample_size)))

    lo = float(scores.min())
    hi = float(scores.max())
    edges = np.linspace(lo, hi, histogram_bins + 1) if hi > lo else np.array([lo, hi])
    counts, edges = np.histogram(scores, bins=edges if hi > lo else 1)
    return {
        "count": int(scores.size),
        "min": lo,
        "max": hi,
        "mean": float(scores.mean()),
        "quantiles": {str(q): float(np.quantile(sample, q)) for q in _QUANTILES},
        "exact": exact,
        "quantile_rank_error_bound": error_bound,
        "histogram": {
            "edges": [float(e) for e in edges],
            "counts": [int(c) for c in counts],
        },
    }
