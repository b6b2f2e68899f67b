"""Score a corpus with a checkpointed head and keep the top-k% pairs.

Selection keeps exactly floor(keep_ratio * N) pairs under the fixed tie
policy (score descending, then pair id ascending), found by partial
selection of the threshold score rather than a full sort, followed by a
second pass that emits the kept ids. keep_ratio is handled as an exact
rational so the floor never shifts from float rounding. Because only the
ordering of scores matters, any strictly increasing transform of the
scorer leaves the selected set unchanged.
"""

from __future__ import annotations

import os
import struct
import hashlib
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .embeddings import KEY_MODE_PAIR, read_shard
from .errors import (
    CorruptShard,
    DimensionMismatch,
    EmptyTable,
    InvalidField,
    MissingPair,
    NonFiniteScore,
    TruncatedShard,
)
from .ioutil import canonical_json, check_identifier
from .reward.checkpoint import Checkpoint
from .reward.head import forward_batch

SCORE_MAGIC = b"CRKSCR01"
SCORE_FORMAT_VERSION = 1
MANIFEST_HEADER = "#caprank-manifest v1"
TIE_BREAK = "score_desc,pair_id_asc"


@dataclass
class ScoreTable:
    pair_ids: list[str]
    scores: np.ndarray
    provenance: dict

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if len(self.pair_ids) != self.scores.shape[0]:
            raise InvalidField("score table ids and scores differ in length")

    def __len__(self) -> int:
        return len(self.pair_ids)


def parse_keep_ratio(value) -> Fraction:
    """Exact rational keep ratio in (0, 1]; floats go through their repr."""
    if isinstance(value, Fraction):
        ratio = value
    elif isinstance(value, float):
        ratio = Fraction(str(value))
    else:
        ratio = Fraction(value)
    if not 0 < ratio <= 1:
        raise InvalidField(f"keep_ratio must lie in (0, 1], got {ratio}")
    return ratio


@dataclass(frozen=True)
class CompressionSpec:
    keep_ratio: Fraction
    tie_break: str = TIE_BREAK

    def __post_init__(self):
        object.__setattr__(self, "keep_ratio", parse_keep_ratio(self.keep_ratio))
        if self.tie_break != TIE_BREAK:
            raise InvalidField(f"tie_break policy is fixed to {TIE_BREAK!r}")

    def kept_count(self, n: int) -> int:
        return (self.keep_ratio.numerator * n) // self.keep_ratio.denominator


@dataclass
class CompressedManifest:
    pair_ids: list[str]
    threshold: float
    input_count: int
    kept_count: int
    keep_ratio: Fraction
    provenance: dict
    exact: bool = True


# ---- scoring -----------------------------------------------------------------

def score_corpus(
    checkpoint: Checkpoint,
    shard_paths: Sequence,
    workers: int = 1,
    chunk_size: int = 8192,
    checkpoint_hash: str = "",
) -> ScoreTable:
    """Eval-mode rewards for every record of the given pair-keyed shards.

    Output order is the shard order (paths in argument order, records in
    file order). Shards are scored in parallel when ``workers > 1`` and
    merged by shard index, so the table never depends on worker count.
    """
    from concurrent.futures import ThreadPoolExecutor

    if not shard_paths:
        raise InvalidField("score_corpus needs at least one shard")

    arch = checkpoint.architecture
    params = checkpoint.parameters

    def score_one(path):
        reader = read_shard(path, expected_dimension=arch.input_dim)
        try:
            if reader.header.key_mode != KEY_MODE_PAIR:
                raise InvalidField(
                    f"{path}: corpus scoring requires a pair-keyed shard"
                )
            ids = [str(k) for k in reader.keys]
            n = reader.header.record_count
            scores = np.empty(n, dtype=np.float64)
            for start in range(0, n, chunk_size):
                count = min(chunk_size, n - start)
                block = reader.read_vector_block(start, count)
                if not np.all(np.isfinite(block)):
                    bad = start + int(np.argwhere(~np.isfinite(block).all(axis=1))[0])
                    raise NonFiniteScore(ids[bad])
                scores[start: start + count] = forward_batch(
                    arch, params, block.astype(np.float64)
                )
            if not np.all(np.isfinite(scores)):
                raise NonFiniteScore(ids[int(np.argmin(np.isfinite(scores)))])
            return ids, scores
        finally:
            reader.close()

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score_one, shard_paths))
    else:
        results = [score_one(p) for p in shard_paths]

    all_ids: list[str] = []
    parts = []
    for ids, scores in results:
        all_ids.extend(ids)
        parts.append(scores)
    if len(set(all_ids)) != len(all_ids):
        raise InvalidField("pair ids repeat across the given shards")
    return ScoreTable(
        pair_ids=all_ids,
        scores=np.concatenate(parts) if parts else np.empty(0),
        provenance={
            "scorer": "reward-head",
            "checkpoint_hash": checkpoint_hash,
            "update_count": checkpoint.update_count,
        },
    )


# ---- selection ---------------------------------------------------------------

def select_top(table: ScoreTable, spec: CompressionSpec) -> CompressedManifest:
    """Keep the exact top-m entries by (score desc, pair id asc)."""
    n = len(table)
    if n == 0:
        raise EmptyTable("cannot select from an empty score table")
    if not np.all(np.isfinite(table.scores)):
        raise NonFiniteScore(table.pair_ids[int(np.argmin(np.isfinite(table.scores)))])
    m = spec.kept_count(n)
    if m == 0:
        return CompressedManifest(
            pair_ids=[],
            threshold=float("inf"),
            input_count=n,
            kept_count=0,
            keep_ratio=spec.keep_ratio,
            provenance=dict(table.provenance),
        )

    scores = table.scores
    # m-th largest score via introselect; no full ordering of the table
    threshold = np.partition(scores, n - m)[n - m]
    above_idx = np.flatnonzero(scores > threshold)
    at_idx = np.flatnonzero(scores == threshold)
    slots_for_ties = m - above_idx.size
    tied_ids = sorted(table.pair_ids[i] for i in at_idx)
    kept_tied = set(tied_ids[:slots_for_ties])

    kept = [(scores[i], table.pair_ids[i]) for i in above_idx]
    kept.extend((float(threshold), pid) for pid in kept_tied)
    kept.sort(key=lambda t: (-t[0], t[1]))
    return CompressedManifest(
        pair_ids=[pid for _, pid in kept],
        threshold=float(threshold),
        input_count=n,
        kept_count=m,
        keep_ratio=spec.keep_ratio,
        provenance=dict(table.provenance),
    )


def select_top_approximate(
    table: ScoreTable, spec: CompressionSpec, sample_size: int = 100_000, seed: int = 0
) -> CompressedManifest:
    """Reservoir-sampled threshold selection for memory-capped settings.

    NON-EXACT: the kept count is whatever clears the estimated threshold,
    so it can deviate from floor(keep_ratio * N). Manifests produced here
    are marked ``exact=False`` and say so in their header.
    """
    n = len(table)
    if n == 0:
        raise EmptyTable("cannot select from an empty score table")
    rng = np.random.default_rng(seed)
    if n <= sample_size:
        sample = table.scores
    else:
        sample = table.scores[rng.choice(n, size=sample_size, replace=False)]
    quantile = 1.0 - float(spec.keep_ratio)
    threshold = float(np.quantile(sample, quantile))
    kept = [
        (float(s), pid)
        for s, pid in zip(table.scores, table.pair_ids)
        if s >= threshold
    ]
    kept.sort(key=lambda t: (-t[0], t[1]))
    return CompressedManifest(
        pair_ids=[pid for _, pid in kept],
        threshold=threshold,
        input_count=n,
        kept_count=len(kept),
        keep_ratio=spec.keep_ratio,
        provenance=dict(table.provenance),
        exact=False,
    )


def apply_manifest(manifest: CompressedManifest, listing: Iterable[str]) -> list[str]:
    """Filter a corpus listing to the manifest pairs, preserving source order.

    Listing lines are tab-separated with the pair id in the first column;
    everything after it passes through untouched.
    """
    wanted = set(manifest.pair_ids)
    out = []
    seen = set()
    for line in listing:
        line = line.rstrip("\n")
        if not line:
            continue
        pair_id = line.split("\t", 1)[0]
        if pair_id in wanted:
            out.append(line)
            seen.add(pair_id)
    missing = wanted - seen
    if missing:
        raise MissingPair(min(missing))
    return out


# ---- score table files ---------------------------------------------------------

def write_score_table(table: ScoreTable, path) -> dict:
    ids = [check_identifier(pid, "pair_id") for pid in table.pair_ids]
    if not np.all(np.isfinite(table.scores)):
        raise NonFiniteScore(ids[int(np.argmin(np.isfinite(table.scores)))])
    encoded = [pid.encode("utf-8") for pid in ids]
    blob = b"".join(encoded)
    offsets = np.zeros(len(ids) + 1, dtype="<u8")
    np.cumsum([len(e) for e in encoded], out=offsets[1:])
    prov = canonical_json(table.provenance).encode("utf-8")

    hasher = hashlib.sha256()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:

        def emit(data: bytes):
            hasher.update(data)
            f.write(data)

        emit(SCORE_MAGIC)
        emit(struct.pack("<IQI", SCORE_FORMAT_VERSION, len(ids), len(prov)))
        emit(prov)
        emit(struct.pack("<Q", len(blob)))
        emit(offsets.tobytes())
        emit(blob)
        emit(table.scores.astype("<f8", copy=False).tobytes())
        checksum = struct.unpack("<Q", hasher.digest()[:8])[0]
        f.write(struct.pack("<Q", checksum))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    return {"count": len(ids), "checksum": checksum}


def read_score_table(path) -> ScoreTable:
    import json

    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[:8] != SCORE_MAGIC:
        raise CorruptShard(f"{path}: not a score table")
    (stored,) = struct.unpack_from("<Q", data, len(data) - 8)
    computed = struct.unpack("<Q", hashlib.sha256(data[:-8]).digest()[:8])[0]
    if stored != computed:
        raise CorruptShard(f"{path}: checksum mismatch")
    version, count, prov_len = struct.unpack_from("<IQI", data, 8)
    if version != SCORE_FORMAT_VERSION:
        raise CorruptShard(f"{path}: unsupported score table version {version}")
    offset = 8 + 16
    provenance = json.loads(data[offset: offset + prov_len].decode("utf-8"))
    offset += prov_len
    (blob_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    offsets = np.frombuffer(data, dtype="<u8", count=count + 1, offset=offset)
    offset += (count + 1) * 8
    blob = data[offset: offset + blob_len]
    offset += blob_len
    expected_end = offset + count * 8 + 8
    if len(data) < expected_end:
        raise TruncatedShard(len(data), f"score table needs {expected_end} bytes")
    scores = np.frombuffer(data, dtype="<f8", count=count, offset=offset).copy()
    pair_ids = [
        blob[offsets[i]: offsets[i + 1]].decode("utf-8") for i in range(count)
    ]
    return ScoreTable(pair_ids=pair_ids, scores=scores, provenance=provenance)


def export_scores_text(table: ScoreTable, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("#caprank-scores v1\n")
        for pid, s in zip(table.pair_ids, table.scores):
            f.write(f"{pid}\t{float(s)!r}\n")


# ---- manifest files -------------------------------------------------------------

def write_manifest(manifest: CompressedManifest, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(MANIFEST_HEADER + "\n")
        f.write(f"input_count={manifest.input_count}\n")
        f.write(f"kept_count={manifest.kept_count}\n")
        f.write(f"keep_ratio={manifest.keep_ratio}\n")
        f.write(f"threshold={manifest.threshold!r}\n")
        f.write(f"tie_break={TIE_BREAK}\n")
        f.write(f"exact={'true' if manifest.exact else 'false'}\n")
        f.write(f"provenance={canonical_json(manifest.provenance)}\n")
        f.write("---\n")
        for pid in manifest.pair_ids:
            f.write(pid + "\n")


def read_manifest(path) -> CompressedManifest:
    import json

    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise InvalidField(f"{path}: missing manifest header")
    fields = {}
    body_at = None
    for i, line in enumerate(lines[1:], start=1):
        if line == "---":
            body_at = i + 1
            break
        key, _, value = line.partition("=")
        fields[key] = value
    if body_at is None:
        raise InvalidField(f"{path}: manifest body separator missing")
    pair_ids = [l for l in lines[body_at:] if l]
    manifest = CompressedManifest(
        pair_ids=pair_ids,
        threshold=float(fields["threshold"]),
        input_count=int(fields["input_count"]),
        kept_count=int(fields["kept_count"]),
        keep_ratio=Fraction(fields["keep_ratio"]),
        provenance=json.loads(fields["provenance"]),
        exact=fields.get("exact", "true") == "true",
    )
    if manifest.exact and len(pair_ids) != manifest.kept_count:
        raise InvalidField(
            f"{path}: manifest declares {manifest.kept_count} ids, found {len(pair_ids)}"
        )
    return manifest
