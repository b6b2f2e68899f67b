"""Fused image-text embedding shards: binary format, JSONL variant, fetch client.

Binary layout (all little-endian), designed so records have a constant
size and the vector payload supports parallel range reads:

    magic            8 bytes  b"CRKEMB01"
    version          u32
    dimension        u32
    record_count     u64
    key_mode         u8       0 = pair id, 1 = (image id, caption id)
    key_blob_len     u64
    key_offsets      (record_count + 1) x u64 into the key blob
    key_blob         utf-8; mode-1 keys join the two ids with \\x1f
    payload          record_count x dimension x f32
    checksum         u64, first 8 bytes of sha256 over all preceding bytes

Vectors are stored exactly as given: no normalization happens at I/O time.
A JSONL text variant (one header object, then one object per record) is
accepted for small shards; readers sniff the magic to pick the decoder.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import time
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

import numpy as np

from .errors import (
    BadMagic,
    CorruptShard,
    DimensionMismatch,
    DuplicateKey,
    EndpointUnreachable,
    InvalidField,
    NonFiniteVector,
    PartialResponse,
    TruncatedShard,
)
from .ioutil import check_identifier

MAGIC = b"CRKEMB01"
FORMAT_VERSION = 1
KEY_MODE_PAIR = 0
KEY_MODE_IMAGE_CAPTION = 1
JSONL_RECORD_LIMIT = 100_000

_KEY_SEP = "\x1f"

EmbeddingKey = Union[str, tuple[str, str]]


@dataclass(frozen=True)
class EmbeddingRecord:
    key: EmbeddingKey
    vector: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "vector", np.ascontiguousarray(self.vector, dtype=np.float32)
        )


@dataclass(frozen=True)
class ShardHeader:
    format_version: int
    dimension: int
    record_count: int
    key_mode: int


def _encode_key(key: EmbeddingKey, key_mode: int) -> str:
    if key_mode == KEY_MODE_PAIR:
        if not isinstance(key, str):
            raise InvalidField(f"pair-keyed shard got non-string key {key!r}")
        return check_identifier(key, "pair_id")
    image_id, caption_id = key
    check_identifier(image_id, "image_id")
    check_identifier(caption_id, "caption_id")
    return f"{image_id}{_KEY_SEP}{caption_id}"


def _decode_key(raw: str, key_mode: int) -> EmbeddingKey:
    if key_mode == KEY_MODE_PAIR:
        return raw
    image_id, _, caption_id = raw.partition(_KEY_SEP)
    return (image_id, caption_id)


def _infer_key_mode(key: EmbeddingKey) -> int:
    return KEY_MODE_PAIR if isinstance(key, str) else KEY_MODE_IMAGE_CAPTION


# ---- writing ----------------------------------------------------------------

def write_shard(records: Iterable[EmbeddingRecord], path, dimension: int) -> dict:
    """Write a binary shard; returns ``{"count": n, "checksum": u64}``.

    The byte stream is a pure function of the record sequence, so two runs
    over the same input produce identical files. Records are materialized
    to lay out the key table ahead of the payload; shard writing is a
    dataset-preparation step, not a streaming one.
    """
    records = list(records)
    key_mode = _infer_key_mode(records[0].key) if records else KEY_MODE_PAIR

    encoded_keys: list[bytes] = []
    seen: set[str] = set()
    for rec in records:
        raw = _encode_key(rec.key, key_mode)
        if raw in seen:
            raise DuplicateKey(repr(rec.key))
        seen.add(raw)
        if rec.vector.shape != (dimension,):
            raise DimensionMismatch(
                f"record {rec.key!r} has dimension {rec.vector.shape}, shard declares {dimension}"
            )
        if not np.all(np.isfinite(rec.vector)):
            raise NonFiniteVector(rec.key)
        encoded_keys.append(raw.encode("utf-8"))

    hasher = hashlib.sha256()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:

        def emit(data: bytes):
            hasher.update(data)
            f.write(data)

        blob = b"".join(encoded_keys)
        offsets = np.zeros(len(records) + 1, dtype="<u8")
        np.cumsum([len(k) for k in encoded_keys], out=offsets[1:])

        emit(MAGIC)
        emit(struct.pack("<IIQ", FORMAT_VERSION, dimension, len(records)))
        emit(struct.pack("<BQ", key_mode, len(blob)))
        emit(offsets.tobytes())
        emit(blob)
        for rec in records:
            emit(rec.vector.astype("<f4", copy=False).tobytes())
        checksum = struct.unpack("<Q", hasher.digest()[:8])[0]
        f.write(struct.pack("<Q", checksum))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
    return {"count": len(records), "checksum": checksum}


def write_shard_jsonl(records: Iterable[EmbeddingRecord], path, dimension: int) -> dict:
    """Text variant for tests and demos; capped at 10^5 records."""
    records = list(records)
    if len(records) > JSONL_RECORD_LIMIT:
        raise InvalidField(
            f"JSONL shards are limited to {JSONL_RECORD_LIMIT} records; use the binary format"
        )
    key_mode = _infer_key_mode(records[0].key) if records else KEY_MODE_PAIR
    seen: set[str] = set()
    with open(path, "w", encoding="utf-8") as f:
        f.write(
            json.dumps(
                {
                    "format_version": FORMAT_VERSION,
                    "dimension": dimension,
                    "record_count": len(records),
                    "key_mode": key_mode,
                },
                sort_keys=True,
            )
            + "\n"
        )
        for rec in records:
            raw = _encode_key(rec.key, key_mode)
            if raw in seen:
                raise DuplicateKey(repr(rec.key))
            seen.add(raw)
            if rec.vector.shape != (dimension,):
                raise DimensionMismatch(
                    f"record {rec.key!r} has dimension {rec.vector.shape}, "
                    f"shard declares {dimension}"
                )
            f.write(json.dumps({"key": raw, "vector": rec.vector.tolist()}) + "\n")
    return {"count": len(records), "checksum": None}


# ---- reading ----------------------------------------------------------------

class ShardReader:
    """Iterates a shard while holding one vector at a time.

    The key table lives in memory (it is id-sized, not vector-sized); the
    f32 payload is streamed record by record. The trailing checksum is
    verified when iteration reaches the end of the payload. Finiteness is
    validated lazily per record.
    """

    def __init__(self, path, expected_dimension: int | None = None):
        self.path = os.fspath(path)
        self._file_size = os.path.getsize(self.path)
        with open(self.path, "rb") as f:
            magic = f.read(8)
        if magic == MAGIC:
            self._jsonl = False
            self._open_binary(expected_dimension)
        else:
            self._jsonl = True
            self._open_jsonl(magic, expected_dimension)

    # binary -----------------------------------------------------------

    def _open_binary(self, expected_dimension):
        self._hasher = hashlib.sha256()
        f = open(self.path, "rb")
        try:
            fixed = self._read_exact(f, 8 + 16 + 9)
            version, dimension, count = struct.unpack_from("<IIQ", fixed, 8)
            key_mode, blob_len = struct.unpack_from("<BQ", fixed, 24)
            if version != FORMAT_VERSION:
                raise CorruptShard(
                    f"shard format version {version} unsupported (expected {FORMAT_VERSION})"
                )
            if key_mode not in (KEY_MODE_PAIR, KEY_MODE_IMAGE_CAPTION):
                raise CorruptShard(f"unknown key mode {key_mode}")
            if expected_dimension is not None and dimension != expected_dimension:
                raise DimensionMismatch(
                    f"shard dimension {dimension}, expected {expected_dimension}"
                )
            self.header = ShardHeader(version, dimension, count, key_mode)

            expected_size = (
                len(fixed) + (count + 1) * 8 + blob_len + count * dimension * 4 + 8
            )
            if self._file_size < expected_size:
                f.close()
                raise TruncatedShard(
                    self._file_size,
                    f"expected {expected_size} bytes for {count} records of dimension {dimension}",
                )

            offsets_raw = self._read_exact(f, (count + 1) * 8)
            offsets = np.frombuffer(offsets_raw, dtype="<u8")
            blob = self._read_exact(f, blob_len)
            raw_keys = [
                blob[offsets[i]: offsets[i + 1]].decode("utf-8") for i in range(count)
            ]
            if len(set(raw_keys)) != count:
                raise DuplicateKey("shard key table contains repeated keys")
            self._raw_keys = raw_keys
            self._payload_offset = f.tell()
            self._fh = f
        except Exception:
            f.close()
            raise

    def _read_exact(self, f, n: int) -> bytes:
        data = f.read(n)
        if len(data) != n:
            raise TruncatedShard(f.tell(), "header ends early")
        self._hasher.update(data)
        return data

    # jsonl -------------------------------------------------------------

    def _open_jsonl(self, magic: bytes, expected_dimension):
        try:
            text_head = magic.decode("utf-8")
        except UnicodeDecodeError:
            raise BadMagic(f"unrecognized shard magic {magic!r}") from None
        if not text_head.startswith("{"):
            raise BadMagic(f"unrecognized shard magic {magic!r}")
        self._fh = open(self.path, "r", encoding="utf-8")
        try:
            header = json.loads(self._fh.readline())
            self.header = ShardHeader(
                header["format_version"],
                header["dimension"],
                header["record_count"],
                header["key_mode"],
            )
        except (json.JSONDecodeError, KeyError) as e:
            self._fh.close()
            raise CorruptShard(f"bad JSONL shard header: {e}") from None
        if self.header.format_version != FORMAT_VERSION:
            self._fh.close()
            raise CorruptShard(f"shard format version {self.header.format_version} unsupported")
        if expected_dimension is not None and self.header.dimension != expected_dimension:
            self._fh.close()
            raise DimensionMismatch(
                f"shard dimension {self.header.dimension}, expected {expected_dimension}"
            )

    # iteration ----------------------------------------------------------

    def __iter__(self) -> Iterator[EmbeddingRecord]:
        try:
            if self._jsonl:
                yield from self._iter_jsonl()
            else:
                yield from self._iter_binary()
        finally:
            self.close()

    def _iter_binary(self):
        d = self.header.dimension
        rec_bytes = d * 4
        for raw_key in self._raw_keys:
            chunk = self._fh.read(rec_bytes)
            if len(chunk) != rec_bytes:
                raise TruncatedShard(self._fh.tell())
            self._hasher.update(chunk)
            vector = np.frombuffer(chunk, dtype="<f4")
            key = _decode_key(raw_key, self.header.key_mode)
            if not np.all(np.isfinite(vector)):
                raise NonFiniteVector(key)
            yield EmbeddingRecord(key=key, vector=vector)
        trailer = self._fh.read(8)
        if len(trailer) != 8:
            raise TruncatedShard(self._fh.tell(), "checksum trailer missing")
        (stored,) = struct.unpack("<Q", trailer)
        computed = struct.unpack("<Q", self._hasher.digest()[:8])[0]
        if stored != computed:
            raise CorruptShard(
                f"checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
            )

    def _iter_jsonl(self):
        seen: set[str] = set()
        emitted = 0
        for line in self._fh:
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                raw, values = obj["key"], obj["vector"]
            except (json.JSONDecodeError, KeyError) as e:
                raise CorruptShard(f"bad JSONL shard record: {e}") from None
            if raw in seen:
                raise DuplicateKey(repr(raw))
            seen.add(raw)
            vector = np.asarray(values, dtype=np.float32)
            if vector.shape != (self.header.dimension,):
                raise DimensionMismatch(
                    f"record {raw!r} has dimension {vector.shape}, "
                    f"shard declares {self.header.dimension}"
                )
            key = _decode_key(raw, self.header.key_mode)
            if not np.all(np.isfinite(vector)):
                raise NonFiniteVector(key)
            emitted += 1
            yield EmbeddingRecord(key=key, vector=vector)
        if emitted != self.header.record_count:
            raise CorruptShard(
                f"JSONL shard declares {self.header.record_count} records, found {emitted}"
            )

    # bulk payload access (used by the corpus scorer) ----------------------

    def read_vector_block(self, start: int, count: int) -> np.ndarray:
        """Read ``count`` vectors starting at record ``start`` as one array."""
        if self._jsonl:
            raise InvalidField("range reads require the binary shard format")
        d = self.header.dimension
        self._fh.seek(self._payload_offset + start * d * 4)
        data = self._fh.read(count * d * 4)
        if len(data) != count * d * 4:
            raise TruncatedShard(self._fh.tell())
        return np.frombuffer(data, dtype="<f4").reshape(count, d)

    @property
    def keys(self) -> list[EmbeddingKey]:
        if self._jsonl:
            raise InvalidField("key table access requires the binary shard format")
        return [_decode_key(k, self.header.key_mode) for k in self._raw_keys]

    def close(self):
        fh = getattr(self, "_fh", None)
        if fh is not None and not fh.closed:
            fh.close()


def read_shard(path, expected_dimension: int | None = None) -> ShardReader:
    """Open a shard for streaming; validates header and size up front."""
    return ShardReader(path, expected_dimension)


def load_shard_mapping(path) -> tuple[int, dict]:
    """Materialize a whole shard as ``(dimension, {key: float64 vector})``."""
    reader = read_shard(path)
    mapping = {}
    for rec in reader:
        mapping[rec.key] = rec.vector.astype(np.float64)
    return reader.header.dimension, mapping


# ---- external embedder client ----------------------------------------------

@dataclass(frozen=True)
class EmbedderConfig:
    """Connection settings for an external frozen-backbone embedder."""

    endpoint: str
    batch_size: int = 64
    timeout: float = 10.0
    max_retries: int = 3
    backoff_base: float = 0.2
    backoff_cap: float = 5.0

    def __post_init__(self):
        if not self.endpoint:
            raise InvalidField("embedder endpoint must be configured")
        if self.batch_size < 1:
            raise InvalidField("embedder batch_size must be >= 1")

    @classmethod
    def from_env(cls, env=None) -> "EmbedderConfig":
        env = os.environ if env is None else env
        endpoint = env.get("CAPRANK_EMBEDDER_ENDPOINT", "")
        batch = int(env.get("CAPRANK_EMBEDDER_BATCH_SIZE", "64"))
        return cls(endpoint=endpoint, batch_size=batch)


def fetch_embeddings(
    config: EmbedderConfig,
    keys: list[EmbeddingKey],
    transport=None,
    sleep=time.sleep,
) -> list[EmbeddingRecord]:
    """Fetch one embedding per key from the configured HTTP endpoint.

    Keys are sent in batches of ``config.batch_size`` as JSON POSTs;
    transient failures (connection errors, 5xx) are retried with capped
    exponential backoff. ``transport`` is an httpx transport, injectable
    for tests.
    """
    import httpx

    if not keys:
        raise InvalidField("fetch_embeddings requires a non-empty key list")
    key_mode = _infer_key_mode(keys[0])
    raw_keys = [_encode_key(k, key_mode) for k in keys]

    records: list[EmbeddingRecord] = []
    dimension: int | None = None
    with httpx.Client(transport=transport, timeout=config.timeout) as client:
        for start in range(0, len(raw_keys), config.batch_size):
            batch = raw_keys[start: start + config.batch_size]
            payload = _post_batch(client, config, batch, sleep)
            if dimension is None:
                dimension = int(payload["dimension"])
            elif int(payload["dimension"]) != dimension:
                raise DimensionMismatch(
                    f"endpoint switched dimension {dimension} -> {payload['dimension']}"
                )
            vectors = payload.get("vectors", {})
            missing = [raw for raw in batch if raw not in vectors]
            if missing:
                raise PartialResponse([_decode_key(r, key_mode) for r in missing])
            for raw in batch:
                vector = np.asarray(vectors[raw], dtype=np.float32)
                if vector.shape != (dimension,):
                    raise DimensionMismatch(
                        f"endpoint returned dimension {vector.shape} for {raw!r}, "
                        f"advertised {dimension}"
                    )
                key = _decode_key(raw, key_mode)
                if not np.all(np.isfinite(vector)):
                    raise NonFiniteVector(key)
                records.append(EmbeddingRecord(key=key, vector=vector))
    return records


def _post_batch(client, config: EmbedderConfig, batch: list[str], sleep) -> dict:
    import httpx

    last_error = None
    for attempt in range(config.max_retries + 1):
        if attempt:
            sleep(min(config.backoff_base * (2 ** (attempt - 1)), config.backoff_cap))
        try:
            response = client.post(config.endpoint, json={"keys": batch})
        except httpx.TransportError as e:
            last_error = e
            continue
        if response.status_code >= 500:
            last_error = RuntimeError(f"HTTP {response.status_code}")
            continue
        if response.status_code != 200:
            raise EndpointUnreachable(
                f"embedder returned HTTP {response.status_code}: {response.text[:200]}"
            )
        return response.json()
    raise EndpointUnreachable(
        f"embedder unreachable after {config.max_retries + 1} attempts: {last_error}"
    )
