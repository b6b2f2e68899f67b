"""Embedding shards: binary round-trips, corruption detection, fetch client."""

import json
import struct

import httpx
import numpy as np
import pytest

from caprank.embeddings import (
    EmbedderConfig,
    EmbeddingRecord,
    fetch_embeddings,
    load_shard_mapping,
    read_shard,
    write_shard,
    write_shard_jsonl,
)
from caprank.errors import (
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


def _records(n, d, seed=0, key_fn=lambda i: f"p{i:05d}"):
    rng = np.random.default_rng(seed)
    return [
        EmbeddingRecord(key=key_fn(i), vector=rng.normal(size=d).astype(np.float32))
        for i in range(n)
    ]


class TestBinaryShard:
    def test_empty_shard_iterates_nothing(self, tmp_path):
        path = tmp_path / "empty.shard"
        summary = write_shard([], path, dimension=8)
        assert summary["count"] == 0
        reader = read_shard(path)
        assert reader.header.record_count == 0
        assert list(reader) == []

    def test_roundtrip_is_bitwise(self, tmp_path):
        records = _records(100, 16)
        path = tmp_path / "x.shard"
        write_shard(records, path, dimension=16)
        loaded = list(read_shard(path))
        assert [r.key for r in loaded] == [r.key for r in records]
        for a, b in zip(records, loaded):
            assert a.vector.tobytes() == b.vector.tobytes()

    def test_write_is_byte_deterministic(self, tmp_path):
        records = _records(50, 8)
        p1, p2 = tmp_path / "a.shard", tmp_path / "b.shard"
        s1 = write_shard(records, p1, dimension=8)
        s2 = write_shard(records, p2, dimension=8)
        assert p1.read_bytes() == p2.read_bytes()
        assert s1["checksum"] == s2["checksum"]

    def test_image_caption_keys(self, tmp_path):
        records = _records(10, 4, key_fn=lambda i: (f"img{i}", f"cap{i}"))
        path = tmp_path / "ic.shard"
        write_shard(records, path, dimension=4)
        dim, mapping = load_shard_mapping(path)
        assert dim == 4
        assert ("img3", "cap3") in mapping

    def test_wrong_dimension_names_key(self, tmp_path):
        records = _records(3, 8)
        records.append(EmbeddingRecord(key="bad", vector=np.zeros(7, dtype=np.float32)))
        with pytest.raises(DimensionMismatch) as err:
            write_shard(records, tmp_path / "x.shard", dimension=8)
        assert "bad" in str(err.value)

    def test_duplicate_key_rejected(self, tmp_path):
        records = _records(2, 4, key_fn=lambda i: "same")
        with pytest.raises(DuplicateKey):
            write_shard(records, tmp_path / "x.shard", dimension=4)

    def test_nonfinite_vector_rejected_at_write(self, tmp_path):
        bad = EmbeddingRecord(key="k", vector=np.array([1, np.nan], dtype=np.float32))
        with pytest.raises(NonFiniteVector):
            write_shard([bad], tmp_path / "x.shard", dimension=2)

    def test_truncation_detected_at_computed_offset(self, tmp_path):
        records = _records(20, 8)
        path = tmp_path / "x.shard"
        write_shard(records, path, dimension=8)
        data = path.read_bytes()
        cut = len(data) - 8 - 5 * 8 * 4 - 3  # mid-way through record 15
        path.write_bytes(data[:cut])
        with pytest.raises(TruncatedShard) as err:
            read_shard(path)
        assert err.value.byte_offset == cut

    def test_bit_flip_fails_checksum(self, tmp_path):
        records = _records(5, 4)
        path = tmp_path / "x.shard"
        write_shard(records, path, dimension=4)
        data = bytearray(path.read_bytes())
        data[-20] ^= 0x01  # corrupt payload without changing length
        path.write_bytes(bytes(data))
        with pytest.raises((CorruptShard, NonFiniteVector)):
            list(read_shard(path))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.shard"
        path.write_bytes(b"\x00\x01\x02\x03\x04\x05\x06\x07" + b"rest")
        with pytest.raises(BadMagic):
            read_shard(path)

    def test_expected_dimension_mismatch(self, tmp_path):
        path = tmp_path / "x.shard"
        write_shard(_records(3, 8), path, dimension=8)
        with pytest.raises(DimensionMismatch):
            read_shard(path, expected_dimension=16)

    def test_block_reads_match_streaming(self, tmp_path):
        records = _records(32, 8)
        path = tmp_path / "x.shard"
        write_shard(records, path, dimension=8)
        reader = read_shard(path)
        block = reader.read_vector_block(10, 5)
        expected = np.stack([records[10 + i].vector for i in range(5)])
        assert np.array_equal(block, expected)
        reader.close()

    def test_large_roundtrip_with_checksum(self, tmp_path):
        # scaled-down analogue of a million-record shard: same layout,
        # enough records that offsets and streaming are truly exercised
        records = _records(200_000, 4)
        path = tmp_path / "big.shard"
        summary = write_shard(records, path, dimension=4)
        assert summary["count"] == 200_000
        count = 0
        for rec, orig in zip(read_shard(path), records):
            assert rec.vector.tobytes() == orig.vector.tobytes()
            count += 1
        assert count == 200_000


class TestJsonlShard:
    def test_roundtrip(self, tmp_path):
        records = _records(20, 6)
        path = tmp_path / "x.jsonl"
        write_shard_jsonl(records, path, dimension=6)
        loaded = list(read_shard(path))
        assert [r.key for r in loaded] == [r.key for r in records]
        for a, b in zip(records, loaded):
            assert np.allclose(a.vector, b.vector)

    def test_record_limit(self, tmp_path):
        with pytest.raises(InvalidField):
            write_shard_jsonl(_records(100_001, 1), tmp_path / "x.jsonl", dimension=1)

    def test_count_mismatch_detected(self, tmp_path):
        path = tmp_path / "x.jsonl"
        write_shard_jsonl(_records(5, 2), path, dimension=2)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(CorruptShard):
            list(read_shard(path))


class _StubEmbedder:
    """httpx MockTransport handler returning deterministic vectors."""

    def __init__(self, dimension=4, fail_first=0, omit=(), respond_dimension=None):
        self.dimension = dimension
        self.fail_first = fail_first
        self.omit = set(omit)
        self.respond_dimension = respond_dimension or dimension
        self.calls = 0

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.calls += 1
        if self.calls <= self.fail_first:
            return httpx.Response(503, text="warming up")
        keys = json.loads(request.content)["keys"]
        vectors = {
            k: [float(len(k) + i) for i in range(self.respond_dimension)]
            for k in keys
            if k not in self.omit
        }
        return httpx.Response(200, json={"dimension": self.dimension, "vectors": vectors})


class TestFetchClient:
    def _config(self, **kw):
        return EmbedderConfig(endpoint="http://embedder.test/embed", backoff_base=0.0, **kw)

    def test_empty_keys_rejected(self):
        with pytest.raises(InvalidField):
            fetch_embeddings(self._config(), [])

    def test_fetch_matches_stub_payload(self):
        stub = _StubEmbedder(dimension=3)
        records = fetch_embeddings(
            self._config(batch_size=2),
            ["k1", "k2", "longkey"],
            transport=httpx.MockTransport(stub),
        )
        assert [r.key for r in records] == ["k1", "k2", "longkey"]
        assert records[2].vector.tolist() == [7.0, 8.0, 9.0]
        assert stub.calls == 2  # batched

    def test_partial_response_lists_missing(self):
        stub = _StubEmbedder(omit={"k2"})
        with pytest.raises(PartialResponse) as err:
            fetch_embeddings(
                self._config(), ["k1", "k2"], transport=httpx.MockTransport(stub)
            )
        assert err.value.missing_keys == ["k2"]

    def test_dimension_mismatch_from_endpoint(self):
        stub = _StubEmbedder(dimension=4, respond_dimension=2)
        with pytest.raises(DimensionMismatch):
            fetch_embeddings(self._config(), ["k1"], transport=httpx.MockTransport(stub))

    def test_transient_errors_retried_with_backoff(self):
        stub = _StubEmbedder(fail_first=2)
        sleeps = []
        records = fetch_embeddings(
            EmbedderConfig(
                endpoint="http://embedder.test/embed",
                max_retries=3,
                backoff_base=0.1,
                backoff_cap=0.15,
            ),
            ["k1"],
            transport=httpx.MockTransport(stub),
            sleep=sleeps.append,
        )
        assert len(records) == 1
        assert sleeps == [0.1, 0.15]  # exponential, capped

    def test_unreachable_after_retries(self):
        stub = _StubEmbedder(fail_first=99)
        with pytest.raises(EndpointUnreachable):
            fetch_embeddings(
                self._config(max_retries=2),
                ["k1"],
                transport=httpx.MockTransport(stub),
                sleep=lambda s: None,
            )

    def test_tuple_keys_roundtrip(self):
        stub = _StubEmbedder(dimension=2)
        records = fetch_embeddings(
            self._config(),
            [("img1", "cap1")],
            transport=httpx.MockTransport(stub),
        )
        assert records[0].key == ("img1", "cap1")
