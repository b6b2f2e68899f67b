"""Checkpoint files: byte-exact round-trips, corruption, resume-through-disk."""

import numpy as np
import pytest

from caprank.errors import CorruptCheckpoint, IncompatibleArchitecture
from caprank.pairs import ComparisonPair
from caprank.reward import (
    HeadArchitecture,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

ARCH = HeadArchitecture(layer_widths=(6, 10, 4), dropout_rates=(0.2,))


def _trained_checkpoint(updates=30, seed=0):
    rng = np.random.default_rng(42)
    embeddings = {}
    pairs = []
    for i in range(6):
        img = f"img{i}"
        for cid in ("a", "b"):
            embeddings[(img, cid)] = rng.normal(size=6)
        pairs.append(ComparisonPair(img, "a", "b", f"r{i}"))
    config = TrainConfig(learning_rate=1e-3, total_updates=updates, seed=seed, batch_size=8)
    ckpt, _ = train(pairs, embeddings, config, architecture=ARCH)
    return ckpt, pairs, embeddings


class TestRoundTrip:
    def test_save_load_save_identical_bytes(self, tmp_path):
        ckpt, _, _ = _trained_checkpoint()
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(ckpt, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_state_matches(self, tmp_path):
        ckpt, _, _ = _trained_checkpoint()
        path = tmp_path / "x.ckpt"
        save_checkpoint(ckpt, path)
        loaded = load_checkpoint(path)
        assert loaded.architecture == ckpt.architecture
        assert loaded.parameters.equals(ckpt.parameters)
        assert loaded.optimizer.equals(ckpt.optimizer)
        assert loaded.update_count == ckpt.update_count
        assert loaded.rng_state == ckpt.rng_state
        assert loaded.config == ckpt.config

    def test_architecture_check(self, tmp_path):
        ckpt, _, _ = _trained_checkpoint()
        path = tmp_path / "x.ckpt"
        save_checkpoint(ckpt, path)
        other = HeadArchitecture(layer_widths=(6, 10, 5), dropout_rates=(0.2,))
        with pytest.raises(IncompatibleArchitecture):
            load_checkpoint(path, architecture=other)
        assert load_checkpoint(path, architecture=ARCH) is not None

    def test_corrupt_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_corrupt_payload_fails_checksum(self, tmp_path):
        ckpt, _, _ = _trained_checkpoint()
        path = tmp_path / "x.ckpt"
        save_checkpoint(ckpt, path)
        data = bytearray(path.read_bytes())
        data[len(data) // 2] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        ckpt, _, _ = _trained_checkpoint()
        path = tmp_path / "x.ckpt"
        save_checkpoint(ckpt, path)
        path.write_bytes(path.read_bytes()[:50])
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(path)


class TestResumeThroughDisk:
    def test_resume_after_reload_matches_uninterrupted(self, tmp_path):
        full, pairs, embeddings = _trained_checkpoint(updates=50, seed=7)

        first, _, _ = _trained_checkpoint(updates=30, seed=7)
        path = tmp_path / "mid.ckpt"
        save_checkpoint(first, path)
        reloaded = load_checkpoint(path)
        resumed, _ = train(
            pairs,
            embeddings,
            TrainConfig(learning_rate=1e-3, total_updates=20, seed=7, batch_size=8),
            resume_from=reloaded,
        )
        assert resumed.parameters.equals(full.parameters)
        assert resumed.optimizer.equals(full.optimizer)
