"""Pair generation: counts, tie handling, image-disjoint splits, pair files."""

import numpy as np
import pytest

from caprank.errors import CorruptLog, DegenerateRecord, EmptyStore
from caprank.pairs import (
    ComparisonPair,
    generate_dataset_pairs,
    generate_pairs,
    pair_count,
    read_pairs,
    write_pairs,
)
from caprank.store import CaptionCandidate, ImageEntry, PreferenceDataset

from conftest import make_record, make_store
from oracles import brute_force_pairs


def _store_with_k_captions(k):
    store = PreferenceDataset()
    store.add_image(ImageEntry("img", "u"))
    cids = [f"c{j:02d}" for j in range(k)]
    for cid in cids:
        store.add_caption(CaptionCandidate(cid, "img", f"text {cid}"))
    return store, cids


class TestCounts:
    @pytest.mark.parametrize("k,expected", [(8, 28), (10, 45)])
    def test_total_order_count_is_k_choose_2(self, k, expected):
        store, cids = _store_with_k_captions(k)
        rec = store.append_record(
            make_record(image_id="img", ranking=[(c,) for c in cids])
        )
        assert len(generate_pairs(rec)) == expected

    def test_group_sizes_3_2_1_yield_11(self):
        store, cids = _store_with_k_captions(6)
        rec = store.append_record(
            make_record(image_id="img", ranking=[tuple(cids[:3]), tuple(cids[3:5]), (cids[5],)])
        )
        assert len(generate_pairs(rec)) == 3 * 2 + 3 * 1 + 2 * 1 == 11

    def test_tie_produces_no_pair(self, store):
        rec = store.append_record(make_record(ranking=(("a", "b"), ("c",))))
        pairs = generate_pairs(rec)
        assert {(p.preferred_caption_id, p.dispreferred_caption_id) for p in pairs} == {
            ("a", "c"),
            ("b", "c"),
        }

    def test_single_caption_record_is_degenerate(self, store):
        rec = store.append_record(make_record(ranking=(("a",),)))
        with pytest.raises(DegenerateRecord):
            generate_pairs(rec)

    def test_count_law_random_groupings(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n_groups = int(rng.integers(2, 5))
            sizes = [int(rng.integers(1, 4)) for _ in range(n_groups)]
            k = sum(sizes)
            if k > 16:
                continue
            store, cids = _store_with_k_captions(k)
            it = iter(cids)
            ranking = [tuple(next(it) for _ in range(s)) for s in sizes]
            rec = store.append_record(make_record(image_id="img", ranking=ranking))
            pairs = generate_pairs(rec)
            assert len(pairs) == pair_count(sizes)
            assert [
                (p.preferred_caption_id, p.dispreferred_caption_id) for p in pairs
            ] == brute_force_pairs(ranking)

    def test_antisymmetry(self, store):
        rec = store.append_record(make_record(ranking=(("a",), ("b", "c"))))
        emitted = {(p.preferred_caption_id, p.dispreferred_caption_id) for p in generate_pairs(rec)}
        for i, j in emitted:
            assert (j, i) not in emitted


class TestSplit:
    def _filled_store(self, n_images=10):
        store = make_store(n_images=n_images)
        for i in range(n_images):
            store.append_record(make_record(image_id=f"img{i}", record_id=f"r{i}"))
        return store

    def test_zero_fraction_puts_everything_in_train(self):
        store = self._filled_store()
        train, holdout = generate_dataset_pairs(store, split_seed=0, holdout_fraction=0.0)
        assert holdout == []
        assert len(train) == 10 * 3  # C(3,2) per image

    def test_fraction_arithmetic_and_repeatability(self):
        store = self._filled_store(10)
        t1, h1 = generate_dataset_pairs(store, split_seed=42, holdout_fraction=0.2)
        t2, h2 = generate_dataset_pairs(store, split_seed=42, holdout_fraction=0.2)
        assert len({p.image_id for p in h1}) == 2
        assert (t1, h1) == (t2, h2)

    def test_split_is_image_disjoint_and_total(self):
        store = self._filled_store(12)
        train, holdout = generate_dataset_pairs(store, split_seed=7, holdout_fraction=0.25)
        train_images = {p.image_id for p in train}
        holdout_images = {p.image_id for p in holdout}
        assert train_images.isdisjoint(holdout_images)
        assert train_images | holdout_images == {f"img{i}" for i in range(12)}

    def test_degenerate_records_yield_no_pairs(self):
        store = make_store(n_images=2)
        store.append_record(make_record(image_id="img0", record_id="r0"))
        store.append_record(
            make_record(image_id="img1", record_id="r1", ranking=(("a", "b", "c"),))
        )
        train, _ = generate_dataset_pairs(store, split_seed=0)
        assert {p.image_id for p in train} == {"img0"}

    def test_empty_store_raises(self):
        store = make_store(n_images=1)
        with pytest.raises(EmptyStore):
            generate_dataset_pairs(store, split_seed=0)

    def test_max_pairs_per_image_cap(self):
        store = self._filled_store(4)
        train, _ = generate_dataset_pairs(store, split_seed=0, max_pairs_per_image=2)
        per_image = {}
        for p in train:
            per_image[p.image_id] = per_image.get(p.image_id, 0) + 1
        assert all(v == 2 for v in per_image.values())


class TestPairFile:
    def test_roundtrip(self, tmp_path, store):
        rec = store.append_record(make_record())
        pairs = generate_pairs(rec)
        path = tmp_path / "pairs.tsv"
        write_pairs(pairs, path)
        assert read_pairs(path) == pairs

    def test_bad_header(self, tmp_path):
        path = tmp_path / "pairs.tsv"
        path.write_text("wrong\n")
        with pytest.raises(CorruptLog):
            read_pairs(path)

    def test_bad_column_count(self, tmp_path):
        path = tmp_path / "pairs.tsv"
        path.write_text("#caprank-pairs v1\nimg\ta\tb\n")
        with pytest.raises(CorruptLog) as err:
            read_pairs(path)
        assert err.value.line_number == 2
