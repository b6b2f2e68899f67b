"""Training loop: learnability, chance-level control, determinism, resume."""

import numpy as np
import pytest

from caprank.errors import DivergedTraining, MissingEmbedding
from caprank.pairs import ComparisonPair
from caprank.reward import (
    HeadArchitecture,
    TrainConfig,
    pairwise_accuracy,
    train,
)


def _linear_world(n_images=60, k=5, d=12, seed=0, coin_flip=False):
    """Embeddings whose hidden-direction projection encodes the ranking."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)
    w /= np.linalg.norm(w)
    embeddings = {}
    pairs = []
    for i in range(n_images):
        img = f"img{i:03d}"
        targets = np.sort(rng.uniform(-2, 2, size=k))[::-1]
        targets += np.arange(k)[::-1] * 0.1  # enforce >= 0.1 margins
        ranked = []
        for pos in range(k):
            cid = f"c{pos}"
            base = rng.normal(size=d)
            embeddings[(img, cid)] = base + (targets[pos] - w @ base) * w
            ranked.append(cid)
        for a in range(k):
            for b in range(a + 1, k):
                pref, disp = ranked[a], ranked[b]
                if coin_flip and rng.random() < 0.5:
                    pref, disp = disp, pref
                pairs.append(ComparisonPair(img, pref, disp, f"r-{img}"))
    return embeddings, pairs


def _split_by_image(pairs, holdout_prefixes):
    train_p = [p for p in pairs if not p.image_id.startswith(holdout_prefixes)]
    hold_p = [p for p in pairs if p.image_id.startswith(holdout_prefixes)]
    return train_p, hold_p


SMALL_ARCH = HeadArchitecture(layer_widths=(12, 32, 16), dropout_rates=(0.1,))
FAST = dict(batch_size=32, log_every=200)


class TestLearnability:
    def test_separable_preferences_are_learned(self):
        embeddings, pairs = _linear_world()
        train_p, hold_p = _split_by_image(pairs, ("img00", "img01"))
        config = TrainConfig(learning_rate=1e-3, total_updates=2000, seed=1, **FAST)
        ckpt, log = train(train_p, embeddings, config, architecture=SMALL_ARCH, holdout_pairs=hold_p)
        assert log[-1]["holdout_pairwise_accuracy"] >= 0.95
        assert ckpt.update_count == 2000

    def test_coin_flipped_labels_stay_at_chance(self):
        embeddings, pairs = _linear_world(coin_flip=True, seed=5)
        train_p, hold_p = _split_by_image(pairs, ("img00", "img01"))
        config = TrainConfig(learning_rate=1e-3, total_updates=600, seed=1, **FAST)
        ckpt, _ = train(train_p, embeddings, config, architecture=SMALL_ARCH)
        acc = pairwise_accuracy(SMALL_ARCH, ckpt.parameters, hold_p, embeddings)
        assert 0.38 <= acc <= 0.62  # 200 holdout pairs: generous chance band

    def test_loss_decreases(self):
        embeddings, pairs = _linear_world()
        config = TrainConfig(learning_rate=1e-3, total_updates=400, seed=0, **FAST)
        _, log = train(pairs, embeddings, config, architecture=SMALL_ARCH)
        assert log[-1]["mean_loss"] < log[0]["mean_loss"]


class TestContracts:
    def test_zero_learning_rate_is_identity(self):
        embeddings, pairs = _linear_world(n_images=8)
        config = TrainConfig(learning_rate=0.0, total_updates=50, seed=3, **FAST)
        ckpt, _ = train(pairs, embeddings, config, architecture=SMALL_ARCH)
        rng = np.random.default_rng(config.seed)
        from caprank.reward import init_parameters

        initial = init_parameters(SMALL_ARCH, rng)
        assert ckpt.parameters.equals(initial)

    def test_missing_embedding_lists_offender(self):
        embeddings, pairs = _linear_world(n_images=4)
        del embeddings[("img002", "c1")]
        with pytest.raises(MissingEmbedding) as err:
            train(pairs, embeddings, TrainConfig(total_updates=1), architecture=SMALL_ARCH)
        assert ("img002", "c1") in err.value.keys

    def test_diverged_training_carries_last_finite_checkpoint(self):
        embeddings, pairs = _linear_world(n_images=8)
        config = TrainConfig(learning_rate=1e18, total_updates=500, seed=0, **FAST)
        with pytest.raises(DivergedTraining) as err, np.errstate(over="ignore", invalid="ignore"):
            train(pairs, embeddings, config, architecture=SMALL_ARCH)
        ckpt = err.value.checkpoint
        assert ckpt is not None
        assert ckpt.parameters.all_finite()
        assert ckpt.update_count == err.value.update - 1

    def test_default_architecture_derived_from_embeddings(self):
        embeddings, pairs = _linear_world(n_images=6)
        config = TrainConfig(total_updates=1, batch_size=4)
        ckpt, _ = train(pairs, embeddings, config)
        assert ckpt.architecture.layer_widths == (12, 1024, 128, 64, 16)

    def test_per_image_weighting_runs(self):
        embeddings, pairs = _linear_world(n_images=8)
        config = TrainConfig(
            learning_rate=1e-3, total_updates=30, seed=0, per_image_weighting=True, **FAST
        )
        ckpt, _ = train(pairs, embeddings, config, architecture=SMALL_ARCH)
        assert ckpt.parameters.all_finite()

    def test_shared_dropout_mask_mode_differs(self):
        embeddings, pairs = _linear_world(n_images=8)
        base = dict(learning_rate=1e-3, total_updates=40, seed=2, **FAST)
        ckpt_ind, _ = train(
            pairs, embeddings, TrainConfig(**base), architecture=SMALL_ARCH
        )
        ckpt_shared, _ = train(
            pairs,
            embeddings,
            TrainConfig(shared_dropout_mask=True, **base),
            architecture=SMALL_ARCH,
        )
        assert not ckpt_ind.parameters.equals(ckpt_shared.parameters)


class TestDeterminism:
    def test_same_seed_bitwise_identical(self):
        embeddings, pairs = _linear_world(n_images=10)
        config = TrainConfig(learning_rate=1e-3, total_updates=80, seed=9, **FAST)
        c1, _ = train(pairs, embeddings, config, architecture=SMALL_ARCH)
        c2, _ = train(pairs, embeddings, config, architecture=SMALL_ARCH)
        assert c1.parameters.equals(c2.parameters)
        assert c1.optimizer.equals(c2.optimizer)
        assert c1.rng_state == c2.rng_state

    def test_different_seed_differs(self):
        embeddings, pairs = _linear_world(n_images=10)
        base = dict(learning_rate=1e-3, total_updates=80, **FAST)
        c1, _ = train(pairs, embeddings, TrainConfig(seed=1, **base), architecture=SMALL_ARCH)
        c2, _ = train(pairs, embeddings, TrainConfig(seed=2, **base), architecture=SMALL_ARCH)
        assert not c1.parameters.equals(c2.parameters)

    def test_resume_equals_uninterrupted(self):
        embeddings, pairs = _linear_world(n_images=10)
        full_config = TrainConfig(learning_rate=1e-3, total_updates=120, seed=4, **FAST)
        full, _ = train(pairs, embeddings, full_config, architecture=SMALL_ARCH)

        first_config = TrainConfig(learning_rate=1e-3, total_updates=70, seed=4, **FAST)
        first, _ = train(pairs, embeddings, first_config, architecture=SMALL_ARCH)
        second_config = TrainConfig(learning_rate=1e-3, total_updates=50, seed=4, **FAST)
        resumed, _ = train(pairs, embeddings, second_config, resume_from=first)

        assert resumed.update_count == full.update_count == 120
        assert resumed.parameters.equals(full.parameters)
        assert resumed.optimizer.equals(full.optimizer)
        assert resumed.rng_state == full.rng_state
