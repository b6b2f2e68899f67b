"""Reward-head training loop: AdamW on the mean pairwise ranking loss.

Embeddings are fixed inputs (the frozen backbone never enters the loop),
so training reduces to minibatch updates over comparison pairs. One rng
stream, seeded from the config, drives initialization, batch sampling,
and dropout masks in a fixed order; checkpoints capture that stream's
state, which makes an interrupted-and-resumed run bit-identical to an
uninterrupted one on the same platform.

Batches are drawn with replacement, realizing the loss expectation as a
uniform mean over sampled pairs. The optional per-image weighting instead
scales each pair by the inverse of its image's pair count so every image
contributes equally regardless of how many captions it carries.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import DivergedTraining, InvalidField, MissingEmbedding, NonFiniteActivation, NonFiniteLoss
from ..pairs import ComparisonPair
from .adamw import AdamWState, adamw_step
from .checkpoint import Checkpoint
from .head import (
    HeadArchitecture,
    HeadParameters,
    forward_batch,
    init_parameters,
    make_dropout_masks,
)
from .loss import pair_loss_batch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 64
    total_updates: int = 20_000
    seed: int = 0
    dropout_enabled: bool = True
    shared_dropout_mask: bool = False
    per_image_weighting: bool = False
    log_every: int = 100

    def __post_init__(self):
        # zero is tolerated so a dry run can prove updates are a no-op
        if self.learning_rate < 0:
            raise InvalidField("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidField("batch_size must be >= 1")
        for beta in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < beta < 1.0:
                raise InvalidField("adam betas must lie in (0, 1)")
        if self.total_updates < 0:
            raise InvalidField("total_updates must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def _pair_key(pair: ComparisonPair, which: str) -> tuple[str, str]:
    cid = pair.preferred_caption_id if which == "pref" else pair.dispreferred_caption_id
    return (pair.image_id, cid)


def _gather_matrix(
    pairs: Sequence[ComparisonPair], embeddings: Mapping, dim_hint: int | None = None
):
    """Stack pair embeddings into (preferred, dispreferred) float64 matrices."""
    missing = []
    for p in pairs:
        for which in ("pref", "disp"):
            if _pair_key(p, which) not in embeddings:
                missing.append(_pair_key(p, which))
    if missing:
        raise MissingEmbedding(sorted(set(missing)))
    pref = np.stack([np.asarray(embeddings[_pair_key(p, "pref")], dtype=np.float64) for p in pairs])
    disp = np.stack([np.asarray(embeddings[_pair_key(p, "disp")], dtype=np.float64) for p in pairs])
    return pref, disp


def pairwise_accuracy(
    arch: HeadArchitecture,
    params: HeadParameters,
    pairs: Sequence[ComparisonPair],
    embeddings: Mapping,
    batch: int = 4096,
) -> float:
    """Fraction of pairs whose preferred side scores strictly higher (eval mode)."""
    if not pairs:
        raise InvalidField("pairwise_accuracy needs at least one pair")
    correct = 0
    for start in range(0, len(pairs), batch):
        chunk = pairs[start: start + batch]
        pref, disp = _gather_matrix(chunk, embeddings)
        r_pref = forward_batch(arch, params, pref)
        r_disp = forward_batch(arch, params, disp)
        correct += int(np.sum(r_pref > r_disp))
    return correct / len(pairs)


def train(
    pairs: Sequence[ComparisonPair],
    embeddings: Mapping,
    config: TrainConfig,
    architecture: HeadArchitecture | None = None,
    holdout_pairs: Sequence[ComparisonPair] | None = None,
    resume_from: Checkpoint | None = None,
    log_sink: Callable[[dict], None] | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Run ``config.total_updates`` AdamW steps; returns (checkpoint, log).

    The log holds one entry per ``log_every`` updates with the mean train
    loss over that window and, when holdout pairs are supplied, the
    holdout pairwise accuracy at that point. ``resume_from`` continues a
    previous run: parameters, optimizer moments, rng state, and the update
    counter all pick up where the checkpoint left off.
    """
    if not pairs:
        raise InvalidField("cannot train on an empty pair list")

    if resume_from is not None:
        architecture = resume_from.architecture
        params = resume_from.parameters.copy()
        opt = resume_from.optimizer.copy()
        rng = np.random.default_rng()
        rng.bit_generator.state = resume_from.rng_state
        start_update = resume_from.update_count
    else:
        if architecture is None:
            some_key = _pair_key(pairs[0], "pref")
            if some_key not in embeddings:
                raise MissingEmbedding([some_key])
            architecture = HeadArchitecture.default_for_dim(
                int(np.asarray(embeddings[some_key]).shape[0])
            )
        rng = np.random.default_rng(config.seed)
        params = init_parameters(architecture, rng)
        opt = AdamWState(params)
        start_update = 0

    pref_all, disp_all = _gather_matrix(pairs, embeddings)
    if pref_all.shape[1] != architecture.input_dim:
        raise InvalidField(
            f"embedding dimension {pref_all.shape[1]} does not match "
            f"head input width {architecture.input_dim}"
        )

    weights_all = None
    if config.per_image_weighting:
        counts: dict[str, int] = {}
        for p in pairs:
            counts[p.image_id] = counts.get(p.image_id, 0) + 1
        weights_all = np.array([1.0 / counts[p.image_id] for p in pairs])

    n_pairs = len(pairs)
    log: list[dict] = []
    window_losses: list[float] = []

    def emit_log(update: int):
        entry: dict = {
            "update": update,
            "mean_loss": float(np.mean(window_losses)) if window_losses else None,
        }
        if holdout_pairs:
            entry["holdout_pairwise_accuracy"] = pairwise_accuracy(
                architecture, params, holdout_pairs, embeddings
            )
        log.append(entry)
        if log_sink is not None:
            log_sink(entry)
        window_losses.clear()

    update = start_update
    for update in range(start_update + 1, start_update + config.total_updates + 1):
        idx = rng.integers(0, n_pairs, size=config.batch_size)
        batch_pref = pref_all[idx]
        batch_disp = disp_all[idx]

        masks_pref = masks_disp = None
        if config.dropout_enabled and any(r > 0 for r in architecture.dropout_rates):
            masks_pref = make_dropout_masks(architecture, rng, config.batch_size)
            if config.shared_dropout_mask:
                masks_disp = masks_pref
            else:
                masks_disp = make_dropout_masks(architecture, rng, config.batch_size)

        batch_weights = None
        if weights_all is not None:
            batch_weights = weights_all[idx]
            batch_weights = batch_weights / batch_weights.sum()

        try:
            loss, grads, _ = pair_loss_batch(
                architecture,
                params,
                batch_pref,
                batch_disp,
                weights=batch_weights,
                masks_preferred=masks_pref,
                masks_dispreferred=masks_disp,
            )
        except (NonFiniteLoss, NonFiniteActivation) as e:
            # abort with the last finite state: the bad update is not applied
            raise DivergedTraining(
                update,
                checkpoint=_snapshot(architecture, params, opt, update - 1, rng, config),
            ) from e

        window_losses.append(loss)
        adamw_step(
            params,
            grads,
            opt,
            lr=config.learning_rate,
            beta1=config.adam_beta1,
            beta2=config.adam_beta2,
            eps=config.adam_epsilon,
            weight_decay=config.weight_decay,
        )

        if update % config.log_every == 0:
            emit_log(update)

    if window_losses or config.total_updates == 0:
        emit_log(update if config.total_updates else start_update)

    return _snapshot(architecture, params, opt, update, rng, config), log


def _snapshot(arch, params, opt, update, rng, config: TrainConfig) -> Checkpoint:
    return Checkpoint(
        architecture=arch,
        parameters=params.copy(),
        optimizer=opt.copy(),
        update_count=update,
        rng_state=rng.bit_generator.state,
        config=config.to_dict(),
    )
