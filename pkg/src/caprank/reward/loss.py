"""Pairwise ranking loss: -log sigmoid(reward(preferred) - reward(dispreferred)).

Implemented in the numerically stable softplus form
log(1 + exp(-delta)) = logaddexp(0, -delta), which stays finite for any
finite reward gap. The gradient flows through both forward passes:
d loss / d delta = sigmoid(delta) - 1.
"""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteLoss
from .head import HeadArchitecture, HeadParameters, backward_cached, forward_cached


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def pair_loss_batch(
    arch: HeadArchitecture,
    params: HeadParameters,
    emb_preferred: np.ndarray,
    emb_dispreferred: np.ndarray,
    weights: np.ndarray | None = None,
    masks_preferred=None,
    masks_dispreferred=None,
):
    """Weighted mean pair loss and its parameter gradients for a batch.

    ``weights`` must sum to 1 (uniform 1/B when omitted). Dropout masks, if
    given, are applied to the respective forward passes and their effect is
    reflected in the gradients. Returns ``(loss, (grad_w, grad_b), deltas)``.
    """
    emb_preferred = np.asarray(emb_preferred, dtype=np.float64)
    emb_dispreferred = np.asarray(emb_dispreferred, dtype=np.float64)
    batch = emb_preferred.shape[0]
    if weights is None:
        weights = np.full(batch, 1.0 / batch)

    r_pref, cache_pref = forward_cached(arch, params, emb_preferred, masks_preferred)
    r_disp, cache_disp = forward_cached(arch, params, emb_dispreferred, masks_dispreferred)
    deltas = r_pref - r_disp
    losses = softplus(-deltas)
    loss = float(np.dot(weights, losses))
    if not np.isfinite(loss):
        bad = deltas[~np.isfinite(losses)]
        raise NonFiniteLoss(bad[0] if bad.size else loss)

    dloss_ddelta = (stable_sigmoid(deltas) - 1.0) * weights
    gw_pref, gb_pref = backward_cached(arch, params, cache_pref, dloss_ddelta)
    gw_disp, gb_disp = backward_cached(arch, params, cache_disp, -dloss_ddelta)
    grad_w = [a + b for a, b in zip(gw_pref, gw_disp)]
    grad_b = [a + b for a, b in zip(gb_pref, gb_disp)]
    return loss, (grad_w, grad_b), deltas


def pair_loss(
    arch: HeadArchitecture,
    params: HeadParameters,
    emb_preferred: np.ndarray,
    emb_dispreferred: np.ndarray,
):
    """Loss and gradients for a single comparison pair (eval-mode forwards)."""
    loss, grads, _ = pair_loss_batch(
        arch,
        params,
        np.asarray(emb_preferred, dtype=np.float64)[None, :],
        np.asarray(emb_dispreferred, dtype=np.float64)[None, :],
    )
    return loss, grads
