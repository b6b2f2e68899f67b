"""AdamW with decoupled weight decay, specialized to head parameter lists.

Decay multiplies parameters by (1 - lr * weight_decay) before the moment
update is applied; bias vectors are exempt from decay, matching common
practice. Moment estimates live in float64 alongside the parameters so a
checkpointed optimizer resumes bit-identically.
"""

from __future__ import annotations

import numpy as np

from .head import HeadArchitecture, HeadParameters


class AdamWState:
    def __init__(self, params: HeadParameters):
        self.m_w = [np.zeros_like(w) for w in params.weights]
        self.v_w = [np.zeros_like(w) for w in params.weights]
        self.m_b = [np.zeros_like(b) for b in params.biases]
        self.v_b = [np.zeros_like(b) for b in params.biases]
        self.step = 0

    def copy(self) -> "AdamWState":
        dup = AdamWState.__new__(AdamWState)
        dup.m_w = [a.copy() for a in self.m_w]
        dup.v_w = [a.copy() for a in self.v_w]
        dup.m_b = [a.copy() for a in self.m_b]
        dup.v_b = [a.copy() for a in self.v_b]
        dup.step = self.step
        return dup

    def equals(self, other: "AdamWState") -> bool:
        arrays = lambda s: s.m_w + s.v_w + s.m_b + s.v_b
        return self.step == other.step and all(
            np.array_equal(a, b) for a, b in zip(arrays(self), arrays(other))
        )


def adamw_step(
    params: HeadParameters,
    grads: tuple[list[np.ndarray], list[np.ndarray]],
    state: AdamWState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
) -> None:
    """One in-place update of parameters and moment estimates."""
    grad_w, grad_b = grads
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step

    for i, g in enumerate(grad_w):
        if weight_decay:
            params.weights[i] *= 1.0 - lr * weight_decay
        m, v = state.m_w[i], state.v_w[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params.weights[i] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

    for i, g in enumerate(grad_b):
        m, v = state.m_b[i], state.v_b[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params.biases[i] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
