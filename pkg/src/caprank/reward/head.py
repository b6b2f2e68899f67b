"""The scalar reward MLP: architecture, parameters, forward and backward passes.

``layer_widths`` lists the input width followed by the hidden widths; the
default (768, 1024, 128, 64, 16) yields five weight matrices
768->1024->128->64->16->1 with a raw (unactivated) scalar output. Dropout
rates align to the gaps after the first layers: the default (0.2, 0.2, 0.1)
drops after layers 1-3 and nowhere else. All arithmetic is in float64 so
finite-difference gradient checks are tight; embeddings arrive as float32
and are upcast at the boundary.

Dropout is the inverted variant: keep mask scaled by 1/(1-rate) at train
time, identity at eval time, so eval needs no rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionMismatch, InvalidField, NonFiniteActivation

ACTIVATIONS = ("relu", "gelu", "tanh")

# tanh-form gelu constants; the derivative below matches this exact form
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


@dataclass(frozen=True)
class HeadArchitecture:
    layer_widths: tuple[int, ...] = (768, 1024, 128, 64, 16)
    dropout_rates: tuple[float, ...] = (0.2, 0.2, 0.1)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(self, "dropout_rates", tuple(float(r) for r in self.dropout_rates))
        if not self.layer_widths or any(w < 1 for w in self.layer_widths):
            raise InvalidField("layer widths must be positive integers")
        if any(not 0.0 <= r < 1.0 for r in self.dropout_rates):
            raise InvalidField("dropout rates must lie in [0, 1)")
        if len(self.dropout_rates) >= self.layer_count:
            raise InvalidField(
                f"{len(self.dropout_rates)} dropout rates do not fit "
                f"{self.layer_count} layers"
            )
        if self.activation not in ACTIVATIONS:
            raise InvalidField(f"activation must be one of {ACTIVATIONS}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def dims(self) -> tuple[int, ...]:
        """Widths of every interface, input through the scalar output."""
        return self.layer_widths + (1,)

    @property
    def layer_count(self) -> int:
        return len(self.layer_widths)

    def dropout_rate_after(self, layer: int) -> float:
        """Dropout applied after hidden layer ``layer`` (0-based), 0 if none."""
        if layer < len(self.dropout_rates):
            return self.dropout_rates[layer]
        return 0.0

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "dropout_rates": list(self.dropout_rates),
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadArchitecture":
        return cls(
            layer_widths=tuple(d["layer_widths"]),
            dropout_rates=tuple(d["dropout_rates"]),
            activation=d["activation"],
        )

    @classmethod
    def default_for_dim(cls, input_dim: int) -> "HeadArchitecture":
        """The canonical head with its input width swapped for ``input_dim``."""
        return cls(layer_widths=(input_dim, 1024, 128, 64, 16))


class HeadParameters:
    """Weight matrices and bias vectors, stored as float64 arrays."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        if len(self.weights) != len(self.biases):
            raise InvalidField("weights and biases must pair up layer by layer")

    @classmethod
    def shaped_like(cls, arch: HeadArchitecture, fill: float = 0.0) -> "HeadParameters":
        dims = arch.dims
        weights = [np.full((dims[i], dims[i + 1]), fill) for i in range(arch.layer_count)]
        biases = [np.full(dims[i + 1], fill) for i in range(arch.layer_count)]
        return cls(weights, biases)

    def matches(self, arch: HeadArchitecture) -> bool:
        dims = arch.dims
        if len(self.weights) != arch.layer_count:
            return False
        return all(
            w.shape == (dims[i], dims[i + 1]) and b.shape == (dims[i + 1],)
            for i, (w, b) in enumerate(zip(self.weights, self.biases))
        )

    @property
    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )

    def copy(self) -> "HeadParameters":
        return HeadParameters([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def equals(self, other: "HeadParameters") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights)) and all(
            np.array_equal(a, b) for a, b in zip(self.biases, other.biases)
        )


def init_parameters(arch: HeadArchitecture, rng: np.random.Generator) -> HeadParameters:
    """Fan-in-scaled uniform init (He bound sqrt(6/fan_in)), zero biases."""
    weights, biases = [], []
    dims = arch.dims
    for i in range(arch.layer_count):
        fan_in = dims[i]
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(dims[i], dims[i + 1])))
        biases.append(np.zeros(dims[i + 1]))
    return HeadParameters(weights, biases)


def zero_parameters(arch: HeadArchitecture) -> HeadParameters:
    return HeadParameters.shaped_like(arch, 0.0)


# ---- activations -------------------------------------------------------------

def _activate(arch: HeadArchitecture, z: np.ndarray) -> np.ndarray:
    if arch.activation == "relu":
        return np.maximum(z, 0.0)
    if arch.activation == "tanh":
        return np.tanh(z)
    inner = _GELU_C * (z + _GELU_A * z**3)
    return 0.5 * z * (1.0 + np.tanh(inner))


def _activate_grad(arch: HeadArchitecture, z: np.ndarray) -> np.ndarray:
    if arch.activation == "relu":
        return (z > 0.0).astype(np.float64)
    if arch.activation == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    inner = _GELU_C * (z + _GELU_A * z**3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * z**2)


# ---- dropout masks ------------------------------------------------------------

def make_dropout_masks(
    arch: HeadArchitecture, rng: np.random.Generator, batch: int
) -> list[np.ndarray | None]:
    """Inverted-dropout masks for each hidden layer of a batch, None where off."""
    masks: list[np.ndarray | None] = []
    dims = arch.dims
    for layer in range(arch.layer_count - 1):
        rate = arch.dropout_rate_after(layer)
        if rate > 0.0:
            keep = rng.random((batch, dims[layer + 1])) >= rate
            masks.append(keep.astype(np.float64) / (1.0 - rate))
        else:
            masks.append(None)
    return masks


# ---- forward / backward --------------------------------------------------------

def forward_cached(
    arch: HeadArchitecture,
    params: HeadParameters,
    x: np.ndarray,
    masks: list[np.ndarray | None] | None = None,
):
    """Batched forward returning ``(rewards, caches)`` for backprop.

    ``x`` is (batch, input_dim); rewards are (batch,). caches holds the
    layer inputs and pre-activations needed by :func:`backward_cached`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise DimensionMismatch(
            f"input of shape {x.shape} does not match head input width {arch.input_dim}"
        )
    if not params.matches(arch):
        raise DimensionMismatch("parameters do not match the head architecture")

    h = x
    layer_inputs = []
    pre_activations = []
    for layer in range(arch.layer_count):
        layer_inputs.append(h)
        z = h @ params.weights[layer] + params.biases[layer]
        if not np.all(np.isfinite(z)):
            raise NonFiniteActivation(layer)
        pre_activations.append(z)
        if layer < arch.layer_count - 1:
            h = _activate(arch, z)
            if masks is not None and masks[layer] is not None:
                h = h * masks[layer]
        else:
            h = z
    rewards = h[:, 0]
    return rewards, (layer_inputs, pre_activations, masks)


def backward_cached(
    arch: HeadArchitecture,
    params: HeadParameters,
    caches,
    upstream: np.ndarray,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Parameter gradients given d(loss)/d(reward) per batch row.

    Returns (weight grads, bias grads) shaped like the parameters; batch
    contributions are summed, so the caller owns any 1/B weighting (fold
    it into ``upstream``).
    """
    layer_inputs, pre_activations, masks = caches
    grad_w = [None] * arch.layer_count
    grad_b = [None] * arch.layer_count

    delta = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
    for layer in range(arch.layer_count - 1, -1, -1):
        grad_w[layer] = layer_inputs[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ params.weights[layer].T
            if masks is not None and masks[layer - 1] is not None:
                delta = delta * masks[layer - 1]
            delta = delta * _activate_grad(arch, pre_activations[layer - 1])
    return grad_w, grad_b


def forward_batch(
    arch: HeadArchitecture,
    params: HeadParameters,
    x: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Rewards for a (batch, input_dim) array; eval mode is deterministic."""
    masks = None
    if training:
        if rng is None:
            raise InvalidField("training-mode forward needs an rng for dropout masks")
        masks = make_dropout_masks(arch, rng, np.asarray(x).shape[0])
    rewards, _ = forward_cached(arch, params, x, masks)
    return rewards


def forward(
    arch: HeadArchitecture,
    params: HeadParameters,
    embedding: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """Scalar reward of one embedding."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d embedding, got shape {embedding.shape}")
    return float(forward_batch(arch, params, embedding[None, :], training, rng)[0])
