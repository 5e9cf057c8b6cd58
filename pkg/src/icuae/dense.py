"""Fixed-length-input autoencoders over concatenated hourly feature vectors.

An interval of ``h`` hours with 30 features becomes one flat row of
``h * 30`` values; the bottleneck width follows the divide-by-10 rule
(:func:`embedding_dim`). One-hidden-layer models are ``input -> e -> input``;
two-hidden-layer models expand to the mirrored stack
``input -> h1 -> e -> h1 -> input``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .numeric import (
    ActivationKind,
    activation_derivative,
    apply_activation,
    as_matrix,
)


def embedding_dim(interval_hours: int, num_features: int) -> int:
    """Bottleneck width for a window: ceil(interval * features / 10)."""
    if interval_hours <= 0 or num_features <= 0:
        raise ConfigError(
            f"interval_hours and num_features must be positive, "
            f"got {interval_hours} and {num_features}")
    return math.ceil(interval_hours * num_features / 10)


@dataclass
class DenseLayer:
    weights: np.ndarray  # in_dim x out_dim
    bias: np.ndarray  # out_dim
    activation: ActivationKind

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("DenseLayer expects 2-D weights and 1-D bias",
                             self.weights.shape, self.bias.shape)
        if self.bias.shape[0] != self.weights.shape[1]:
            raise ShapeError("bias length must equal weight columns",
                             self.bias.shape, self.weights.shape)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class DenseAutoencoder:
    layers: List[DenseLayer]
    input_dim: int
    embedding_index: int

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("autoencoder needs at least one layer")
        if not 0 <= self.embedding_index < len(self.layers):
            raise ConfigError(f"embedding_index {self.embedding_index} out of range")
        if self.layers[0].in_dim != self.input_dim:
            raise ShapeError("first layer must accept input_dim",
                             (self.input_dim,), self.layers[0].weights.shape)
        if self.layers[-1].out_dim != self.input_dim:
            raise ShapeError("last layer must emit input_dim",
                             (self.input_dim,), self.layers[-1].weights.shape)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError("consecutive layer dims must chain",
                                 a.weights.shape, b.weights.shape)
        for layer in self.layers[:-1]:
            if layer.activation is not ActivationKind.RELU:
                raise ConfigError("hidden layers must use ReLU")
        if self.layers[-1].activation is not ActivationKind.SIGMOID:
            raise ConfigError("output layer must use Sigmoid")

    @property
    def embedding_width(self) -> int:
        return self.layers[self.embedding_index].out_dim

    def parameters(self) -> List[np.ndarray]:
        """Live parameter arrays, [W0, b0, W1, b1, ...]; mutate to update."""
        out: List[np.ndarray] = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out


def glorot_uniform(rng: np.random.Generator, in_dim: int, out_dim: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(in_dim, out_dim))


def init_dense(input_dim: int, hidden_dims: Sequence[int], seed: int) -> DenseAutoencoder:
    """Build a Glorot-initialized autoencoder with 1 or 2 hidden widths.

    ``hidden_dims`` lists the encoder-side widths ending at the bottleneck;
    ``[e]`` gives input->e->input and ``[h1, e]`` the mirrored five-dim stack
    input->h1->e->h1->input. Widths must strictly decrease so the embedding
    is the narrowest layer.
    """
    hidden_dims = list(hidden_dims)
    if len(hidden_dims) not in (1, 2):
        raise ConfigError(f"expected 1 or 2 hidden widths, got {len(hidden_dims)}")
    if input_dim <= 0 or any(d <= 0 for d in hidden_dims):
        raise ConfigError(f"dimensions must be positive: {input_dim}, {hidden_dims}")
    widths = [input_dim, *hidden_dims]
    if any(a <= b for a, b in zip(widths, widths[1:])):
        raise ConfigError(f"hidden widths must strictly decrease from "
                          f"{input_dim}: {hidden_dims}")

    dims = widths + widths[-2::-1]  # mirror back up to input_dim
    embedding_index = len(hidden_dims) - 1
    rng = np.random.default_rng(seed)
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        act = ActivationKind.SIGMOID if i == len(dims) - 2 else ActivationKind.RELU
        layers.append(DenseLayer(weights=glorot_uniform(rng, d_in, d_out),
                                 bias=np.zeros(d_out), activation=act))
    return DenseAutoencoder(layers=layers, input_dim=input_dim,
                            embedding_index=embedding_index)


@dataclass
class DenseCache:
    """Forward-pass intermediates consumed by :func:`dense_backward`."""
    model_id: int
    inputs: List[np.ndarray] = field(default_factory=list)  # input to each layer
    pres: List[np.ndarray] = field(default_factory=list)  # pre-activation per layer
    output: np.ndarray = None  # type: ignore[assignment]


def dense_forward(model: DenseAutoencoder,
                  batch: np.ndarray) -> Tuple[np.ndarray, DenseCache]:
    """Run the full stack; returns reconstruction and backward cache."""
    x = as_matrix(batch, "batch")
    if x.shape[1] != model.input_dim:
        raise ShapeError("batch width must equal input_dim",
                         x.shape, (x.shape[0], model.input_dim))
    cache = DenseCache(model_id=id(model))
    for layer in model.layers:
        cache.inputs.append(x)
        pre = x @ layer.weights + layer.bias
        cache.pres.append(pre)
        x = apply_activation(layer.activation, pre)
    cache.output = x
    return x, cache


def dense_backward(model: DenseAutoencoder, cache: DenseCache,
                   target: np.ndarray) -> List[np.ndarray]:
    """Gradients of mse(reconstruction, target) in parameters() order."""
    if cache.model_id != id(model) or len(cache.pres) != len(model.layers):
        raise StateError("cache does not belong to this model")
    target = as_matrix(target, "target")
    if target.shape != cache.output.shape:
        raise ShapeError("target shape must match reconstruction",
                         target.shape, cache.output.shape)

    n_elem = cache.output.size
    d_out = 2.0 * (cache.output - target) / n_elem
    grads: List[np.ndarray] = [None] * (2 * len(model.layers))  # type: ignore[list-item]
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        d_pre = d_out * activation_derivative(layer.activation, cache.pres[i])
        grads[2 * i] = cache.inputs[i].T @ d_pre
        grads[2 * i + 1] = d_pre.sum(axis=0)
        if i > 0:
            d_out = d_pre @ layer.weights.T
    return grads


def dense_embed(model: DenseAutoencoder, batch: np.ndarray) -> np.ndarray:
    """Activations of the bottleneck layer, one row per sample."""
    x = as_matrix(batch, "batch")
    if x.shape[1] != model.input_dim:
        raise ShapeError("batch width must equal input_dim",
                         x.shape, (x.shape[0], model.input_dim))
    for layer in model.layers[:model.embedding_index + 1]:
        x = apply_activation(layer.activation, x @ layer.weights + layer.bias)
    return x
