"""Dense feedforward networks evaluated on reals or on jets."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .autodiff import Jet2, check_activation, dense_jet, jet_activate


@dataclass
class DenseNet:
    """Tanh (by default) MLP with a linear output layer.

    ``weights[l]`` has shape ``(layer_dims[l+1], layer_dims[l])``. The flat
    parameter ordering is layer by layer, each layer's weight matrix in
    row-major order followed by its bias vector.
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        _check_dims(self.layer_dims)
        check_activation(self.activation)
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("one weight matrix and bias vector per layer required")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[l + 1], self.layer_dims[l])
            if W.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {l}: got W{W.shape}, b{b.shape}, expected W{shape}")

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_params(self) -> int:
        return param_count(self.layer_dims)

    def flatten(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts += [W.ravel(), b]
        return np.concatenate(parts)

    def with_params(self, flat: np.ndarray) -> "DenseNet":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {flat.shape}")
        weights, biases, k = [], [], 0
        for n_in, n_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            weights.append(flat[k:k + n_in * n_out].reshape(n_out, n_in).copy())
            k += n_in * n_out
            biases.append(flat[k:k + n_out].copy())
            k += n_out
        return DenseNet(self.layer_dims, weights, biases, self.activation)


def _check_dims(layer_dims: Sequence[int]) -> None:
    if len(layer_dims) < 2:
        raise ValueError("layer_dims needs at least an input and an output width")
    if any(d <= 0 for d in layer_dims):
        raise ValueError(f"layer widths must be positive, got {list(layer_dims)}")
    if layer_dims[-1] != 1:
        raise ValueError("the output layer must have width 1")


def param_count(layer_dims: Sequence[int]) -> int:
    return sum(n_out * n_in + n_out for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]))


def init(layer_dims: Sequence[int], activation: str = "tanh", seed: int = 0) -> DenseNet:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    layer_dims = tuple(int(d) for d in layer_dims)
    _check_dims(layer_dims)
    rng = np.random.default_rng(seed % 2**64)
    weights, biases = [], []
    for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return DenseNet(layer_dims, weights, biases, activation)


def forward(net: DenseNet, inputs: Sequence[float]) -> float:
    h = np.asarray(inputs, dtype=np.float64)
    if h.shape != (net.n_inputs,):
        raise ValueError(f"expected {net.n_inputs} inputs, got {h.shape[0] if h.ndim else 1}")
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = W @ h + b
        if l < last:
            h = jet_activate(Jet2(h), net.activation).value
    return float(h[0])


def _jet_affine(W: np.ndarray, b: np.ndarray, h: Jet2) -> Jet2:
    return Jet2(W @ h.value + b, W @ h.d_t, W @ h.d_x, W @ h.d_xx)


def jet_forward(net: DenseNet, t: float, x: float, extra: Sequence[Jet2] = ()) -> Jet2:
    """Output jet with inputs seeded as t -> (t,1,0,0), x -> (x,0,1,0)."""
    if 2 + len(extra) != net.n_inputs:
        raise ValueError(f"network takes {net.n_inputs} inputs, got 2 + {len(extra)}")
    inputs = [Jet2.t_coordinate(t), Jet2.x_coordinate(x), *extra]
    h = Jet2(*(np.array([float(getattr(j, s)) for j in inputs])
               for s in ("value", "d_t", "d_x", "d_xx")))
    last = len(net.weights) - 1
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        h = _jet_affine(W, b, h)
        if l < last:
            h = jet_activate(h, net.activation)
    return Jet2(float(h.value[0]), float(h.d_t[0]), float(h.d_x[0]), float(h.d_xx[0]))


# ---------------------------------------------------------------------------
# Batched evaluation on torch tensors
# ---------------------------------------------------------------------------

TorchLayers = list[tuple[torch.Tensor, torch.Tensor]]


def torch_layers(net: DenseNet, flat: torch.Tensor | None = None) -> TorchLayers:
    """(W, b) tensors of ``net``; views into ``flat`` when given."""
    if flat is None:
        flat = torch.from_numpy(net.flatten())
    layers, k = [], 0
    for n_in, n_out in zip(net.layer_dims[:-1], net.layer_dims[1:]):
        W = flat[k:k + n_in * n_out].view(n_out, n_in)
        k += n_in * n_out
        layers.append((W, flat[k:k + n_out]))
        k += n_out
    return layers


def batch_jet_forward(layers: TorchLayers, J: torch.Tensor, activation: str = "tanh") -> torch.Tensor:
    """Network on a slot-major batched jet ``(S, N, n_in)`` -> ``(S, N, 1)``."""
    last = len(layers) - 1
    for l, (W, b) in enumerate(layers):
        J = dense_jet(J, W, b, activation if l < last else None)
    return J
