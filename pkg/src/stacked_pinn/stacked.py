"""Baseline network plus residual-correction blocks with learnable scalings.

Stage 0 is the baseline network on ``(t, x)``. Stage ``i >= 1`` adds a
correction computed from ``(t, x, u_{i-1})``::

    u_i(t, x) = u_{i-1}(t, x) + |alpha_i| * block_i(t, x, u_{i-1}(t, x))

Stage ``i`` is trained against the PDE with viscosity ``gamma_i`` from the
model's :class:`~stacked_pinn.pde.ViscositySchedule`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import network
from .autodiff import Jet2, coordinate_jets, jet_add, jet_mul
from .network import DenseNet
from .pde import ViscositySchedule


@dataclass
class ResidualBlock:
    alpha: float
    net: DenseNet


@dataclass
class StackedPinn:
    base: DenseNet
    blocks: list[ResidualBlock] = field(default_factory=list)
    schedule: ViscositySchedule = field(default_factory=ViscositySchedule)

    def __post_init__(self):
        if self.base.n_inputs != 2:
            raise ValueError("the baseline network takes exactly (t, x)")
        for i, blk in enumerate(self.blocks, start=1):
            if blk.net.n_inputs != 3:
                raise ValueError(f"block {i} must take (t, x, u_prev)")
        if len(self.blocks) != self.schedule.n:
            raise ValueError(f"{len(self.blocks)} blocks but schedule has n = {self.schedule.n}")

    @property
    def n(self) -> int:
        return len(self.blocks)

    @property
    def alphas(self) -> list[float]:
        return [b.alpha for b in self.blocks]

    def gamma(self, i: int) -> float:
        """Viscosity of stage ``i``; a model without blocks is inviscid."""
        return 0.0 if self.n == 0 else self.schedule.at(i)


def build(base_dims: Sequence[int], block_dims: Sequence[int], n_blocks: int, *,
          gamma_init: float = 0.1, p: float = 2.0, alpha_init: float = 0.05,
          activation: str = "tanh", seed: int = 0) -> StackedPinn:
    """Freshly initialised model; each network gets its own seed stream."""
    seeds = [int(c.generate_state(1, np.uint64)[0])
             for c in np.random.SeedSequence(seed % 2**64).spawn(n_blocks + 1)]
    base = network.init(base_dims, activation, seeds[0])
    blocks = [ResidualBlock(alpha_init, network.init(block_dims, activation, s))
              for s in seeds[1:]]
    return StackedPinn(base, blocks, ViscositySchedule(gamma_init, p, n_blocks))


def _check_stage(model: StackedPinn, i: int) -> None:
    if not 0 <= i <= model.n:
        raise IndexError(f"stage {i} outside 0..{model.n}")


def eval_stage(model: StackedPinn, i: int, t: float, x: float) -> float:
    _check_stage(model, i)
    u = network.forward(model.base, (t, x))
    for blk in model.blocks[:i]:
        u = u + abs(blk.alpha) * network.forward(blk.net, (t, x, u))
    return u


def eval_stage_jet(model: StackedPinn, i: int, t: float, x: float) -> Jet2:
    _check_stage(model, i)
    u = network.jet_forward(model.base, t, x)
    for blk in model.blocks[:i]:
        correction = network.jet_forward(blk.net, t, x, [u])
        u = jet_add(u, jet_mul(Jet2.constant(abs(blk.alpha)), correction))
    return u


# ---------------------------------------------------------------------------
# Flat parameter layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamSlot:
    name: str
    offset: int
    size: int


def param_layout(model: StackedPinn) -> list[ParamSlot]:
    """Base parameters, then for each block its alpha followed by its network."""
    slots, k = [], 0

    def add(name, size):
        nonlocal k
        slots.append(ParamSlot(name, k, size))
        k += size

    add("base", model.base.n_params)
    for i, blk in enumerate(model.blocks, start=1):
        add(f"alpha{i}", 1)
        add(f"block{i}", blk.net.n_params)
    return slots


def n_params(model: StackedPinn) -> int:
    last = param_layout(model)[-1]
    return last.offset + last.size


def flatten(model: StackedPinn) -> np.ndarray:
    parts = [model.base.flatten()]
    for blk in model.blocks:
        parts += [np.array([blk.alpha]), blk.net.flatten()]
    return np.concatenate(parts)


def unflatten(model: StackedPinn, flat: np.ndarray) -> StackedPinn:
    """Copy of ``model`` carrying the parameters in ``flat``."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (n_params(model),):
        raise ValueError(f"expected {n_params(model)} parameters, got {flat.shape}")
    layout = {s.name: s for s in param_layout(model)}

    def chunk(name):
        s = layout[name]
        return flat[s.offset:s.offset + s.size]

    base = model.base.with_params(chunk("base"))
    blocks = [ResidualBlock(float(chunk(f"alpha{i}")[0]), blk.net.with_params(chunk(f"block{i}")))
              for i, blk in enumerate(model.blocks, start=1)]
    return StackedPinn(base, blocks, model.schedule)


# ---------------------------------------------------------------------------
# Batched stage jets (torch)
# ---------------------------------------------------------------------------


@dataclass
class TorchModel:
    """Tensor views of a model's parameters, possibly into a grad-tracked vector."""

    base: network.TorchLayers
    alphas: list[torch.Tensor]
    blocks: list[network.TorchLayers]
    activation: str


def torch_model(model: StackedPinn, flat: torch.Tensor | None = None) -> TorchModel:
    if flat is None:
        flat = torch.from_numpy(flatten(model))
    layout = {s.name: s for s in param_layout(model)}

    def chunk(name):
        s = layout[name]
        return flat[s.offset:s.offset + s.size]

    return TorchModel(
        base=network.torch_layers(model.base, chunk("base")),
        alphas=[chunk(f"alpha{i}")[0] for i in range(1, model.n + 1)],
        blocks=[network.torch_layers(blk.net, chunk(f"block{i}"))
                for i, blk in enumerate(model.blocks, start=1)],
        activation=model.base.activation,
    )


def stage_jets(tm: TorchModel, t, x, slots: Sequence[int]) -> list[torch.Tensor]:
    """Jets of stages ``0..len(slots)-1`` at the points ``(t, x)``.

    ``slots[i]`` is the number of jet slots stage ``i`` must carry (1, 3 or
    4) and may only shrink with ``i``, since later stages are built from
    earlier ones. Each returned tensor has shape ``(slots[i], N)``.
    """
    if any(b > a for a, b in zip(slots, slots[1:])):
        raise ValueError("slot counts must be non-increasing over stages")
    J = coordinate_jets(t, x, slots[0])
    u = network.batch_jet_forward(tm.base, J, tm.activation)
    out = [u[..., 0]]
    for i in range(1, len(slots)):
        s = slots[i]
        J, u = J[:s], u[:s]
        correction = network.batch_jet_forward(tm.blocks[i - 1], torch.cat([J, u], -1), tm.activation)
        u = u + tm.alphas[i - 1].abs() * correction
        out.append(u[..., 0])
    return out


def evaluate_grid(model: StackedPinn, t, x, stage: int | None = None) -> np.ndarray:
    """Values of stage ``stage`` (default: last) at arrays of points."""
    stage = model.n if stage is None else stage
    _check_stage(model, stage)
    with torch.no_grad():
        vals = stage_jets(torch_model(model), t, x, [1] * (stage + 1))[stage]
    return vals[0].numpy().reshape(np.shape(t))


def block_contribution(model: StackedPinn, i: int, t, x) -> np.ndarray:
    """``|alpha_i| * block_i(t, x, u_{i-1})`` at arrays of points."""
    if not 1 <= i <= model.n:
        raise IndexError(f"block {i} outside 1..{model.n}")
    with torch.no_grad():
        tm = torch_model(model)
        prev = stage_jets(tm, t, x, [1] * i)[i - 1]
        J = torch.cat([coordinate_jets(t, x, 1), prev[..., None]], -1)
        corr = network.batch_jet_forward(tm.blocks[i - 1], J, tm.activation)
        vals = tm.alphas[i - 1].abs() * corr[0, :, 0]
    return vals.numpy().reshape(np.shape(t))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _net_doc(net: DenseNet) -> dict:
    return {
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "layers": [{"W": W.ravel().tolist(), "b": b.tolist()}
                   for W, b in zip(net.weights, net.biases)],
    }


def _net_from_doc(doc: dict) -> DenseNet:
    dims = doc["layer_dims"]
    weights = [np.array(layer["W"], dtype=np.float64).reshape(n_out, n_in)
               for layer, n_in, n_out in zip(doc["layers"], dims[:-1], dims[1:])]
    biases = [np.array(layer["b"], dtype=np.float64) for layer in doc["layers"]]
    return DenseNet(tuple(dims), weights, biases, doc["activation"])


def to_document(model: StackedPinn) -> dict:
    # json writes floats with repr(), which round-trips float64 exactly.
    return {
        "n": model.n,
        "gamma_init": model.schedule.gamma_init,
        "p": model.schedule.p,
        "alphas": model.alphas,
        "base": _net_doc(model.base),
        "blocks": [_net_doc(b.net) for b in model.blocks],
    }


def from_document(doc: dict) -> StackedPinn:
    schedule = ViscositySchedule(doc["gamma_init"], doc["p"], doc["n"])
    blocks = [ResidualBlock(float(a), _net_from_doc(b)) for a, b in zip(doc["alphas"], doc["blocks"])]
    return StackedPinn(_net_from_doc(doc["base"]), blocks, schedule)


def save_checkpoint(model: StackedPinn, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_document(model), indent=1) + "\n")


def load_checkpoint(path: str | Path) -> StackedPinn:
    return from_document(json.loads(Path(path).read_text()))
