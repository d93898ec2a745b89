"""Second-order Taylor jets and parameter gradients.

A :class:`Jet2` carries a value together with its partial derivatives with
respect to the input coordinates ``t`` and ``x``: ``(value, d_t, d_x, d_xx)``.
Jet arithmetic is exact differentiation, so a network evaluated on jets
returns everything the PDE residual needs in a single forward pass.

Parameter gradients use reverse accumulation (torch's autograd engine) over
the jet-extended forward pass. Dense layers with tanh activation run through
:class:`DenseJet`, a fused op whose forward and backward passes are single
numba kernels.

Batched jets are stored slot-major as tensors of shape ``(S, N, width)``
where ``S`` is the number of tracked slots: 1 (value only), 3 (value, d_t,
d_x) or 4 (all of them).
"""
from __future__ import annotations

import ctypes
import ctypes.util
import math
from dataclasses import dataclass
from typing import Any, Callable

import numba
import numpy as np
import torch

# Bit-reproducible reductions need a fixed thread count.
torch.set_num_threads(1)


def _keep_freed_memory() -> None:
    """Stop glibc from handing large blocks back to the OS after every free.

    Each training step allocates and frees the same multi-megabyte jet
    buffers; with the default thresholds every one of them is a fresh mmap
    whose pages fault in on first touch, which costs about a third of a step.
    """
    name = ctypes.util.find_library("c")
    if not name:
        return
    try:
        libc = ctypes.CDLL(name)
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
        libc.mallopt(-3, 1 << 25)  # M_MMAP_THRESHOLD (glibc maximum)
    except (OSError, AttributeError):
        pass


_keep_freed_memory()

DTYPE = torch.float64
SLOT_NAMES = ("value", "d_t", "d_x", "d_xx")


class DivergenceError(FloatingPointError):
    """A loss or gradient became non-finite."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


# ---------------------------------------------------------------------------
# Scalar / elementwise jets
# ---------------------------------------------------------------------------


def _is_tensor(v: Any) -> bool:
    return isinstance(v, torch.Tensor)


@dataclass(frozen=True)
class Jet2:
    """Value with first derivatives in ``t`` and ``x`` and second in ``x``.

    Fields may be Python floats, numpy arrays or torch tensors; every jet
    operation is elementwise.
    """

    value: Any
    d_t: Any = 0.0
    d_x: Any = 0.0
    d_xx: Any = 0.0

    @classmethod
    def constant(cls, c) -> "Jet2":
        return cls(c, 0.0 * c, 0.0 * c, 0.0 * c)

    @classmethod
    def t_coordinate(cls, t) -> "Jet2":
        return cls(t, 1.0, 0.0, 0.0)

    @classmethod
    def x_coordinate(cls, x) -> "Jet2":
        return cls(x, 0.0, 1.0, 0.0)

    def astuple(self) -> tuple:
        return (self.value, self.d_t, self.d_x, self.d_xx)

    def __add__(self, other: "Jet2") -> "Jet2":
        return jet_add(self, other)

    def __mul__(self, other: "Jet2") -> "Jet2":
        return jet_mul(self, other)


def jet_add(a: Jet2, b: Jet2) -> Jet2:
    return Jet2(a.value + b.value, a.d_t + b.d_t, a.d_x + b.d_x, a.d_xx + b.d_xx)


def jet_mul(a: Jet2, b: Jet2) -> Jet2:
    """Leibniz rule up to second order in ``x``."""
    return Jet2(
        a.value * b.value,
        a.value * b.d_t + a.d_t * b.value,
        a.value * b.d_x + a.d_x * b.value,
        a.value * b.d_xx + 2.0 * a.d_x * b.d_x + a.d_xx * b.value,
    )


def _tanh_derivs(v):
    th = torch.tanh(v) if _is_tensor(v) else np.tanh(v)
    d1 = 1.0 - th * th
    return th, d1, -2.0 * th * d1


def _sin_derivs(v):
    if _is_tensor(v):
        s, c = torch.sin(v), torch.cos(v)
    else:
        s, c = np.sin(v), np.cos(v)
    return s, c, -s


# Only C^2 (here C^inf) activations: the second-order chain rule needs phi''.
ACTIVATIONS: dict[str, Callable] = {
    "tanh": _tanh_derivs,
    "sin": _sin_derivs,
}


def check_activation(name: str) -> str:
    if name not in ACTIVATIONS:
        raise ValueError(
            f"activation {name!r} is not supported; second-order jets need a "
            f"C^2 activation, one of {sorted(ACTIVATIONS)}"
        )
    return name


def jet_activate(a: Jet2, activation: str = "tanh") -> Jet2:
    phi, d1, d2 = ACTIVATIONS[check_activation(activation)](a.value)
    return Jet2(
        phi,
        d1 * a.d_t,
        d1 * a.d_x,
        d2 * a.d_x * a.d_x + d1 * a.d_xx,
    )


# ---------------------------------------------------------------------------
# Batched dense layers on slot-major jets
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _tanh_jet_forward(z, out, th):
    # th holds tanh(z[0]) on entry.
    n_slots, m = z.shape
    for k in range(m):
        out[0, k] = th[k]
    if n_slots >= 3:
        for k in range(m):
            s = 1.0 - th[k] * th[k]
            out[1, k] = s * z[1, k]
            out[2, k] = s * z[2, k]
    if n_slots == 4:
        for k in range(m):
            a = th[k]
            s = 1.0 - a * a
            out[3, k] = s * (z[3, k] - 2.0 * a * z[2, k] * z[2, k])


@numba.njit(cache=True)
def _tanh_jet_backward(z, th, g, gz):
    # out0 = a, out1 = s z1, out2 = s z2, out3 = s z3 - 2 a s z2^2
    # with a = tanh(z0), s = 1 - a^2, da/dz0 = s, ds/dz0 = -2 a s.
    n_slots, m = z.shape
    if n_slots == 1:
        for k in range(m):
            gz[0, k] = g[0, k] * (1.0 - th[k] * th[k])
    elif n_slots == 3:
        for k in range(m):
            a = th[k]
            s = 1.0 - a * a
            g1 = g[1, k]
            g2 = g[2, k]
            gz[1, k] = g1 * s
            gz[2, k] = g2 * s
            gz[0, k] = g[0, k] * s - 2.0 * a * s * (g1 * z[1, k] + g2 * z[2, k])
    else:
        for k in range(m):
            a = th[k]
            s = 1.0 - a * a
            z2 = z[2, k]
            g1 = g[1, k]
            g2 = g[2, k]
            g3 = g[3, k]
            acc = g1 * z[1, k] + g2 * z2 + g3 * z[3, k]
            gz[1, k] = g1 * s
            gz[2, k] = g2 * s - 4.0 * g3 * a * s * z2
            gz[3, k] = g3 * s
            gz[0, k] = (g[0, k] * s - 2.0 * a * s * acc
                        - 2.0 * g3 * z2 * z2 * s * (1.0 - 3.0 * a * a))


def _affine(J: torch.Tensor, W: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    n_slots, n, n_in = J.shape
    Z = (J.reshape(n_slots * n, n_in) @ W.T).reshape(n_slots, n, W.shape[0])
    Z[0] += b  # derivative slots carry no bias
    return Z


class DenseJet(torch.autograd.Function):
    """``tanh(W J + b)`` (or the bare affine map) on a slot-major jet."""

    @staticmethod
    def forward(ctx, J, W, b, activate: bool):
        Z = _affine(J, W, b)
        ctx.activate = activate
        if not activate:
            ctx.save_for_backward(J, W)
            return Z
        n_slots = Z.shape[0]
        out = torch.empty_like(Z)
        th = torch.tanh(Z[0]).reshape(-1)
        _tanh_jet_forward(Z.reshape(n_slots, -1).numpy(),
                          out.reshape(n_slots, -1).numpy(), th.numpy())
        ctx.save_for_backward(J, W, Z, th)
        return out

    @staticmethod
    def backward(ctx, g):
        g = g.contiguous()
        if ctx.activate:
            J, W, Z, th = ctx.saved_tensors
            n_slots = Z.shape[0]
            gz = torch.empty_like(Z)
            _tanh_jet_backward(Z.reshape(n_slots, -1).numpy(), th.numpy(),
                               g.reshape(n_slots, -1).numpy(),
                               gz.reshape(n_slots, -1).numpy())
        else:
            J, W = ctx.saved_tensors
            gz = g
        n_slots, n, n_in = J.shape
        g2 = gz.reshape(n_slots * n, -1)
        gJ = (g2 @ W).reshape(n_slots, n, n_in) if ctx.needs_input_grad[0] else None
        gW = g2.T @ J.reshape(n_slots * n, n_in)
        gb = gz[0].sum(0)
        return gJ, gW, gb, None


def dense_jet(J: torch.Tensor, W: torch.Tensor, b: torch.Tensor,
              activation: str | None) -> torch.Tensor:
    """One layer on a batched jet; ``activation=None`` is the linear output."""
    if activation is None:
        return DenseJet.apply(J, W, b, False)
    if activation == "tanh":
        return DenseJet.apply(J, W, b, True)
    Z = _affine(J, W, b)
    phi, d1, d2 = ACTIVATIONS[check_activation(activation)](Z[0])
    slots = [phi]
    if Z.shape[0] >= 3:
        slots += [d1 * Z[1], d1 * Z[2]]
    if Z.shape[0] == 4:
        slots.append(d2 * Z[2] * Z[2] + d1 * Z[3])
    return torch.stack(slots)


def coordinate_jets(t, x, n_slots: int = 4) -> torch.Tensor:
    """Input jet of shape ``(n_slots, N, 2)`` seeding t -> (t,1,0,0), x -> (x,0,1,0)."""
    t = torch.as_tensor(np.asarray(t, dtype=np.float64)).reshape(-1)
    x = torch.as_tensor(np.asarray(x, dtype=np.float64)).reshape(-1)
    J = torch.zeros((n_slots, t.numel(), 2), dtype=DTYPE)
    J[0, :, 0] = t
    J[0, :, 1] = x
    if n_slots >= 3:
        J[1, :, 0] = 1.0
        J[2, :, 1] = 1.0
    return J


# ---------------------------------------------------------------------------
# Parameter gradients
# ---------------------------------------------------------------------------


def grad_params(loss: Callable, params: np.ndarray, has_aux: bool = False):
    """Value and exact gradient of ``loss`` at the flat parameter vector.

    ``loss`` receives a float64 tensor that requires grad and must return a
    scalar tensor (or ``(scalar, aux)`` with ``has_aux``). Returns
    ``(value, gradient)`` as a float and an ndarray in the ordering of
    ``params`` (plus ``aux`` when requested). Raises :class:`DivergenceError`
    on a non-finite value or gradient.
    """
    theta = torch.tensor(np.asarray(params, dtype=np.float64), dtype=DTYPE,
                         requires_grad=True)
    out = loss(theta)
    value, aux = out if has_aux else (out, None)
    if not torch.isfinite(value):
        raise DivergenceError(f"non-finite loss {value.item()!r}")
    if value.requires_grad:
        value.backward()
    grad = theta.grad.numpy().copy() if theta.grad is not None else np.zeros_like(theta.detach().numpy())
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient")
    if has_aux:
        return value.item(), grad, aux
    return value.item(), grad
