import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from stacked_pinn import network
from stacked_pinn.autodiff import (
    DenseJet, DivergenceError, Jet2, coordinate_jets, dense_jet, grad_params, jet_activate,
    jet_add, jet_mul,
)

H = 1e-4


def fd_slots(g, t, x, h=H):
    """Central differences of a scalar function g(t, x)."""
    f0 = g(t, x)
    d_t = (g(t + h, x) - g(t - h, x)) / (2 * h)
    d_x = (g(t, x + h) - g(t, x - h)) / (2 * h)
    d_xx = (g(t, x + h) - 2 * f0 + g(t, x - h)) / h**2
    return f0, d_t, d_x, d_xx


def rel_err(a, b):
    return abs(a - b) / max(1.0, abs(b))


# ---------------------------------------------------------------------------
# jet primitives
# ---------------------------------------------------------------------------

def test_jet_add_examples():
    assert jet_add(Jet2(1, 0, 0, 0), Jet2(2, 0, 0, 0)).astuple() == (3, 0, 0, 0)
    a = Jet2(1.5, -2.0, 0.25, 7.0)
    assert jet_add(a, Jet2.constant(0.0)).astuple() == a.astuple()
    assert jet_add(Jet2(1, 2, 3, 4), Jet2(5, 6, 7, 8)).astuple() == (6, 8, 10, 12)


def test_jet_mul_examples():
    a = Jet2(1.5, -2.0, 0.25, 7.0)
    assert jet_mul(a, Jet2(1.0, 0.0, 0.0, 0.0)).astuple() == a.astuple()
    x = 0.7
    assert jet_mul(Jet2.x_coordinate(x), Jet2.x_coordinate(x)).astuple() == (x * x, 0, 2 * x, 2)
    assert jet_mul(Jet2(2, 1, 1, 0), Jet2(3, 0, 2, 0)).astuple() == (6, 3, 7, 4)


def test_jet_mul_against_finite_differences():
    # a(t, x) = 2 + t + x and b(t, x) = 3 + 2x have the jets used above at (0, 0).
    g = lambda t, x: (2 + t + x) * (3 + 2 * x)
    ref = fd_slots(g, 0.0, 0.0)
    got = jet_mul(Jet2(2, 1, 1, 0), Jet2(3, 0, 2, 0)).astuple()
    for a, b in zip(got, ref):
        assert a == pytest.approx(b, rel=1e-6, abs=1e-7)


def test_tanh_jet_examples():
    assert jet_activate(Jet2.constant(0.0)).astuple() == (0, 0, 0, 0)
    assert jet_activate(Jet2(0.0, 1.0, 1.0, 0.0)).astuple() == (0.0, 1.0, 1.0, 0.0)
    j = jet_activate(Jet2(0.5, 0.0, 1.0, 0.0))
    fd = (math.tanh(0.5 + H) - 2 * math.tanh(0.5) + math.tanh(0.5 - H)) / H**2
    assert j.d_xx == pytest.approx(fd, rel=1e-6)


def test_non_smooth_activation_rejected():
    with pytest.raises(ValueError, match="C\\^2"):
        jet_activate(Jet2(0.1), "relu")


# Random expressions in (t, x) built from the jet primitives.
LEAVES = st.sampled_from(["t", "x"]) | st.floats(-2, 2).map(lambda c: ("const", c))
EXPR = st.recursive(
    LEAVES,
    lambda sub: st.tuples(st.just("add"), sub, sub)
    | st.tuples(st.just("mul"), sub, sub)
    | st.tuples(st.just("tanh"), sub)
    | st.tuples(st.just("sin"), sub),
    max_leaves=8,
)


def eval_jet(e, t, x):
    if e == "t":
        return Jet2.t_coordinate(t)
    if e == "x":
        return Jet2.x_coordinate(x)
    if e[0] == "const":
        return Jet2.constant(e[1])
    if e[0] == "add":
        return jet_add(eval_jet(e[1], t, x), eval_jet(e[2], t, x))
    if e[0] == "mul":
        return jet_mul(eval_jet(e[1], t, x), eval_jet(e[2], t, x))
    return jet_activate(eval_jet(e[1], t, x), e[0])


def eval_float(e, t, x):
    if e == "t":
        return t
    if e == "x":
        return x
    if e[0] == "const":
        return e[1]
    if e[0] == "add":
        return eval_float(e[1], t, x) + eval_float(e[2], t, x)
    if e[0] == "mul":
        return eval_float(e[1], t, x) * eval_float(e[2], t, x)
    return {"tanh": math.tanh, "sin": math.sin}[e[0]](eval_float(e[1], t, x))


@settings(max_examples=150, deadline=None)
@given(EXPR, st.floats(-1, 1), st.floats(-1, 1))
def test_jet_chain_rule_matches_finite_differences(expr, t, x):
    jet = eval_jet(expr, t, x)
    f0, d_t, d_x, d_xx = fd_slots(lambda a, b: eval_float(expr, a, b), t, x)
    assert all(math.isfinite(v) for v in jet.astuple())
    assert jet.value == pytest.approx(f0, rel=1e-14, abs=1e-15)
    assert rel_err(jet.d_t, d_t) < 1e-6
    assert rel_err(jet.d_x, d_x) < 1e-6
    assert rel_err(jet.d_xx, d_xx) < 1e-4


# ---------------------------------------------------------------------------
# batched layers
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("n_slots", [1, 3, 4])
@pytest.mark.parametrize("activate", [True, False])
def test_dense_jet_backward_gradcheck(n_slots, activate):
    g = torch.Generator().manual_seed(n_slots)
    J = torch.randn(n_slots, 6, 3, dtype=torch.float64, generator=g, requires_grad=True)
    W = torch.randn(4, 3, dtype=torch.float64, generator=g, requires_grad=True)
    b = torch.randn(4, dtype=torch.float64, generator=g, requires_grad=True)
    assert torch.autograd.gradcheck(lambda J, W, b: DenseJet.apply(J, W, b, activate), (J, W, b))


def test_fused_tanh_matches_generic_jet_rules():
    g = torch.Generator().manual_seed(3)
    Z = torch.randn(4, 7, 5, dtype=torch.float64, generator=g)
    W = torch.eye(5, dtype=torch.float64)
    b = torch.zeros(5, dtype=torch.float64)
    fused = dense_jet(Z, W, b, "tanh")
    generic = jet_activate(Jet2(*Z), "tanh")
    for k, slot in enumerate(generic.astuple()):
        assert torch.allclose(fused[k], slot, rtol=1e-14, atol=1e-15)


def test_coordinate_jets_seed_unit_directions():
    J = coordinate_jets([0.1, 0.2], [0.3, 0.4])
    assert J.shape == (4, 2, 2)
    assert J[0, :, 0].tolist() == [0.1, 0.2] and J[0, :, 1].tolist() == [0.3, 0.4]
    assert J[1, :, 0].tolist() == [1, 1] and J[2, :, 1].tolist() == [1, 1]
    assert J[1, :, 1].abs().sum() == 0 and J[3].abs().sum() == 0


# ---------------------------------------------------------------------------
# grad_params
# ---------------------------------------------------------------------------

def test_grad_params_quadratic():
    theta = np.array([1.0, 3.0, -2.0])
    value, grad = grad_params(lambda p: p[1] ** 2, theta)
    assert value == 9.0
    assert grad.tolist() == [0.0, 6.0, 0.0]


def test_grad_params_constant_loss():
    value, grad = grad_params(lambda p: torch.tensor(2.5, dtype=torch.float64), np.ones(4))
    assert value == 2.5
    assert grad.tolist() == [0.0] * 4


def test_grad_params_non_finite():
    with pytest.raises(DivergenceError):
        grad_params(lambda p: p.sum() / 0.0, np.ones(2))
    with pytest.raises(DivergenceError):
        grad_params(lambda p: (p.sqrt()).sum(), np.zeros(2))


def _net_residual_loss(dims, t, x):
    """Loss mixing every jet slot of a single network, as a function of the flat params."""
    net = network.init(dims, seed=11)

    def loss_torch(flat):
        layers = network.torch_layers(net, flat)
        u = network.batch_jet_forward(layers, coordinate_jets(t, x))[..., 0]
        return (u[0] ** 2 + u[1] * u[2] + u[3]).sum()

    def loss_np(flat):
        j = network.jet_forward(net.with_params(flat), t, x)
        return j.value ** 2 + j.d_t * j.d_x + j.d_xx

    return net.flatten(), loss_torch, loss_np


def test_grad_params_matches_finite_differences_two_layer_net():
    flat, loss_torch, loss_np = _net_residual_loss([2, 6, 6, 1], 0.3, 0.6)
    value, grad = grad_params(loss_torch, flat)
    assert value == pytest.approx(loss_np(flat), rel=1e-12)
    fd = np.empty_like(flat)
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = H
        fd[k] = (loss_np(flat + e) - loss_np(flat - e)) / (2 * H)
    scale = np.maximum(1.0, np.abs(fd))
    assert np.max(np.abs(grad - fd) / scale) < 1e-5


def test_grad_params_deterministic():
    flat, loss_torch, _ = _net_residual_loss([2, 10, 10, 1], 0.2, 0.9)
    a = grad_params(loss_torch, flat)
    b = grad_params(loss_torch, flat)
    assert a[0] == b[0]
    assert np.array_equal(a[1], b[1])
