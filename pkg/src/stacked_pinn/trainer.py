"""Per-stage losses, the joint objective and the Adam training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import stacked
from .autodiff import DivergenceError, Jet2, grad_params
from .godunov import Measurements
from .pde import GreenshieldsFlux, FluxModel, residual
from .stacked import StackedPinn

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    n_blocks: int = 0
    gamma_init: float = 0.1
    p: float = 2.0
    lam: float = 0.1
    lr: float = 1e-3
    max_iters: int = 15000
    patience_iters: int = 1500
    patience_rel_tol: float = 1e-4
    n_collocation: int = 10000
    seed: int = 0
    base_dims: tuple[int, ...] = (2, 30, 30, 30, 1)
    block_dims: tuple[int, ...] = (3, 40, 40, 40, 1)
    alpha_init: float = 0.05
    activation: str = "tanh"
    training_mode: str = "joint"
    log_every: int = 50

    def __post_init__(self):
        self.base_dims = tuple(self.base_dims)
        self.block_dims = tuple(self.block_dims)
        if self.n_blocks < 0:
            raise ValueError("n_blocks must be non-negative")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.max_iters < 0 or self.patience_iters < 1 or self.log_every < 1:
            raise ValueError("iteration counts must be positive")
        if self.n_collocation < 1:
            raise ValueError("need at least one collocation point")
        if self.base_dims[0] != 2 or self.block_dims[0] != 3:
            raise ValueError("baseline takes 2 inputs, blocks take 3")
        if self.training_mode not in ("joint", "sequential"):
            raise ValueError(f"unknown training mode {self.training_mode!r}")


@dataclass
class HistoryRecord:
    iteration: int
    total: float
    data: list[float]
    phy: list[float]
    alphas: list[float]


@dataclass
class TrainHistory:
    records: list[HistoryRecord] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)  # every iteration
    stop_reason: str = "max-iters"
    stop_iteration: int = 0
    final_loss: float | None = None


def sample_collocation(T: float, L: float, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """``count`` i.i.d. uniform points ``(t, x)`` in ``[0, T] x [0, L]``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed % 2**64)
    pts = rng.uniform(size=(count, 2))
    return pts[:, 0] * T, pts[:, 1] * L


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _jet_slots(gammas: Sequence[float]) -> list[int]:
    # Stage i carries d_xx when it or any later stage has a viscous term.
    slots, need = [], False
    for g in reversed(gammas):
        need = need or g != 0
        slots.append(4 if need else 3)
    return slots[::-1]


@dataclass
class LossTerms:
    total: torch.Tensor
    data: list[torch.Tensor]
    phy: list[torch.Tensor]


def stage_losses(tm: stacked.TorchModel, gammas: Sequence[float], data: Measurements,
                 colloc: tuple[np.ndarray, np.ndarray], m: FluxModel) -> tuple[list, list]:
    """Data and physics losses of stages ``0..len(gammas)-1``."""
    if len(data) == 0:
        raise ValueError("empty measurement set")
    if len(colloc[0]) == 0:
        raise ValueError("empty collocation set")
    n_stages = len(gammas)
    u_obs = torch.from_numpy(np.asarray(data.u, dtype=np.float64))
    fits = stacked.stage_jets(tm, data.t, data.x, [1] * n_stages)
    jets = stacked.stage_jets(tm, colloc[0], colloc[1], _jet_slots(gammas))
    data_terms, phy_terms = [], []
    for u_hat, jet, g in zip(fits, jets, gammas):
        err = u_obs - u_hat[0]
        data_terms.append((err * err).mean())
        r = residual(Jet2(*jet), m, g)
        phy_terms.append((r * r).mean())
    return data_terms, phy_terms


def stage_gammas(model: StackedPinn) -> list[float]:
    return [model.gamma(i) for i in range(model.n + 1)]


def make_objective(template: StackedPinn, data: Measurements, colloc, lam: float,
                   m: FluxModel | None = None, stage: int | None = None) -> Callable:
    """Flat-parameter objective returning ``(total, LossTerms)``.

    With ``stage=None`` this is the joint objective: the stage losses
    ``data_i + lam * phy_i`` averaged over all stages plus the sum of squared
    alphas. With ``stage=k`` only stage k's loss (plus ``alpha_k^2``) is used.
    """
    m = GreenshieldsFlux() if m is None else m
    gammas = stage_gammas(template)
    n = template.n

    def objective(flat: torch.Tensor):
        tm = stacked.torch_model(template, flat)
        data_terms, phy_terms = stage_losses(tm, gammas, data, colloc, m)
        if stage is None:
            total = sum(d + lam * p for d, p in zip(data_terms, phy_terms)) / (n + 1)
            for a in tm.alphas:
                total = total + a * a
        else:
            total = data_terms[stage] + lam * phy_terms[stage]
            if stage >= 1:
                total = total + tm.alphas[stage - 1] ** 2
        return total, LossTerms(total, data_terms, phy_terms)

    return objective


def loss_data(model: StackedPinn, i: int, data: Measurements) -> float:
    """Mean squared mismatch of stage ``i`` on the measurements."""
    stacked._check_stage(model, i)
    if len(data) == 0:
        raise ValueError("empty measurement set")
    with torch.no_grad():
        u_hat = stacked.stage_jets(stacked.torch_model(model), data.t, data.x, [1] * (i + 1))[i][0]
    return float(((torch.from_numpy(np.asarray(data.u, dtype=np.float64)) - u_hat) ** 2).mean())


def loss_phy(model: StackedPinn, i: int, gamma: float, colloc, m: FluxModel | None = None) -> float:
    """Mean squared residual of stage ``i`` at viscosity ``gamma``."""
    stacked._check_stage(model, i)
    if len(colloc[0]) == 0:
        raise ValueError("empty collocation set")
    m = GreenshieldsFlux() if m is None else m
    with torch.no_grad():
        jet = stacked.stage_jets(stacked.torch_model(model), colloc[0], colloc[1], [4] * (i + 1))[i]
        r = residual(Jet2(*jet), m, gamma)
    return float((r * r).mean())


def total_loss(model: StackedPinn, data: Measurements, colloc, cfg: TrainConfig,
               m: FluxModel | None = None) -> float:
    if model.n != cfg.n_blocks:
        raise ValueError("model and config disagree on the number of blocks")
    objective = make_objective(model, data, colloc, cfg.lam, m)
    with torch.no_grad():
        total, _ = objective(torch.from_numpy(stacked.flatten(model)))
    return float(total)


# ---------------------------------------------------------------------------
# Optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and state shapes differ")
    if not np.all(np.isfinite(grads)):
        raise DivergenceError("non-finite gradient")
    step = state.step + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads * grads
    m_hat = m / (1 - beta1 ** step)
    v_hat = v / (1 - beta2 ** step)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, step)


class PatienceStopper:
    """Stop once the best loss has not improved by a relative margin for a while."""

    def __init__(self, patience: int, rel_tol: float):
        self.patience = patience
        self.rel_tol = rel_tol
        self.best = np.inf
        self.best_iteration = 0

    def update(self, iteration: int, loss: float) -> bool:
        """Record ``loss``; True when training should stop before this step."""
        if loss < self.best * (1 - self.rel_tol) or self.best == np.inf:
            self.best = loss
            self.best_iteration = iteration
            return False
        return iteration - self.best_iteration >= self.patience


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def _record(iteration: int, total: float, terms, params: np.ndarray, alpha_idx) -> HistoryRecord:
    data = [float(d.detach()) for d in getattr(terms, "data", [])]
    phy = [float(p.detach()) for p in getattr(terms, "phy", [])]
    return HistoryRecord(iteration, total, data, phy, [float(params[k]) for k in alpha_idx])


def _optimise(params, objective, mask, cfg: TrainConfig, max_iters: int, history: TrainHistory,
              alpha_idx, offset: int = 0, callback=None) -> np.ndarray:
    state = AdamState.zeros(params.size)
    stopper = PatienceStopper(cfg.patience_iters, cfg.patience_rel_tol)
    history.stop_reason, history.stop_iteration = "max-iters", offset + max_iters
    for k in range(max_iters):
        it = offset + k
        try:
            total, grad, terms = grad_params(objective, params, has_aux=True)
        except DivergenceError as exc:
            raise DivergenceError(f"training diverged at iteration {it}: {exc}", it) from exc
        history.losses.append(total)
        if it % cfg.log_every == 0:
            history.records.append(_record(it, total, terms, params, alpha_idx))
        if callback is not None:
            callback(it, total)
        if stopper.update(k, total):
            history.stop_reason, history.stop_iteration = "early-stop", it
            log.info("early stop at iteration %d (best %.6g at %d)", it, stopper.best,
                     offset + stopper.best_iteration)
            break
        if mask is not None:
            grad = grad * mask
        params, state = adam_step(params, grad, state, cfg.lr)
    return params


def train(cfg: TrainConfig, data: Measurements, colloc, *, m: FluxModel | None = None,
          objective: Callable | None = None, callback=None) -> tuple[StackedPinn, TrainHistory]:
    """Fit a fresh model to ``data`` with the physics penalty on ``colloc``.

    ``objective`` replaces the joint objective (a flat-tensor -> (total, aux)
    callable); used to probe the stopping rule.
    """
    if len(data) == 0 or len(colloc[0]) == 0:
        raise ValueError("measurements and collocation points must be non-empty")
    model = stacked.build(cfg.base_dims, cfg.block_dims, cfg.n_blocks, gamma_init=cfg.gamma_init,
                          p=cfg.p, alpha_init=cfg.alpha_init, activation=cfg.activation,
                          seed=cfg.seed)
    layout = stacked.param_layout(model)
    alpha_idx = [s.offset for s in layout if s.name.startswith("alpha")]
    params = stacked.flatten(model)
    history = TrainHistory()

    if cfg.training_mode == "joint" or objective is not None or model.n == 0:
        obj = objective or make_objective(model, data, colloc, cfg.lam, m)
        params = _optimise(params, obj, None, cfg, cfg.max_iters, history, alpha_idx,
                           callback=callback)
    else:
        # Stage k trains only its own parameters; earlier stages stay frozen.
        per_stage = cfg.max_iters // (model.n + 1)
        for k in range(model.n + 1):
            mask = np.zeros(params.size)
            names = {"base"} if k == 0 else {f"alpha{k}", f"block{k}"}
            for s in layout:
                if s.name in names:
                    mask[s.offset:s.offset + s.size] = 1.0
            obj = make_objective(model, data, colloc, cfg.lam, m, stage=k)
            params = _optimise(params, obj, mask, cfg, per_stage, history, alpha_idx,
                               offset=k * per_stage, callback=callback)

    model = stacked.unflatten(model, params)
    if objective is None:
        history.final_loss = total_loss(model, data, colloc, cfg, m)
    return model, history


# ---------------------------------------------------------------------------
# History file
# ---------------------------------------------------------------------------


def history_header(n: int) -> str:
    cols = ["iter", "total"]
    cols += [f"data{i}" for i in range(n + 1)]
    cols += [f"phy{i}" for i in range(n + 1)]
    cols += [f"alpha{i}" for i in range(1, n + 1)]
    return ",".join(cols)


def write_history(history: TrainHistory, n: int, path: str | Path) -> None:
    lines = [history_header(n)]
    for r in history.records:
        vals = [r.total, *r.data, *r.phy, *r.alphas]
        lines.append(",".join([str(r.iteration)] + [f"{v:.17g}" for v in vals]))
    Path(path).write_text("\n".join(lines) + "\n")
