"""Flux models, the viscous PDE residual and the viscosity schedule."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .autodiff import Jet2


class FluxModel(Protocol):
    """A C^2 concave flux on the physical range [0, 1]."""

    def flux(self, u): ...

    def flux_prime(self, u): ...

    @property
    def max_speed(self) -> float:
        """Upper bound of |f'(u)| over [0, 1], used for the CFL step."""

    @property
    def sonic_point(self) -> float:
        """Maximiser of the flux on [0, 1]."""


@dataclass(frozen=True)
class GreenshieldsFlux:
    """LWR flux ``v_f * u * (1 - u)`` for normalised density u."""

    v_f: float = 1.0

    def __post_init__(self):
        if not self.v_f > 0:
            raise ValueError("free-flow velocity v_f must be positive")

    def flux(self, u):
        return self.v_f * u * (1 - u)

    def flux_prime(self, u):
        return self.v_f * (1 - 2 * u)

    @property
    def max_speed(self) -> float:
        return self.v_f

    @property
    def sonic_point(self) -> float:
        return 0.5


def flux(m: FluxModel, u):
    return m.flux(u)


def flux_prime(m: FluxModel, u):
    return m.flux_prime(u)


def residual(u_jet: Jet2, m: FluxModel, gamma: float):
    """``u_t + f'(u) u_x - gamma u_xx``; the viscous term is skipped at gamma = 0."""
    if gamma < 0:
        raise ValueError("viscosity must be non-negative")
    r = u_jet.d_t + m.flux_prime(u_jet.value) * u_jet.d_x
    if gamma != 0:
        r = r - gamma * u_jet.d_xx
    return r


@dataclass(frozen=True)
class ViscositySchedule:
    """``gamma_i = gamma_init * (1 - (i/n)^p)`` for i = 0..n."""

    gamma_init: float = 0.1
    p: float = 2.0
    n: int = 0

    def __post_init__(self):
        if self.gamma_init < 0:
            raise ValueError("gamma_init must be non-negative")
        if not self.p > 1:
            raise ValueError("schedule exponent p must exceed 1")
        if self.n < 0:
            raise ValueError("number of residual blocks must be non-negative")

    def at(self, i: int) -> float:
        return viscosity_at(self, i)

    def values(self) -> list[float]:
        return [viscosity_at(self, i) for i in range(self.n + 1)]


def viscosity_at(s: ViscositySchedule, i: int) -> float:
    if s.n < 1:
        raise ValueError("the schedule is undefined without residual blocks (n = 0)")
    if not 0 <= i <= s.n:
        raise IndexError(f"stage {i} outside 0..{s.n}")
    return s.gamma_init * (1.0 - (i / s.n) ** s.p)
