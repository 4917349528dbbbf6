"""Leaky integrate-and-fire dynamics with reset by subtraction.

The membrane update is

    v[t] = beta * v[t-1] + I[t] - v_th * s[t-1]
    s[t] = 1 if v[t] > v_th else 0

where ``I[t]`` is the weighted input computed by the caller. The reset uses the
*previous* step's spikes. The readout variant drops both reset and spiking so
the membrane potential after the last step is a continuous output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, as_tensor


@dataclass(frozen=True)
class LifParams:
    beta: float = 0.9
    v_th: float = 1.0
    reset_enabled: bool = True
    beta_learnable: bool = False
    surrogate_slope: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.v_th > 0:
            raise ValueError(f"v_th must be positive, got {self.v_th}")
        if not self.surrogate_slope > 0:
            raise ValueError(f"surrogate_slope must be positive, got {self.surrogate_slope}")


@dataclass(frozen=True)
class MembraneState:
    v: np.ndarray
    s_prev: np.ndarray

    @classmethod
    def rest(cls, shape) -> "MembraneState":
        return cls(np.zeros(shape), np.zeros(shape))

    def __post_init__(self):
        if np.shape(self.v) != np.shape(self.s_prev):
            raise ShapeError(f"v {np.shape(self.v)} and s_prev {np.shape(self.s_prev)} differ")


def _check(state: MembraneState, weighted_input) -> np.ndarray:
    weighted_input = as_tensor(weighted_input)
    if weighted_input.shape != np.shape(state.v):
        raise ShapeError(
            f"weighted input {weighted_input.shape} does not match state {np.shape(state.v)}")
    return weighted_input


def fire(v, v_th: float) -> np.ndarray:
    """Heaviside spike function; a potential exactly at threshold does not fire."""
    return (np.asarray(v) > v_th).astype(np.float64)


def lif_step(state: MembraneState, weighted_input, params: LifParams):
    """Advance one timestep. Returns ``(new_state, spikes)``."""
    weighted_input = _check(state, weighted_input)
    v = params.beta * state.v + weighted_input
    if params.reset_enabled:
        v = v - params.v_th * state.s_prev
    spikes = fire(v, params.v_th)
    return MembraneState(v, spikes), spikes


def readout_step(state: MembraneState, weighted_input, params: LifParams) -> MembraneState:
    """Leaky integration without reset or spikes (regression output layer)."""
    weighted_input = _check(state, weighted_input)
    v = params.beta * state.v + weighted_input
    return MembraneState(v, np.zeros_like(v))


def surrogate_grad(v_minus_th, slope: float = 2.0) -> np.ndarray:
    """Arctan surrogate ``slope / (pi * (1 + (slope * x)**2))``; integrates to 1."""
    if not slope > 0:
        raise ValueError(f"slope must be positive, got {slope}")
    x = np.asarray(v_minus_th, dtype=np.float64)
    return slope / (np.pi * (1.0 + (slope * x) ** 2))


def soft_spike(v_minus_th, slope: float = 2.0) -> np.ndarray:
    """Primitive of ``surrogate_grad``: a smooth step from 0 to 1."""
    x = np.asarray(v_minus_th, dtype=np.float64)
    return np.arctan(slope * x) / np.pi + 0.5
