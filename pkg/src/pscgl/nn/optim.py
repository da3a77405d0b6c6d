"""Adam optimizer over the model's named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation
from .gcn import GcnModel, named_parameters


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(model: GcnModel, learning_rate: float = 0.001) -> AdamState:
    state = AdamState(learning_rate=learning_rate)
    for name, p in named_parameters(model):
        state.m[name] = np.zeros_like(p)
        state.v[name] = np.zeros_like(p)
    return state


def adam_step(
    model: GcnModel, grads: dict[str, np.ndarray], state: AdamState
) -> tuple[GcnModel, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in named_parameters(model):
        g = grads[name]
        if g.shape != p.shape:
            raise ContractViolation(f"gradient shape {g.shape} != param {name} shape {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    model.version += 1
    return model, state
