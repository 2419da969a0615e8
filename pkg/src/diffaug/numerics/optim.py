"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import DimensionError
from .tree import tree_leaves, tree_map


@dataclass(frozen=True)
class AdamWConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True, eq=False)
class OptState:
    m: object
    v: object
    t: int = 0
    hyper: AdamWConfig = field(default_factory=AdamWConfig)


def init_opt_state(params, hyper: AdamWConfig | None = None) -> OptState:
    zeros = tree_map(np.zeros_like, params)
    return OptState(m=zeros, v=tree_map(np.zeros_like, params), t=0, hyper=hyper or AdamWConfig())


def _check_shapes(params, grads, state):
    p, g, m = tree_leaves(params), tree_leaves(grads), tree_leaves(state.m)
    if p.keys() != g.keys() or p.keys() != m.keys():
        raise DimensionError("gradient / optimizer state do not match the parameter tree")
    for name in p:
        if p[name].shape != g[name].shape or p[name].shape != m[name].shape:
            raise DimensionError(
                f"{name}: param {p[name].shape}, grad {g[name].shape}, moment {m[name].shape}"
            )


def adamw_step(params, grads, state: OptState):
    """One AdamW update. Returns ``(params', state')``; inputs are not mutated."""
    _check_shapes(params, grads, state)
    h = state.hyper
    t = state.t + 1
    m = tree_map(lambda m_, g: h.beta1 * m_ + (1.0 - h.beta1) * g, state.m, grads)
    v = tree_map(lambda v_, g: h.beta2 * v_ + (1.0 - h.beta2) * g * g, state.v, grads)
    c1 = 1.0 - h.beta1**t
    c2 = 1.0 - h.beta2**t

    def update(p, m_, v_):
        decayed = p * (1.0 - h.learning_rate * h.weight_decay)
        return decayed - h.learning_rate * (m_ / c1) / (np.sqrt(v_ / c2) + h.eps)

    new_params = tree_map(update, params, m, v)
    return new_params, replace(state, m=m, v=v, t=t)
