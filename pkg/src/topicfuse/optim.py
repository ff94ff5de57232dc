"""AdamW with decoupled weight decay and a linear-warmup schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import ShapeError, Tensor


@dataclass
class AdamWState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: AdamWState, lr: float | None = None) -> None:
    """Apply one AdamW update in place.

    ``lr`` overrides ``state.learning_rate`` for this step (used by the
    warmup schedule). Weight decay is applied only to parameters of rank >= 2;
    biases and normalisation gains are not decayed.
    """
    lr = state.learning_rate if lr is None else lr
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if lr == 0.0:
            continue
        data = p.data
        if state.weight_decay and p.ndim >= 2:
            data = data * (1.0 - lr * state.weight_decay)
        upd = (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data = (data - lr * upd).astype(p.dtype, copy=False)


def warmup_lr(step: int, base_lr: float, warmup_steps: int) -> float:
    """Linear warmup ``base_lr * step / warmup_steps`` then constant.

    ``step`` is the 1-based index of the update being taken.
    """
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr
