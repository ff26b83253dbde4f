"""Functional Adam over flat lists of parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class AdamState:
    """First/second-moment accumulators shaped like the parameters plus a
    monotone step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(arrays: Sequence[np.ndarray], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        t=0,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState, lr: float) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and new state."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("parameter/gradient/state lengths differ")
    for a, g in zip(arrays, grads):
        if a.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {a.shape}")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_arrays = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m1 = b1 * m + (1.0 - b1) * g
        v1 = b2 * v + (1.0 - b2) * g * g
        m_hat = m1 / (1.0 - b1**t)
        v_hat = v1 / (1.0 - b2**t)
        new_arrays.append(a - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m1)
        new_v.append(v1)
    return new_arrays, AdamState(new_m, new_v, t, b1, b2, state.eps)
