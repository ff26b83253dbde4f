"""Numpy implementation of the stacked-MLP kernel."""

from __future__ import annotations

import numpy as np


def stacked_mlp_forward(x, weights, biases, activation: str):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must be (batch, in_dim)")
    if activation not in ("tanh", "relu"):
        raise ValueError(f"unknown activation {activation!r}")
    n_layers = len(weights)
    h = x[None, :, :]  # broadcast over the stack axis
    for i in range(n_layers):
        w = np.asarray(weights[i], dtype=np.float64)
        b = np.asarray(biases[i], dtype=np.float64)
        h = np.matmul(h, w) + b[:, None, :]
        if i != n_layers - 1:
            h = np.tanh(h) if activation == "tanh" else np.maximum(h, 0.0)
    return h
