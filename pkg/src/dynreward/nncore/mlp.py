"""Multilayer perceptrons with hand-rolled reverse-mode gradients.

Conventions: weights have shape (fan_in, fan_out) and batches are row
vectors, so a layer computes ``a @ W + b``.  The final layer is always
linear; hidden layers use tanh or relu.  All arrays are float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MLP_CHECKPOINT_FORMAT = 1


def _tanh(z):
    return np.tanh(z)


def _relu(z):
    return np.maximum(z, 0.0)


_ACTIVATIONS = {"tanh": _tanh, "relu": _relu}


@dataclass
class MlpParams:
    """Parameters of a dense network: sizes, per-layer weights/biases and
    the hidden activation ("tanh" or "relu")."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.layer_sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        if any(s <= 0 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        expected = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        for i, ((d_in, d_out), w, b) in enumerate(zip(expected, self.weights, self.biases)):
            if w.shape != (d_in, d_out) or b.shape != (d_out,):
                raise ValueError(
                    f"layer {i}: weight/bias shapes {w.shape}/{b.shape} "
                    f"incompatible with sizes {d_in}->{d_out}"
                )
        if not all(np.all(np.isfinite(w)) for w in self.weights) or not all(
            np.all(np.isfinite(b)) for b in self.biases
        ):
            raise ValueError("parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def as_arrays(self) -> list[np.ndarray]:
        """Flat parameter list [W1, b1, W2, b2, ...] (references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        ws = [np.asarray(arrays[2 * i]) for i in range(self.n_layers)]
        bs = [np.asarray(arrays[2 * i + 1]) for i in range(self.n_layers)]
        return MlpParams(list(self.layer_sizes), ws, bs, self.activation)

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


def init_mlp(layer_sizes: Sequence[int], activation: str, rng: np.random.Generator) -> MlpParams:
    """Uniform fan-in-scaled initialization: W ~ U[-1/sqrt(fan_in), +1/sqrt(fan_in)], b = 0."""
    weights, biases = [], []
    for d_in, d_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MlpParams(list(layer_sizes), weights, biases, activation)


def _as_batch(x: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != d:
            raise ValueError(f"input length {x.shape[0]} != first layer size {d}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"input shape {x.shape} incompatible with first layer size {d}")
    return x, False


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network; accepts a vector or a (batch, in_dim) matrix."""
    xb, squeeze = _as_batch(x, params.in_dim)
    act = _ACTIVATIONS[params.activation]
    h = xb
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i != last:
            h = act(h)
    return h[0] if squeeze else h


def forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping per-layer pre/post activations for backward()."""
    xb, _ = _as_batch(x, params.in_dim)
    act = _ACTIVATIONS[params.activation]
    zs, activations = [], [xb]
    h = xb
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        zs.append(z)
        h = act(z) if i != last else z
        if i != last:
            activations.append(h)
    cache = {"zs": zs, "acts": activations}
    return h, cache


def _act_deriv(params: MlpParams, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if params.activation == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(np.float64)


def backward(params: MlpParams, cache: dict, grad_out: np.ndarray):
    """Backpropagate d(loss)/d(outputs) through the cached forward pass.

    Returns ((dWs, dbs), grad_input); gradients are summed over the batch,
    matching a loss that sums per-sample terms.
    """
    zs, acts = cache["zs"], cache["acts"]
    delta = np.asarray(grad_out, dtype=np.float64)
    if delta.ndim == 1:
        delta = delta[None, :]
    dws = [None] * params.n_layers
    dbs = [None] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        dws[i] = acts[i].T @ delta
        dbs[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
        if i > 0:
            a = acts[i]  # activation output of layer i-1 feeds layer i
            delta = delta * _act_deriv(params, zs[i - 1], a)
    return (dws, dbs), delta


def gradient(params: MlpParams, loss_fn: Callable, x: np.ndarray):
    """Gradients of a scalar loss over a batch.

    ``loss_fn(outputs) -> (loss, dloss_doutputs)`` supplies the output-side
    derivative; a non-finite loss is rejected.
    """
    y, cache = forward_cached(params, x)
    loss, grad_out = loss_fn(y)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss!r}")
    (dws, dbs), _ = backward(params, cache, grad_out)
    return loss, (dws, dbs)


def input_gradients(params: MlpParams, x: np.ndarray):
    """Per-sample gradient of the scalar network output w.r.t. its input.

    Requires out_dim == 1.  Returns (outputs (B,), grads (B, in_dim)).
    """
    if params.out_dim != 1:
        raise ValueError("input_gradients requires a scalar-output network")
    y, cache = forward_cached(params, x)
    b = y.shape[0]
    delta = np.ones((b, 1))
    for i in range(params.n_layers - 1, 0, -1):
        delta = delta @ params.weights[i].T
        delta = delta * _act_deriv(params, cache["zs"][i - 1], cache["acts"][i])
    g = delta @ params.weights[0].T
    return y[:, 0], g


def grad_sqnorm_backward(params: MlpParams, x: np.ndarray, scale: np.ndarray):
    """Parameter gradients of sum_i scale_i * ||d out_i / d x_i||^2.

    Scalar-output networks only.  This is the double-backprop primitive
    behind input-gradient penalties: the forward pass, the input-gradient
    backward pass, and a reverse sweep through both are all explicit.
    Returns (per-sample squared norms (B,), (dWs, dbs)).
    """
    if params.out_dim != 1:
        raise ValueError("grad_sqnorm_backward requires a scalar-output network")
    xb, _ = _as_batch(x, params.in_dim)
    scale = np.asarray(scale, dtype=np.float64).reshape(-1)
    n_layers = params.n_layers
    act_name = params.activation

    # forward, keeping activations A_l (A_0 = input)
    acts = [xb]
    zs = []
    h = xb
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        zs.append(z)
        if i != n_layers - 1:
            h = _ACTIVATIONS[act_name](z)
            acts.append(h)

    def phi1(i):
        if act_name == "tanh":
            return 1.0 - acts[i + 1] * acts[i + 1]
        return (zs[i] > 0).astype(np.float64)

    def phi2(i):
        if act_name == "tanh":
            return -2.0 * acts[i + 1] * (1.0 - acts[i + 1] * acts[i + 1])
        return np.zeros_like(zs[i])

    # input-gradient pass: D_l = d out / d z_l, Gam_l = d out / d a_l
    bsz = xb.shape[0]
    deltas = [None] * (n_layers + 1)
    gammas = [None] * n_layers
    deltas[n_layers] = np.ones((bsz, 1))
    for l in range(n_layers, 0, -1):
        gammas[l - 1] = deltas[l] @ params.weights[l - 1].T
        if l - 1 >= 1:
            deltas[l - 1] = gammas[l - 1] * phi1(l - 2)
    g = gammas[0]
    sqnorms = np.einsum("bi,bi->b", g, g)

    dws = [np.zeros_like(w) for w in params.weights]
    dbs = [np.zeros_like(b) for b in params.biases]

    # reverse sweep through the input-gradient pass (upward, layer 1..L)
    u_gamma = 2.0 * scale[:, None] * g
    uz0 = [None] * n_layers  # phi'' contributions, indexed like zs
    for l in range(1, n_layers + 1):
        dws[l - 1] += u_gamma.T @ deltas[l]
        u_delta = u_gamma @ params.weights[l - 1]
        if l == n_layers:
            break
        u_gamma = u_delta * phi1(l - 1)
        uz0[l - 1] = u_delta * gammas[l] * phi2(l - 1)

    # reverse sweep through the forward pass for the phi'' contributions
    u_z_next = None
    for l in range(n_layers - 1, 0, -1):
        u_z = uz0[l - 1] if uz0[l - 1] is not None else 0.0
        if u_z_next is not None:
            u_a = u_z_next @ params.weights[l].T
            u_z = u_z + u_a * phi1(l - 1)
        if np.isscalar(u_z):
            break
        dws[l - 1] += acts[l - 1].T @ u_z
        dbs[l - 1] += u_z.sum(axis=0)
        u_z_next = u_z

    return sqnorms, (dws, dbs)


def save_mlp(path, params: MlpParams, extra: dict | None = None) -> None:
    """Write a versioned .npz checkpoint (sizes, activation, row-major arrays)."""
    payload = {
        "format_version": np.array(MLP_CHECKPOINT_FORMAT),
        "layer_sizes": np.array(params.layer_sizes, dtype=np.int64),
        "activation": np.array(params.activation),
    }
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        payload[f"w{i}"] = np.ascontiguousarray(w)
        payload[f"b{i}"] = np.ascontiguousarray(b)
    for key, value in (extra or {}).items():
        payload[f"extra_{key}"] = np.asarray(value)
    np.savez(path, **payload)


def load_mlp(path) -> tuple[MlpParams, dict]:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != MLP_CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {version}")
        sizes = [int(s) for s in data["layer_sizes"]]
        activation = str(data["activation"])
        n_layers = len(sizes) - 1
        weights = [data[f"w{i}"].astype(np.float64) for i in range(n_layers)]
        biases = [data[f"b{i}"].astype(np.float64) for i in range(n_layers)]
        extra = {
            key[len("extra_"):]: data[key]
            for key in data.files
            if key.startswith("extra_")
        }
    return MlpParams(sizes, weights, biases, activation), extra
