"""Probabilistic Gaussian dynamics models trained by maximum likelihood.

Each member maps a normalized (state, action) pair to the mean and log-std
of a Gaussian over the normalized next-state *delta*; an ensemble keeps the
members with the lowest validation RMSE as elites for rollout generation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from dynreward import _kernels
from dynreward.envs import NormStats, OfflineDataset
from dynreward.nncore import (
    MlpParams,
    adam_step,
    backward,
    forward_cached,
    init_adam,
    init_mlp,
    load_mlp,
    save_mlp,
)

LOG_STD_BOUNDS = (-10.0, 2.0)
ENSEMBLE_MANIFEST = "manifest.json"


@dataclass
class EnsembleConfig:
    n_members: int = 7
    n_elites: int = 5
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 150
    bootstrap: bool = True

    def __post_init__(self):
        if not 1 <= self.n_elites <= self.n_members:
            raise ValueError("need 1 <= n_elites <= n_members")


@dataclass
class GaussianDynamicsModel:
    """One ensemble member plus its normalization statistics."""

    params: MlpParams
    in_stats: NormStats
    delta_stats: NormStats
    log_std_bounds: tuple[float, float] = LOG_STD_BOUNDS
    val_rmse: float = math.nan

    @property
    def state_dim(self) -> int:
        return self.params.out_dim // 2

    def _net_outputs(self, states, actions):
        x = self.in_stats.normalize(np.concatenate([states, actions], axis=1))
        out = _forward(self.params, x)
        d = self.state_dim
        mu = out[:, :d]
        log_std = np.clip(out[:, d:], *self.log_std_bounds)
        return mu, log_std

    def predict(self, states, actions):
        """Raw-space next-state mean and std for a batch."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        mu, log_std = self._net_outputs(states, actions)
        mean_next = states + self.delta_stats.denormalize(mu)
        std_next = np.exp(log_std) * self.delta_stats.std
        return mean_next, std_next

    def sample(self, states, actions, rng: np.random.Generator):
        mean_next, std_next = self.predict(states, actions)
        return mean_next + std_next * rng.standard_normal(mean_next.shape)


def _forward(params: MlpParams, x):
    from dynreward.nncore import forward

    return forward(params, x)


class DynamicsEnsemble:
    """Immutable post-training; elite members get a stacked-parameter cache
    so batched prediction goes through the fast kernel."""

    def __init__(self, members: list[GaussianDynamicsModel], elite_indices: list[int],
                 val_losses: np.ndarray):
        if not members:
            raise ValueError("ensemble needs at least one member")
        if len(set(elite_indices)) != len(elite_indices):
            raise ValueError("elite indices must be unique")
        if any(not 0 <= i < len(members) for i in elite_indices):
            raise ValueError("elite index out of range")
        self.members = members
        self.elite_indices = list(elite_indices)
        self.val_losses = np.asarray(val_losses, dtype=np.float64)
        self._stack = None

    @property
    def n_members(self) -> int:
        return len(self.members)

    @property
    def n_elites(self) -> int:
        return len(self.elite_indices)

    @property
    def state_dim(self) -> int:
        return self.members[0].state_dim

    def elites(self) -> list[GaussianDynamicsModel]:
        return [self.members[i] for i in self.elite_indices]

    def _elite_stack(self):
        if self._stack is None:
            elites = self.elites()
            n_layers = elites[0].params.n_layers
            ws = [np.ascontiguousarray(np.stack([m.params.weights[l] for m in elites]))
                  for l in range(n_layers)]
            bs = [np.ascontiguousarray(np.stack([m.params.biases[l] for m in elites]))
                  for l in range(n_layers)]
            self._stack = (ws, bs, elites[0].params.activation)
        return self._stack

    def predict_elites(self, states, actions):
        """Raw-space means/stds for every elite member: (M, B, ds) each.

        All elites share normalization statistics (they come from the same
        training dataset), so one normalized input batch serves the stack.
        """
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        ref = self.members[self.elite_indices[0]]
        x = ref.in_stats.normalize(np.concatenate([states, actions], axis=1))
        ws, bs, act = self._elite_stack()
        out = _kernels.stacked_mlp_forward(x, ws, bs, act)
        d = self.state_dim
        mu = out[:, :, :d]
        log_std = np.clip(out[:, :, d:], *ref.log_std_bounds)
        means = states[None, :, :] + ref.delta_stats.denormalize(mu)
        stds = np.exp(log_std) * ref.delta_stats.std
        return means, stds

    def sample_candidates(self, states, actions, n_samples: int,
                          rng: np.random.Generator):
        """(B, M*n_samples, ds) next-state draws, m-major candidate order."""
        means, stds = self.predict_elites(states, actions)
        m, b, d = means.shape
        eps = rng.standard_normal((m, n_samples, b, d))
        draws = means[:, None, :, :] + stds[:, None, :, :] * eps
        return np.ascontiguousarray(draws.transpose(2, 0, 1, 3).reshape(b, m * n_samples, d))


def sample_next(ensemble: DynamicsEnsemble, member: int, state, action,
                rng: np.random.Generator):
    """Reparameterized draw from one elite member."""
    if member not in ensemble.elite_indices:
        raise ValueError(f"member {member} is not an elite index")
    s = np.atleast_2d(np.asarray(state, dtype=np.float64))
    a = np.atleast_2d(np.asarray(action, dtype=np.float64))
    out = ensemble.members[member].sample(s, a, rng)
    return out[0] if np.asarray(state).ndim == 1 else out


def max_aleatoric(ensemble: DynamicsEnsemble, states, actions) -> np.ndarray:
    """Largest predicted-std norm across elite members, per batch row."""
    single = np.asarray(states).ndim == 1
    _, stds = ensemble.predict_elites(states, actions)
    u = np.linalg.norm(stds, axis=2).max(axis=0)
    return float(u[0]) if single else u


def _nll_and_grad(mu, log_std, target):
    """Gaussian NLL of the normalized delta, averaged over the batch."""
    std = np.exp(log_std)
    z = (target - mu) / std
    nll = float(np.mean(np.sum(0.5 * z * z + log_std, axis=1)))
    b = mu.shape[0]
    dmu = (mu - target) / (std * std) / b
    dlog_std = (1.0 - z * z) / b
    return nll, dmu, dlog_std


def _train_member(x_train, y_train, x_val, states_val, next_val, delta_stats,
                  cfg: EnsembleConfig, rng: np.random.Generator):
    d_out = y_train.shape[1]
    sizes = [x_train.shape[1], *cfg.hidden, 2 * d_out]
    params = init_mlp(sizes, cfg.activation, rng)
    opt = init_adam(params.as_arrays())

    n = x_train.shape[0]
    if cfg.bootstrap:
        pick = rng.integers(0, n, size=n)
        x_fit, y_fit = x_train[pick], y_train[pick]
    else:
        x_fit, y_fit = x_train, y_train

    lo, hi = LOG_STD_BOUNDS
    best_params, best_rmse = params.copy(), math.inf

    def val_rmse(p):
        out = _forward(p, x_val)
        mu = out[:, :d_out]
        pred_next = states_val + delta_stats.denormalize(mu)
        return float(np.sqrt(np.mean((pred_next - next_val) ** 2)))

    for _ in range(cfg.epochs):
        order = rng.permutation(len(x_fit))
        for start in range(0, len(x_fit), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_fit[idx], y_fit[idx]
            out, cache = forward_cached(params, xb)
            mu = out[:, :d_out]
            raw = out[:, d_out:]
            log_std = np.clip(raw, lo, hi)
            nll, dmu, dls = _nll_and_grad(mu, log_std, yb)
            if not np.isfinite(nll):
                raise FloatingPointError("non-finite training loss")
            dls = dls * ((raw > lo) & (raw < hi))  # clamp kills the gradient outside
            grad_out = np.concatenate([dmu, dls], axis=1)
            (dws, dbs), _ = backward(params, cache, grad_out)
            flat_grads = []
            for w, b in zip(dws, dbs):
                flat_grads.extend([w, b])
            new_arrays, opt = adam_step(params.as_arrays(), flat_grads, opt, cfg.lr)
            params = params.with_arrays(new_arrays)
        rmse = val_rmse(params)
        if rmse < best_rmse:
            best_rmse = rmse
            best_params = params.copy()
    return best_params, best_rmse


def train_mle(dataset: OfflineDataset, cfg: EnsembleConfig,
              rng: np.random.Generator) -> DynamicsEnsemble:
    """Fit every member independently (own seed, own bootstrap) and rank by
    validation RMSE of the mean next-state prediction."""
    if len(dataset.val_idx) == 0:
        raise ValueError("dataset needs a validation split")
    tr, va = dataset.train_idx, dataset.val_idx
    inputs = np.concatenate([dataset.states, dataset.actions], axis=1)
    in_stats = NormStats.fit(inputs[tr])
    delta_stats = dataset.delta_stats
    x_all = in_stats.normalize(inputs)
    y_all = delta_stats.normalize(dataset.next_states - dataset.states)

    members, losses = [], []
    for member_rng in rng.spawn(cfg.n_members):
        try:
            params, rmse = _train_member(
                x_all[tr], y_all[tr], x_all[va], dataset.states[va],
                dataset.next_states[va], delta_stats, cfg, member_rng)
        except FloatingPointError:
            # one restart with a fresh stream, then give up
            params, rmse = _train_member(
                x_all[tr], y_all[tr], x_all[va], dataset.states[va],
                dataset.next_states[va], delta_stats, cfg, member_rng.spawn(1)[0])
        members.append(GaussianDynamicsModel(
            params,
            NormStats(in_stats.mean.copy(), in_stats.std.copy()),
            NormStats(delta_stats.mean.copy(), delta_stats.std.copy()),
            val_rmse=rmse,
        ))
        losses.append(rmse)
    losses = np.array(losses)
    elite = list(np.argsort(losses, kind="stable")[:cfg.n_elites])
    return DynamicsEnsemble(members, [int(i) for i in elite], losses)


def save_ensemble(directory, ensemble: DynamicsEnsemble) -> None:
    os.makedirs(directory, exist_ok=True)
    for i, m in enumerate(ensemble.members):
        save_mlp(os.path.join(directory, f"member_{i}.npz"), m.params, extra={
            "in_mean": m.in_stats.mean, "in_std": m.in_stats.std,
            "delta_mean": m.delta_stats.mean, "delta_std": m.delta_stats.std,
            "log_std_bounds": np.array(m.log_std_bounds),
            "val_rmse": np.array(m.val_rmse),
        })
    manifest = {
        "format": 1,
        "n_members": ensemble.n_members,
        "elite_indices": ensemble.elite_indices,
        "val_losses": [float(v) for v in ensemble.val_losses],
    }
    with open(os.path.join(directory, ENSEMBLE_MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_ensemble(directory) -> DynamicsEnsemble:
    manifest_path = os.path.join(directory, ENSEMBLE_MANIFEST)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(
            f"no ensemble manifest at {manifest_path}; run `train-model` first")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    members = []
    for i in range(manifest["n_members"]):
        params, extra = load_mlp(os.path.join(directory, f"member_{i}.npz"))
        members.append(GaussianDynamicsModel(
            params,
            NormStats(extra["in_mean"], extra["in_std"]),
            NormStats(extra["delta_mean"], extra["delta_std"]),
            log_std_bounds=tuple(extra["log_std_bounds"]),
            val_rmse=float(extra["val_rmse"]),
        ))
    return DynamicsEnsemble(members, manifest["elite_indices"],
                            np.array(manifest["val_losses"]))
