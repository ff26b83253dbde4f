"""Adversarial learning of a transition-consistency reward.

A discriminator over (s, a, s') is trained to separate dataset transitions
from transitions proposed by an adversarial dynamics model, which is itself
refined by PPO to fool the discriminator.  Snapshots of the discriminator
are archived on a fixed cadence; the reward of a transition is
``-log(1 - mean snapshot score)``, so it is high exactly where the archived
discriminators agree the transition looks real.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from dynreward import _kernels
from dynreward.envs import NormStats, OfflineDataset, refrigerator_step
from dynreward.nncore import (
    MlpParams,
    adam_step,
    backward,
    forward,
    forward_cached,
    grad_sqnorm_backward,
    init_adam,
    init_mlp,
    load_mlp,
    save_mlp,
)

ARCHIVE_MANIFEST = "manifest.json"
REWARD_CAP_EPS = 1e-6  # mean score is clipped below 1 - eps before the log

ADV_LOG_STD_BOUNDS = (-6.0, 2.0)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


@dataclass
class RewardLearningConfig:
    """Schedule and sizes for the adversarial reward learner.

    Defaults are the refrigerator-scale settings; ``benchmark_reference()``
    returns the large-task preset kept for the record.
    """

    outer_iterations: int = 500
    d_steps: int = 5
    g_steps: int = 5
    disc_hidden: tuple[int, ...] = (32, 32)
    disc_activation: str = "tanh"
    disc_lr: float = 1e-3
    disc_batch: int = 256
    penalty_coef: float = 0.5
    penalty_mode: str = "input"  # or "params"
    model_hidden: tuple[int, ...] = (64, 64)
    model_lr: float = 3e-4
    value_hidden: tuple[int, ...] = (64, 64)
    value_lr: float = 1e-3
    ppo_batch: int = 2000
    ppo_minibatch: int = 256
    ppo_clip: float = 0.2
    archive_capacity: int = 200
    archive_interval: int = 1

    @staticmethod
    def benchmark_reference() -> "RewardLearningConfig":
        """Large-benchmark settings; recorded, not exercised at scale."""
        return RewardLearningConfig(
            outer_iterations=5000,
            disc_hidden=(128, 256, 256, 128),
            disc_lr=1e-3,
            model_hidden=(256, 256),
            model_lr=3e-4,
            value_hidden=(256, 256),
            value_lr=1e-3,
            ppo_batch=20000,
            penalty_coef=0.5,
            archive_capacity=40,
            archive_interval=10,
        )


class DiscriminatorNet:
    """(s, a, s') -> score in (0, 1); inputs are normalized internally."""

    def __init__(self, params: MlpParams, in_stats: NormStats):
        if params.out_dim != 1:
            raise ValueError("discriminator must output one logit")
        self.params = params
        self.in_stats = in_stats

    @classmethod
    def create(cls, state_dim: int, action_dim: int, hidden, activation: str,
               in_stats: NormStats, rng: np.random.Generator) -> "DiscriminatorNet":
        sizes = [2 * state_dim + action_dim, *hidden, 1]
        return cls(init_mlp(sizes, activation, rng), in_stats)

    def copy(self) -> "DiscriminatorNet":
        return DiscriminatorNet(
            self.params.copy(),
            NormStats(self.in_stats.mean.copy(), self.in_stats.std.copy()),
        )

    def normalize(self, sas: np.ndarray) -> np.ndarray:
        return self.in_stats.normalize(sas)

    def logits(self, sas: np.ndarray) -> np.ndarray:
        return forward(self.params, self.normalize(sas))[:, 0]

    def predict_sas(self, sas: np.ndarray) -> np.ndarray:
        """Scores for raw concatenated (s, a, s') rows."""
        return sigmoid(self.logits(sas))


def concat_sas(states, actions, next_states) -> np.ndarray:
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    next_states = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
    return np.concatenate([states, actions, next_states], axis=1)


class DiscriminatorArchive:
    """Bounded FIFO of discriminator snapshots, pushed every ``interval``
    observed iterations; snapshots are deep copies, immune to later training.

    Any object with ``predict_sas`` works as a snapshot (tests use constant
    stubs); stacks of real DiscriminatorNet snapshots are evaluated through
    the batched kernel.
    """

    def __init__(self, capacity: int, interval: int = 1):
        if capacity < 1 or interval < 1:
            raise ValueError("capacity and interval must be >= 1")
        self.capacity = capacity
        self.interval = interval
        self.snapshots: deque = deque(maxlen=capacity)
        self.iterations_seen = 0
        self._stack = None

    def __len__(self) -> int:
        return len(self.snapshots)

    def observe(self, disc: DiscriminatorNet) -> bool:
        """Count one outer iteration; snapshot when the cadence fires."""
        self.iterations_seen += 1
        if self.iterations_seen % self.interval == 0:
            self.push(disc)
            return True
        return False

    def push(self, disc) -> None:
        self.snapshots.append(disc.copy() if hasattr(disc, "copy") else disc)
        self._stack = None

    def _kernel_stack(self):
        if self._stack is None:
            snaps = list(self.snapshots)
            if not all(isinstance(s, DiscriminatorNet) for s in snaps):
                return None
            n_layers = snaps[0].params.n_layers
            ws = [np.ascontiguousarray(np.stack([s.params.weights[l] for s in snaps]))
                  for l in range(n_layers)]
            bs = [np.ascontiguousarray(np.stack([s.params.biases[l] for s in snaps]))
                  for l in range(n_layers)]
            self._stack = (ws, bs, snaps[0].params.activation,
                           snaps[0].in_stats)
        return self._stack

    def mean_scores(self, sas: np.ndarray) -> np.ndarray:
        """Average snapshot score per row."""
        if not self.snapshots:
            raise ValueError("archive is empty")
        sas = np.atleast_2d(np.asarray(sas, dtype=np.float64))
        stack = self._kernel_stack()
        if stack is not None:
            ws, bs, act, in_stats = stack
            logits = _kernels.stacked_mlp_forward(in_stats.normalize(sas), ws, bs, act)
            return sigmoid(logits[:, :, 0]).mean(axis=0)
        total = np.zeros(sas.shape[0])
        for snap in self.snapshots:
            total += np.asarray(snap.predict_sas(sas), dtype=np.float64)
        return total / len(self.snapshots)

    def reward_sas(self, sas: np.ndarray) -> np.ndarray:
        mean = np.minimum(self.mean_scores(sas), 1.0 - REWARD_CAP_EPS)
        return -np.log1p(-mean)

    def reward(self, states, actions, next_states) -> np.ndarray:
        return self.reward_sas(concat_sas(states, actions, next_states))


def dynamics_reward_eval(archive: DiscriminatorArchive, state, action, next_state):
    """Reward of one transition (or a batch): -log(1 - mean snapshot score)."""
    single = np.asarray(state).ndim == 1
    out = archive.reward(state, action, next_state)
    return float(out[0]) if single else out


def _loss_parts(logits: np.ndarray, is_real: bool):
    """Per-sample loss c(o), plus c'(o) and c''(o).

    real:  c(o) = -log sigmoid(o)      = softplus(-o)
    fake:  c(o) = -log(1 - sigmoid(o)) = softplus(o)
    """
    s = sigmoid(logits)
    if is_real:
        return softplus(-logits), s - 1.0, s * (1.0 - s)
    return softplus(logits), s, s * (1.0 - s)


def discriminator_loss(disc: DiscriminatorNet, real_sas: np.ndarray,
                       fake_sas: np.ndarray, eta: float,
                       penalty_mode: str = "input"):
    """Penalized classification loss and its parameter gradients.

    Minimized loss: mean softplus(-logit_real) + mean softplus(logit_fake)
    plus eta times a gradient penalty.  In "input" mode the penalty is the
    mean squared norm of the per-sample input gradient of the loss (norms
    taken in the discriminator's normalized input space); in "params" mode
    it is the squared norm of the parameter gradient, with its own gradient
    formed by a finite-difference Hessian-vector product.
    Returns (total loss, flat gradient list, dict of parts).
    """
    real_sas = np.atleast_2d(real_sas)
    fake_sas = np.atleast_2d(fake_sas)
    if real_sas.shape[0] == 0 or fake_sas.shape[0] == 0:
        raise ValueError("both batches must be non-empty")
    if penalty_mode not in ("input", "params"):
        raise ValueError(f"unknown penalty mode {penalty_mode!r}")

    params = disc.params
    batches = [(disc.normalize(real_sas), True), (disc.normalize(fake_sas), False)]

    def base_loss_and_grads(p: MlpParams):
        total = 0.0
        dws_acc = [np.zeros_like(w) for w in p.weights]
        dbs_acc = [np.zeros_like(b) for b in p.biases]
        for x, is_real in batches:
            out, cache = forward_cached(p, x)
            c, c1, _ = _loss_parts(out[:, 0], is_real)
            total += float(c.mean())
            (dws, dbs), _ = backward(p, cache, (c1 / len(c))[:, None])
            for acc, g in zip(dws_acc, dws):
                acc += g
            for acc, g in zip(dbs_acc, dbs):
                acc += g
        flat = []
        for w, b in zip(dws_acc, dbs_acc):
            flat.extend([w, b])
        return total, flat

    base, grads = base_loss_and_grads(params)
    penalty = 0.0
    if eta > 0.0 and penalty_mode == "input":
        for x, is_real in batches:
            out, cache = forward_cached(params, x)
            _, c1, c2 = _loss_parts(out[:, 0], is_real)
            b = x.shape[0]
            # per-sample penalty c'(o)^2 ||d o/d x||^2 splits into a term
            # through o (standard backward) and the double-backprop term
            sqnorms, (pdws, pdbs) = grad_sqnorm_backward(params, x, c1 * c1 / b)
            penalty += float(np.mean(c1 * c1 * sqnorms))
            (dws, dbs), _ = backward(
                params, cache, (2.0 * c1 * c2 * sqnorms / b)[:, None])
            k = 0
            for w_pen, b_pen, w_o, b_o in zip(pdws, pdbs, dws, dbs):
                grads[k] = grads[k] + eta * (w_pen + w_o)
                grads[k + 1] = grads[k + 1] + eta * (b_pen + b_o)
                k += 2
    elif eta > 0.0 and penalty_mode == "params":
        flat_g = np.concatenate([g.ravel() for g in grads])
        penalty = float(flat_g @ flat_g)
        norm = math.sqrt(penalty)
        if norm > 0:
            h = 1e-5 / norm
            arrays = params.as_arrays()
            shifted = [a + h * g for a, g in zip(arrays, grads)]
            _, g_plus = base_loss_and_grads(params.with_arrays(shifted))
            shifted = [a - h * g for a, g in zip(arrays, grads)]
            _, g_minus = base_loss_and_grads(params.with_arrays(shifted))
            for k in range(len(grads)):
                hvp = (g_plus[k] - g_minus[k]) / (2.0 * h)
                grads[k] = grads[k] + eta * 2.0 * hvp

    total = base + eta * penalty
    if not np.isfinite(total):
        raise FloatingPointError("non-finite discriminator loss")
    return total, grads, {"base": base, "penalty": penalty}


class AdversarialModelState:
    """Stochastic model (s, a) -> Gaussian over the next-state delta, a value
    network over (s, a), and their optimizer states."""

    def __init__(self, state_dim: int, action_dim: int, in_stats: NormStats,
                 delta_stats: NormStats, cfg: RewardLearningConfig,
                 rng: np.random.Generator):
        self.state_dim = state_dim
        self.in_stats = in_stats
        self.delta_stats = delta_stats
        self.actor = init_mlp([state_dim + action_dim, *cfg.model_hidden,
                               2 * state_dim], "tanh", rng)
        self.critic = init_mlp([state_dim + action_dim, *cfg.value_hidden, 1],
                               "tanh", rng)
        self.actor_opt = init_adam(self.actor.as_arrays())
        self.critic_opt = init_adam(self.critic.as_arrays())

    def _heads(self, params_out):
        d = self.state_dim
        mu = params_out[:, :d]
        raw = params_out[:, d:]
        log_std = np.clip(raw, *ADV_LOG_STD_BOUNDS)
        return mu, log_std, raw

    def sample_next(self, states, actions, rng: np.random.Generator):
        """Draw s' and the log-density of the normalized-delta Gaussian."""
        x = self.in_stats.normalize(np.concatenate([states, actions], axis=1))
        out = forward(self.actor, x)
        mu, log_std, _ = self._heads(out)
        std = np.exp(log_std)
        eps = rng.standard_normal(mu.shape)
        delta = mu + std * eps
        logp = np.sum(-0.5 * eps * eps - log_std - 0.5 * math.log(2 * math.pi), axis=1)
        next_states = states + self.delta_stats.denormalize(delta)
        return next_states, delta, logp

    def log_prob(self, states, actions, delta_norm):
        x = self.in_stats.normalize(np.concatenate([states, actions], axis=1))
        out = forward(self.actor, x)
        mu, log_std, _ = self._heads(out)
        z = (delta_norm - mu) / np.exp(log_std)
        return np.sum(-0.5 * z * z - log_std - 0.5 * math.log(2 * math.pi), axis=1)


def adversarial_model_update(adv: AdversarialModelState, disc: DiscriminatorNet,
                             dataset: OfflineDataset, cfg: RewardLearningConfig,
                             rng: np.random.Generator) -> dict:
    """One PPO epoch of the model-as-agent bandit.

    (s, a) pairs come from the dataset, the model proposes s', and the
    per-sample reward is -log(1 - D(s, a, s')): PPO pushes the model toward
    transitions the discriminator currently believes.
    """
    tr = dataset.train_idx
    pick = rng.choice(len(tr), size=min(cfg.ppo_batch, len(tr)), replace=True)
    idx = tr[pick]
    states = dataset.states[idx]
    actions = dataset.actions[idx]
    next_states, delta, logp_old = adv.sample_next(states, actions, rng)

    scores = disc.predict_sas(concat_sas(states, actions, next_states))
    rewards = -np.log1p(-np.minimum(scores, 1.0 - REWARD_CAP_EPS))

    x = adv.in_stats.normalize(np.concatenate([states, actions], axis=1))
    values = forward(adv.critic, x)[:, 0]
    adv_raw = rewards - values
    adv_std = adv_raw.std()
    advantages = (adv_raw - adv_raw.mean()) / (adv_std + 1e-8)

    n = len(idx)
    order = rng.permutation(n)
    for start in range(0, n, cfg.ppo_minibatch):
        mb = order[start:start + cfg.ppo_minibatch]
        _ppo_actor_step(adv, x[mb], delta[mb], logp_old[mb], advantages[mb], cfg)
        _critic_step(adv, x[mb], rewards[mb], cfg)
    return {
        "mean_reward": float(rewards.mean()),
        "mean_score": float(scores.mean()),
        "mean_advantage": float(advantages.mean()),
    }


def _ppo_actor_step(adv: AdversarialModelState, x, delta, logp_old, advantages,
                    cfg: RewardLearningConfig):
    out, cache = forward_cached(adv.actor, x)
    d = adv.state_dim
    mu, log_std, raw = adv._heads(out)
    std = np.exp(log_std)
    z = (delta - mu) / std
    logp = np.sum(-0.5 * z * z - log_std - 0.5 * math.log(2 * math.pi), axis=1)
    ratio = np.exp(np.clip(logp - logp_old, -20.0, 20.0))
    eps = cfg.ppo_clip
    # clipped-surrogate gradient mask: pass-through only when the unclipped
    # branch is active in the min
    active = np.where(advantages >= 0, ratio <= 1.0 + eps, ratio >= 1.0 - eps)
    b = len(advantages)
    dlogp = -(advantages * ratio * active) / b  # d(loss)/d logp
    dmu = dlogp[:, None] * (z / std)
    dls = dlogp[:, None] * (z * z - 1.0)
    dls = dls * ((raw > ADV_LOG_STD_BOUNDS[0]) & (raw < ADV_LOG_STD_BOUNDS[1]))
    grad_out = np.concatenate([dmu, dls], axis=1)
    (dws, dbs), _ = backward(adv.actor, cache, grad_out)
    flat = []
    for w, bb in zip(dws, dbs):
        flat.extend([w, bb])
    new_arrays, adv.actor_opt = adam_step(adv.actor.as_arrays(), flat,
                                          adv.actor_opt, cfg.model_lr)
    adv.actor = adv.actor.with_arrays(new_arrays)


def _critic_step(adv: AdversarialModelState, x, targets, cfg: RewardLearningConfig):
    out, cache = forward_cached(adv.critic, x)
    resid = out[:, 0] - targets
    grad_out = (2.0 * resid / len(targets))[:, None]
    (dws, dbs), _ = backward(adv.critic, cache, grad_out)
    flat = []
    for w, bb in zip(dws, dbs):
        flat.extend([w, bb])
    new_arrays, adv.critic_opt = adam_step(adv.critic.as_arrays(), flat,
                                           adv.critic_opt, cfg.value_lr)
    adv.critic = adv.critic.with_arrays(new_arrays)


def _discriminator_step(disc: DiscriminatorNet, opt, adv: AdversarialModelState,
                        dataset: OfflineDataset, cfg: RewardLearningConfig,
                        rng: np.random.Generator):
    tr = dataset.train_idx
    real_idx = tr[rng.choice(len(tr), size=min(cfg.disc_batch, len(tr)), replace=True)]
    fake_idx = tr[rng.choice(len(tr), size=min(cfg.disc_batch, len(tr)), replace=True)]
    real = concat_sas(dataset.states[real_idx], dataset.actions[real_idx],
                      dataset.next_states[real_idx])
    f_states = dataset.states[fake_idx]
    f_actions = dataset.actions[fake_idx]
    f_next, _, _ = adv.sample_next(f_states, f_actions, rng)
    fake = concat_sas(f_states, f_actions, f_next)
    loss, grads, parts = discriminator_loss(disc, real, fake, cfg.penalty_coef,
                                            cfg.penalty_mode)
    new_arrays, opt = adam_step(disc.params.as_arrays(), grads, opt, cfg.disc_lr)
    disc.params = disc.params.with_arrays(new_arrays)
    return opt, loss, parts


@dataclass
class RewardLearningResult:
    archive: DiscriminatorArchive
    discriminator: DiscriminatorNet
    adversarial_model: AdversarialModelState
    history: list[dict] = field(default_factory=list)


def train_dynamics_reward(dataset: OfflineDataset, cfg: RewardLearningConfig,
                          rng: np.random.Generator) -> RewardLearningResult:
    """Alternate d_steps discriminator steps with g_steps PPO model updates,
    snapshotting the discriminator into the archive every ``interval``
    outer iterations."""
    sd, ad = dataset.state_dim, dataset.action_dim
    tr = dataset.train_idx
    sas = concat_sas(dataset.states[tr], dataset.actions[tr], dataset.next_states[tr])
    in_stats = NormStats.fit(sas)
    model_in_stats = NormStats.fit(
        np.concatenate([dataset.states[tr], dataset.actions[tr]], axis=1))

    disc_rng, adv_rng, loop_rng = rng.spawn(3)
    disc = DiscriminatorNet.create(sd, ad, cfg.disc_hidden, cfg.disc_activation,
                                   in_stats, disc_rng)
    adv = AdversarialModelState(sd, ad, model_in_stats, dataset.delta_stats,
                                cfg, adv_rng)
    archive = DiscriminatorArchive(cfg.archive_capacity, cfg.archive_interval)
    opt = init_adam(disc.params.as_arrays())

    history = []
    for _ in range(cfg.outer_iterations):
        d_loss = d_pen = 0.0
        for _ in range(cfg.d_steps):
            opt, loss, parts = _discriminator_step(disc, opt, adv, dataset, cfg,
                                                   loop_rng)
            d_loss, d_pen = loss, parts["penalty"]
        g_info = {}
        for _ in range(cfg.g_steps):
            g_info = adversarial_model_update(adv, disc, dataset, cfg, loop_rng)
        archive.observe(disc)
        history.append({
            "disc_loss": d_loss,
            "penalty": d_pen,
            "fake_score": g_info.get("mean_score", math.nan),
        })
    return RewardLearningResult(archive, disc, adv, history)


def save_archive(directory, archive: DiscriminatorArchive) -> None:
    os.makedirs(directory, exist_ok=True)
    snaps = list(archive.snapshots)
    for i, snap in enumerate(snaps):
        if not isinstance(snap, DiscriminatorNet):
            raise TypeError("only DiscriminatorNet snapshots can be persisted")
        save_mlp(os.path.join(directory, f"snapshot_{i}.npz"), snap.params, extra={
            "in_mean": snap.in_stats.mean, "in_std": snap.in_stats.std,
        })
    manifest = {
        "format": 1,
        "n_snapshots": len(snaps),
        "capacity": archive.capacity,
        "interval": archive.interval,
        "iterations_seen": archive.iterations_seen,
    }
    with open(os.path.join(directory, ARCHIVE_MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_archive(directory) -> DiscriminatorArchive:
    manifest_path = os.path.join(directory, ARCHIVE_MANIFEST)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(
            f"no archive manifest at {manifest_path}; run `train-reward` first")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    archive = DiscriminatorArchive(manifest["capacity"], manifest["interval"])
    for i in range(manifest["n_snapshots"]):
        params, extra = load_mlp(os.path.join(directory, f"snapshot_{i}.npz"))
        archive.push(DiscriminatorNet(params, NormStats(extra["in_mean"],
                                                        extra["in_std"])))
    archive.iterations_seen = manifest["iterations_seen"]
    return archive


def reward_mae_correlation(archive: DiscriminatorArchive, ensemble, policy,
                           env, dataset: OfflineDataset, n_trajectories: int,
                           rng: np.random.Generator,
                           horizon: int | None = None) -> tuple[float, list[dict]]:
    """Roll the policy through the ensemble WITHOUT filtering and relate the
    reward of each model transition to its one-step error.

    The true next state replays the environment's door schedule at the
    rollout's step index.  Returns (Pearson correlation, per-step rows); the
    correlation is nan when the samples are degenerate.
    """
    if len(archive) == 0:
        raise ValueError("archive is empty")
    horizon = horizon or env.params.episode_length
    start_idx = rng.integers(0, len(dataset), size=n_trajectories)
    states = dataset.states[start_idx].copy()
    rows = []
    for t in range(horizon):
        actions = np.stack([
            np.asarray(policy.act(states[i], rng), dtype=np.float64).reshape(-1)
            for i in range(n_trajectories)
        ])
        members = rng.integers(0, ensemble.n_elites, size=n_trajectories)
        cand = ensemble.sample_candidates(states, actions, 1, rng)
        next_states = cand[np.arange(n_trajectories), members, :]
        z = env.params.door(t)
        true_next = np.array([
            [refrigerator_step(float(states[i, 0]), float(actions[i, 0]), z)]
            for i in range(n_trajectories)
        ])
        mae = np.abs(next_states - true_next).sum(axis=1)
        r_model = archive.reward(states, actions, next_states)
        r_true = archive.reward(states, actions, true_next)
        for i in range(n_trajectories):
            rows.append({"mae": float(mae[i]), "r_d_model": float(r_model[i]),
                         "r_d_true": float(r_true[i])})
        states = next_states
    maes = np.array([r["mae"] for r in rows])
    rs = np.array([r["r_d_model"] for r in rows])
    if maes.std() == 0.0 or rs.std() == 0.0:
        return float("nan"), rows
    corr = float(np.corrcoef(maes, rs)[0, 1])
    return corr, rows


def write_correlation_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["mae", "r_d_model", "r_d_true"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
