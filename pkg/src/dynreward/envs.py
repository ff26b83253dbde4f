"""Refrigerator temperature-control environment and offline datasets.

The plant is one-dimensional: the observation is the current temperature,
the action is the compressor's normalized power.  A hidden door flag z
switches the leak rate toward room temperature; it follows a fixed periodic
schedule and is *not* observed.  Offline data is collected with a noisy
proportional controller.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

ROOM_TEMP = 15.0
TARGET_TEMP = -1.0


@dataclass(frozen=True)
class RefrigeratorParams:
    """Plant, schedule and episode constants (all configurable per run)."""

    episode_length: int = 200
    action_low: float = 0.0
    action_high: float = 2.0
    init_low: float = -5.0
    init_high: float = 10.0
    door_period: int = 50
    door_open_start: int = 33  # z=1 for t mod period in [open_start, period)

    def door(self, t: int) -> int:
        if t < 0:
            raise ValueError("step index must be non-negative")
        return 1 if (t % self.door_period) >= self.door_open_start else 0


def refrigerator_step(temp: float, a: float, z: int) -> float:
    """Next temperature: temp - a + (0.02 + 0.06 z) (15 - temp)."""
    if z not in (0, 1):
        raise ValueError("door flag must be 0 or 1")
    return temp - a + (0.02 + 0.06 * z) * (ROOM_TEMP - temp)


def task_reward(temp) -> np.ndarray | float:
    """Negative distance to the -1 degree target; 0 at the target."""
    return -np.abs(np.asarray(temp, dtype=np.float64) + 1.0)


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    task_reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class NormStats:
    """Per-dimension mean/std with a floor keeping std strictly positive."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "NormStats":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return cls(mean=x.mean(axis=0), std=np.maximum(x.std(axis=0), 1e-8))

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


CSV_HEADER = ["s", "a", "r", "s_next", "terminal"]


@dataclass
class OfflineDataset:
    """Columnar transition store with a train/validation split.

    Normalization statistics are fit on the train split only, so they are
    invariant to whatever lands in the validation tail.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    val_fraction: float = 0.1
    train_idx: np.ndarray = field(init=False)
    val_idx: np.ndarray = field(init=False)
    state_stats: NormStats = field(init=False)
    delta_stats: NormStats = field(init=False)

    def __post_init__(self):
        n = len(self.states)
        if n == 0:
            raise ValueError("dataset is empty")
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64).reshape(n, -1))
        self.actions = np.asarray(self.actions, dtype=np.float64).reshape(n, -1)
        self.rewards = np.asarray(self.rewards, dtype=np.float64).reshape(n)
        self.next_states = np.asarray(self.next_states, dtype=np.float64).reshape(n, -1)
        self.terminals = np.asarray(self.terminals, dtype=bool).reshape(n)
        n_val = int(round(n * self.val_fraction))
        n_val = min(max(n_val, 0), n - 1)
        self.train_idx = np.arange(0, n - n_val)
        self.val_idx = np.arange(n - n_val, n)
        train_states = self.states[self.train_idx]
        train_deltas = self.next_states[self.train_idx] - train_states
        self.state_stats = NormStats.fit(train_states)
        self.delta_stats = NormStats.fit(train_deltas)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def transitions(self) -> list[Transition]:
        return [
            Transition(self.states[i].copy(), self.actions[i].copy(),
                       float(self.rewards[i]), self.next_states[i].copy(),
                       bool(self.terminals[i]))
            for i in range(len(self))
        ]

    def save_csv(self, path) -> None:
        if self.state_dim != 1 or self.action_dim != 1:
            raise ValueError("CSV format is defined for 1-D state/action data")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for i in range(len(self)):
                writer.writerow([
                    repr(float(self.states[i, 0])),
                    repr(float(self.actions[i, 0])),
                    repr(float(self.rewards[i])),
                    repr(float(self.next_states[i, 0])),
                    int(self.terminals[i]),
                ])

    @classmethod
    def load_csv(cls, path, val_fraction: float = 0.1) -> "OfflineDataset":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != CSV_HEADER:
                raise ValueError(f"unexpected dataset header {header}")
            for row in reader:
                rows.append(row)
        if not rows:
            raise ValueError(f"dataset file {path} has no rows")
        arr = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
        return cls(
            states=arr[:, 0:1],
            actions=arr[:, 1:2],
            rewards=arr[:, 2],
            next_states=arr[:, 3:4],
            terminals=arr[:, 4] != 0.0,
            val_fraction=val_fraction,
        )


class RefrigeratorEnv:
    """Fixed-length episodes; step() applies the door schedule internally."""

    def __init__(self, params: RefrigeratorParams | None = None):
        self.params = params or RefrigeratorParams()
        self._temp = None
        self._t = 0

    @property
    def state_dim(self) -> int:
        return 1

    @property
    def action_dim(self) -> int:
        return 1

    @property
    def action_bounds(self) -> tuple[float, float]:
        return (self.params.action_low, self.params.action_high)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._temp = float(rng.uniform(self.params.init_low, self.params.init_high))
        self._t = 0
        return np.array([self._temp])

    def clip_action(self, a) -> np.ndarray:
        return np.clip(np.asarray(a, dtype=np.float64),
                       self.params.action_low, self.params.action_high)

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        """Returns (next_obs, reward, truncated, info); reward is evaluated
        at the temperature reached by the step."""
        if self._temp is None:
            raise RuntimeError("call reset() before step()")
        a = float(self.clip_action(action).reshape(()))
        z = self.params.door(self._t)
        self._temp = refrigerator_step(self._temp, a, z)
        self._t += 1
        truncated = self._t >= self.params.episode_length
        reward = float(task_reward(self._temp))
        return np.array([self._temp]), reward, truncated, {"z": z, "t": self._t}


class ProportionalPolicy:
    """a = gain * temp + offset plus optional Gaussian noise, clipped."""

    def __init__(self, gain: float, offset: float, noise_std: float = 0.0,
                 bounds: tuple[float, float] = (0.0, 2.0)):
        self.gain = gain
        self.offset = offset
        self.noise_std = noise_std
        self.bounds = bounds

    def mean_action(self, state) -> np.ndarray:
        temp = np.asarray(state, dtype=np.float64)[..., 0]
        return np.atleast_1d(self.gain * temp + self.offset)

    def act(self, state, rng: np.random.Generator) -> np.ndarray:
        mean = self.mean_action(state)
        a = mean if self.noise_std == 0.0 else mean + self.noise_std * rng.standard_normal(mean.shape)
        return np.clip(a, self.bounds[0], self.bounds[1])


def behavior_policy(bounds: tuple[float, float] = (0.0, 2.0)) -> ProportionalPolicy:
    """The data-collection controller: N(0.2 temp + 0.75, std 0.1), clipped."""
    return ProportionalPolicy(0.2, 0.75, 0.1, bounds)


def held_out_test_policy(bounds: tuple[float, float] = (0.0, 2.0)) -> ProportionalPolicy:
    """Deterministic controller far from the data-collection line; used by
    the rollout-error studies to probe out-of-distribution behavior."""
    return ProportionalPolicy(0.05, 0.35, 0.0, bounds)


def collect_offline_dataset(env: RefrigeratorEnv, policy, n_steps: int,
                            rng: np.random.Generator,
                            val_fraction: float = 0.1) -> OfflineDataset:
    """Roll the policy for exactly n_steps with the door schedule active,
    resetting every episode_length steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    states = np.empty((n_steps, 1))
    actions = np.empty((n_steps, 1))
    rewards = np.empty(n_steps)
    next_states = np.empty((n_steps, 1))
    terminals = np.zeros(n_steps, dtype=bool)
    obs = env.reset(rng)
    for i in range(n_steps):
        a = np.asarray(policy.act(obs, rng), dtype=np.float64).reshape(1)
        nxt, r, truncated, _ = env.step(a)
        states[i] = obs
        actions[i] = a
        rewards[i] = r
        next_states[i] = nxt
        obs = env.reset(rng) if truncated else nxt
    return OfflineDataset(states, actions, rewards, next_states, terminals,
                          val_fraction=val_fraction)


@dataclass
class EvalResult:
    returns: np.ndarray            # per-episode sums of task reward
    episode_errors: np.ndarray     # per-episode mean |temp - target|
    episode_length: int

    @property
    def mean_return(self) -> float:
        return float(self.returns.mean())

    @property
    def mean_temp_error(self) -> float:
        return float(self.episode_errors.mean())


def evaluate_policy(env: RefrigeratorEnv, policy, n_episodes: int,
                    rng: np.random.Generator) -> EvalResult:
    """Average fixed-length episode returns; by construction
    -return == mean error * episode_length for every episode."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    ep_len = env.params.episode_length
    returns = np.empty(n_episodes)
    for e in range(n_episodes):
        obs = env.reset(rng)
        total = 0.0
        for _ in range(ep_len):
            a = policy.act(obs, rng)
            obs, r, truncated, _ = env.step(a)
            total += r
        returns[e] = total
    errors = -returns / ep_len
    return EvalResult(returns=returns, episode_errors=errors, episode_length=ep_len)
