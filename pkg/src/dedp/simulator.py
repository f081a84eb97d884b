"""Seeded rollouts and Monte Carlo value estimates.

Rollout ``i`` of a run with base seed ``seed`` draws its uniforms from
``SeedSequence(seed, spawn_key=(i,))``, so a rollout's result does not depend
on how many others run beside it or in which batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DedpModel, Trajectory, check_state, event_distribution_batch, reward_batch


def default_horizon(gamma: float, tol: float = 1e-6) -> int:
    """Smallest H >= 1 with gamma**H <= tol."""
    if gamma <= 0.0:
        return 1
    return max(1, int(math.ceil(math.log(tol) / math.log(gamma))))


@dataclass(frozen=True)
class RolloutConfig:
    horizon: int
    seed: int = 0
    num_rollouts: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.num_rollouts < 1:
            raise ValueError("num_rollouts must be >= 1")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    num_samples: int


def rollout_uniforms(seed: int, indices, horizon: int) -> np.ndarray:
    """One uniform per step for each rollout index, shape (len(indices), horizon)."""
    return np.stack(
        [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(i),))).random(horizon) for i in indices]
    )


def rollout_batch(model: DedpModel, policy, s0, uniforms: np.ndarray):
    """Vectorised rollouts driven by pre-drawn uniforms.

    Returns (states, events) with shapes (N, H+1, M) and (N, H); event 0 is null.
    """
    n, horizon = uniforms.shape
    M = model.num_components
    states = np.empty((n, horizon + 1, M), dtype=int)
    events = np.empty((n, horizon), dtype=int)
    states[:, 0] = np.asarray(check_state(model, s0))
    deltas = np.vstack([np.zeros((1, M), dtype=int), model.deltas])
    ci = model.clock_index
    for t in range(horizon):
        s = states[:, t]
        p = event_distribution_batch(model, s, policy.act_batch(s))
        cum = np.cumsum(p, axis=1)
        # scale u by the row total so rounding can never select a zero-probability tail event
        u = uniforms[:, t] * cum[:, -1]
        v = np.argmax(u[:, None] < cum, axis=1)
        nxt = s + deltas[v]
        if ci is not None:
            nxt[:, ci] = (nxt[:, ci] + 1) % model.period
        states[:, t + 1] = nxt
        events[:, t] = v
    return states, events


def discounted_returns(model: DedpModel, states: np.ndarray) -> np.ndarray:
    """sum_{t=0}^{H} gamma^t R(s_t) for each rollout in ``states`` (N, H+1, M)."""
    r = reward_batch(model, states)
    disc = model.gamma ** np.arange(states.shape[1])
    return r @ disc


def simulate(model: DedpModel, policy, s0, config: RolloutConfig) -> Trajectory:
    states, events = rollout_batch(model, policy, s0, rollout_uniforms(config.seed, [0], config.horizon))
    actions = policy.act_batch(states[0, :-1])
    return Trajectory(tuple(map(tuple, states[0])), tuple(events[0]), tuple(map(tuple, actions)))


def rollout_return(model: DedpModel, policy, s0, config: RolloutConfig) -> float:
    states, _ = rollout_batch(model, policy, s0, rollout_uniforms(config.seed, [0], config.horizon))
    return float(discounted_returns(model, states)[0])


def monte_carlo_value(model: DedpModel, policy, s0, config: RolloutConfig, batch_size: int = 512) -> ValueEstimate:
    """Mean and standard error of the discounted return over ``num_rollouts`` rollouts.

    With a single rollout the standard error is reported as 0.
    """
    returns = []
    n = config.num_rollouts
    for start in range(0, n, batch_size):
        idx = range(start, min(n, start + batch_size))
        states, _ = rollout_batch(model, policy, s0, rollout_uniforms(config.seed, idx, config.horizon))
        returns.append(discounted_returns(model, states))
    r = np.concatenate(returns)
    se = float(r.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return ValueEstimate(float(r.mean()), se, n)


def mean_occupancy(model: DedpModel, policy, s0, config: RolloutConfig) -> np.ndarray:
    """Average population per (time, component) over the configured rollouts, shape (H+1, M)."""
    states, _ = rollout_batch(
        model, policy, s0, rollout_uniforms(config.seed, range(config.num_rollouts), config.horizon)
    )
    return states.mean(axis=0)
