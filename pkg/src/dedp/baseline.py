"""Monte Carlo policy-gradient baseline for deterministic policies.

A deterministic policy has no score function, so the likelihood-ratio
estimator is unavailable.  The gradient of the Gaussian-smoothed value
E_eps[V(theta + sigma eps)] is estimated instead from antithetic pairs

    g = 1 / (2 sigma K) sum_k [V(theta + sigma eps_k) - V(theta - sigma eps_k)] eps_k

where both members of a pair share rollout seeds (common random numbers).
The ``forward`` mode replaces V(theta - sigma eps) by V(theta) and divides by sigma.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .simulator import RolloutConfig, default_horizon, monte_carlo_value
from .vi import EpochRecord


@dataclass(frozen=True)
class PgConfig:
    epochs: int = 150
    pairs: int = 4  # antithetic perturbation pairs per epoch
    rollouts: int = 16  # rollouts per value estimate
    sigma: float = 0.1
    learning_rate: float = 1.0
    mode: str = "central"  # central (antithetic) or forward differences
    normalize: bool = True  # scale the step by 1 / |g| so lr is a step length in theta
    seed: int = 0
    horizon: int | None = None
    mc_rollouts: int = 32
    mc_seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.pairs < 1 or self.rollouts < 1 or self.mc_rollouts < 1:
            raise ConfigError("PG counts must be positive")
        if self.sigma <= 0 or self.learning_rate <= 0:
            raise ConfigError("PG sigma and learning rate must be positive")
        if self.mode not in PG_MODES:
            raise ConfigError(f"PG mode must be one of {PG_MODES}, got {self.mode!r}")


PG_MODES = ("central", "forward")


def _stream(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def smoothed_gradient(model, policy, s0, horizon: int, pairs: int, rollouts: int, sigma: float,
                      seed: int, epoch: int = 0, mode: str = "central") -> np.ndarray:
    """Gaussian-smoothing estimate of dV/dtheta from ``pairs`` perturbation directions."""
    rng = _stream(seed, epoch, 0)
    grad = np.zeros(policy.n_params)
    for k in range(pairs):
        eps = rng.standard_normal(policy.n_params)
        cfg = RolloutConfig(horizon, int(rng.integers(2**63)), rollouts)
        up = monte_carlo_value(model, policy.with_theta(policy.theta + sigma * eps), s0, cfg).mean
        if mode == "central":
            down = monte_carlo_value(model, policy.with_theta(policy.theta - sigma * eps), s0, cfg).mean
            grad += (up - down) / (2.0 * sigma) * eps
        else:
            grad += (up - monte_carlo_value(model, policy, s0, cfg).mean) / sigma * eps
    return grad / pairs


def pg_optimize(model, policy_init, config: PgConfig | None = None, s0=None, callback=None):
    """Stochastic gradient ascent on the Monte Carlo value.

    Records follow the solver's history schema; ``elbo`` is NaN.
    Returns (policy, list of EpochRecord).
    """
    cfg = config or PgConfig()
    s0 = model.initial_state if s0 is None else s0
    if s0 is None:
        raise ValueError("no initial state given and the model has none")
    H = default_horizon(model.gamma) if cfg.horizon is None else cfg.horizon
    mc_cfg = RolloutConfig(H, cfg.mc_seed, cfg.mc_rollouts)
    policy = policy_init
    history = []
    t_start = time.perf_counter()

    def record(epoch, gnorm):
        est = monte_carlo_value(model, policy, s0, mc_cfg)
        rec = EpochRecord(epoch, math.nan, est.mean, est.std_error, gnorm, 1000.0 * (time.perf_counter() - t_start))
        history.append(rec)
        if callback is not None:
            callback(rec, policy)

    record(0, math.nan)
    for epoch in range(1, cfg.epochs + 1):
        g = smoothed_gradient(model, policy, s0, H, cfg.pairs, cfg.rollouts, cfg.sigma, cfg.seed, epoch, cfg.mode)
        norm = float(np.linalg.norm(g))
        if norm > 0.0:
            step = cfg.learning_rate / norm if cfg.normalize else cfg.learning_rate
            policy = policy.with_theta(policy.theta + step * g)
        record(epoch, norm)
    return policy, history
