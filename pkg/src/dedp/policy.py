"""Deterministic, differentiable policies a = mu(s; theta) with exact Jacobians.

Every architecture ends in a logistic squash so actions live in (0, 1); the
action map then scales them into rate coefficients.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class FeatureSpec:
    """State -> feature vector.

    Populations are divided by their scales, the clock is one-hot encoded
    into ``clock_bins`` equal bins, and a constant 1 is appended when ``bias``.
    Works on fractional (expected) states as well as integer ones.
    """

    population_indices: tuple
    population_scales: tuple
    clock_index: int | None = None
    clock_period: int = 1
    clock_bins: int = 0
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "population_indices", tuple(int(i) for i in self.population_indices))
        object.__setattr__(self, "population_scales", tuple(float(s) for s in self.population_scales))
        if len(self.population_indices) != len(self.population_scales):
            raise ConfigError("feature spec: indices and scales differ in length")
        if self.clock_bins and self.clock_index is None:
            raise ConfigError("feature spec: clock bins requested but no clock component")

    @classmethod
    def for_model(cls, model, clock_bins: int | None = None, bias: bool = True) -> "FeatureSpec":
        pop = model.population_indices
        scales = [max(1, model.components[i].domain_max) for i in pop]
        ci = model.clock_index
        if clock_bins is None:
            clock_bins = 0 if ci is None else min(24, model.period)
        return cls(tuple(pop), tuple(scales), ci, model.period, clock_bins if ci is not None else 0, bias)

    @property
    def n_features(self) -> int:
        return len(self.population_indices) + self.clock_bins + int(self.bias)

    def __call__(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=float)
        parts = [s[..., list(self.population_indices)] / np.asarray(self.population_scales)]
        if self.clock_bins:
            clock = np.rint(s[..., self.clock_index]).astype(int) % self.clock_period
            b = (clock * self.clock_bins) // self.clock_period
            parts.append(np.eye(self.clock_bins)[b])
        if self.bias:
            parts.append(np.ones(s.shape[:-1] + (1,)))
        return np.concatenate(parts, axis=-1)

    def population_vjp(self, dphi: np.ndarray, n_components: int) -> np.ndarray:
        """Pull feature cotangents (N, F) back to states (N, M); the clock gets 0."""
        dphi = np.atleast_2d(dphi)
        out = np.zeros((dphi.shape[0], n_components))
        k = len(self.population_indices)
        out[:, list(self.population_indices)] = dphi[:, :k] / np.asarray(self.population_scales)
        return out


class Policy:
    """Base class; subclasses are treated as immutable values."""

    architecture = "abstract"

    def __init__(self, theta, n_actions: int):
        self.theta = np.array(theta, dtype=float).ravel()
        self.theta.setflags(write=False)
        self.n_actions = int(n_actions)
        if not np.all(np.isfinite(self.theta)):
            raise ConfigError("policy parameters must be finite")

    @property
    def n_params(self) -> int:
        return self.theta.size

    def with_theta(self, theta) -> "Policy":
        raise NotImplementedError

    def act(self, state) -> np.ndarray:
        return self.act_batch(np.asarray(state, dtype=float)[None, :])[0]

    def act_batch(self, states) -> np.ndarray:
        raise NotImplementedError

    def action_jacobian(self, state) -> np.ndarray:
        """Exact da/dtheta, shape (D, n_params)."""
        raise NotImplementedError

    def vjp(self, states, u) -> np.ndarray:
        """sum_n u[n] @ da/dtheta(states[n]); states (N, M), u (N, D) -> (n_params,)."""
        return sum(ui @ self.action_jacobian(si) for si, ui in zip(np.atleast_2d(states), np.atleast_2d(u)))

    def state_vjp(self, states, u) -> np.ndarray:
        """Row-wise u[n] @ da/ds(states[n]) with respect to populations, shape (N, M).

        Clock features are piecewise constant and contribute nothing.
        """
        raise NotImplementedError

    def _arch_dict(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"architecture": self._arch_dict(), "theta": self.theta.tolist()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def __eq__(self, other):
        return isinstance(other, Policy) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"{type(self).__name__}(n_params={self.n_params}, n_actions={self.n_actions})"


class TabularPolicy(Policy):
    """Lookup table of logits, keyed by the clock or by the full state.

    ``key="clock"`` gives an open-loop time-indexed schedule;
    ``key="state"`` indexes the mixed-radix code of the (rounded) state.
    """

    architecture = "tabular"

    def __init__(self, theta, n_actions, key, radices, clock_index=None):
        super().__init__(theta, n_actions)
        if key not in ("clock", "state"):
            raise ConfigError(f"tabular key must be 'clock' or 'state', got {key!r}")
        self.key = key
        self.radices = tuple(int(r) for r in radices)
        self.clock_index = clock_index
        self.n_keys = int(np.prod(self.radices))
        if self.theta.size != self.n_keys * self.n_actions:
            raise ConfigError("tabular theta has the wrong length")

    @classmethod
    def for_model(cls, model, key="state", theta=None):
        if key == "clock":
            if model.clock_index is None:
                raise ConfigError("clock-keyed table needs a clock component")
            radices = (model.period,)
        else:
            radices = tuple(int(d) + 1 for d in model.domain_max)
        n = int(np.prod(radices)) * model.num_action_dims
        return cls(np.zeros(n) if theta is None else theta, model.num_action_dims, key, radices, model.clock_index)

    def keys(self, states) -> np.ndarray:
        s = np.rint(np.asarray(states, dtype=float)).astype(int)
        if self.key == "clock":
            return s[..., self.clock_index] % self.radices[0]
        s = np.clip(s, 0, np.asarray(self.radices) - 1)
        return np.ravel_multi_index(tuple(np.moveaxis(s, -1, 0)), self.radices)

    @property
    def table(self) -> np.ndarray:
        return self.theta.reshape(self.n_keys, self.n_actions)

    def with_theta(self, theta):
        return TabularPolicy(theta, self.n_actions, self.key, self.radices, self.clock_index)

    def act_batch(self, states):
        return sigmoid(self.table[self.keys(states)])

    def action_jacobian(self, state):
        k = int(self.keys(np.asarray(state, dtype=float)))
        a = sigmoid(self.table[k])
        jac = np.zeros((self.n_actions, self.n_params))
        cols = k * self.n_actions + np.arange(self.n_actions)
        jac[np.arange(self.n_actions), cols] = a * (1.0 - a)
        return jac

    def vjp(self, states, u):
        k = self.keys(np.atleast_2d(states))
        a = sigmoid(self.table[k])
        grad = np.zeros((self.n_keys, self.n_actions))
        np.add.at(grad, k, np.atleast_2d(u) * a * (1.0 - a))
        return grad.ravel()

    def state_vjp(self, states, u):
        # lookups of rounded states are piecewise constant
        return np.zeros(np.atleast_2d(states).shape)

    def _arch_dict(self):
        return {"kind": self.architecture, "n_actions": self.n_actions, "key": self.key,
                "radices": list(self.radices), "clock_index": self.clock_index}


class LinearSigmoidPolicy(Policy):
    """a = sigmoid(W phi(s)); theta = W.ravel() with W of shape (D, F)."""

    architecture = "linear-sigmoid"

    def __init__(self, theta, n_actions, features: FeatureSpec):
        super().__init__(theta, n_actions)
        self.features = features
        if self.theta.size != n_actions * features.n_features:
            raise ConfigError("linear policy theta has the wrong length")

    @property
    def weights(self):
        return self.theta.reshape(self.n_actions, self.features.n_features)

    def with_theta(self, theta):
        return LinearSigmoidPolicy(theta, self.n_actions, self.features)

    def act_batch(self, states):
        return sigmoid(self.features(states) @ self.weights.T)

    def action_jacobian(self, state):
        phi = self.features(np.asarray(state, dtype=float))
        a = sigmoid(self.weights @ phi)
        # d a_i / d W_ij = a_i (1 - a_i) phi_j, laid out row-major like theta
        jac = np.zeros((self.n_actions, self.n_actions, phi.size))
        idx = np.arange(self.n_actions)
        jac[idx, idx, :] = (a * (1.0 - a))[:, None] * phi[None, :]
        return jac.reshape(self.n_actions, -1)

    def vjp(self, states, u):
        phi = self.features(np.atleast_2d(states))
        a = sigmoid(phi @ self.weights.T)
        return ((np.atleast_2d(u) * a * (1.0 - a)).T @ phi).ravel()

    def state_vjp(self, states, u):
        states = np.atleast_2d(states)
        a = sigmoid(self.features(states) @ self.weights.T)
        dphi = (np.atleast_2d(u) * a * (1.0 - a)) @ self.weights
        return self.features.population_vjp(dphi, states.shape[1])

    def _arch_dict(self):
        return {"kind": self.architecture, "n_actions": self.n_actions, "features": asdict(self.features)}


class MlpPolicy(Policy):
    """Two-layer perceptron: a = sigmoid(W2 tanh(W1 phi + b1) + b2)."""

    architecture = "mlp"

    def __init__(self, theta, n_actions, features: FeatureSpec, hidden: int):
        super().__init__(theta, n_actions)
        self.features = features
        self.hidden = int(hidden)
        F, H, D = features.n_features, self.hidden, n_actions
        self._shapes = [(H, F), (H,), (D, H), (D,)]
        if self.theta.size != sum(int(np.prod(s)) for s in self._shapes):
            raise ConfigError("mlp theta has the wrong length")

    def _unpack(self):
        out, i = [], 0
        for shp in self._shapes:
            n = int(np.prod(shp))
            out.append(self.theta[i : i + n].reshape(shp))
            i += n
        return out

    def with_theta(self, theta):
        return MlpPolicy(theta, self.n_actions, self.features, self.hidden)

    def act_batch(self, states):
        w1, b1, w2, b2 = self._unpack()
        h = np.tanh(self.features(states) @ w1.T + b1)
        return sigmoid(h @ w2.T + b2)

    def action_jacobian(self, state):
        w1, b1, w2, b2 = self._unpack()
        phi = self.features(np.asarray(state, dtype=float))
        h = np.tanh(w1 @ phi + b1)
        a = sigmoid(w2 @ h + b2)
        da = a * (1.0 - a)  # (D,)
        dh = 1.0 - h**2  # (H,)
        D, H, F = self.n_actions, self.hidden, phi.size
        j_w1 = (da[:, None, None] * w2[:, :, None] * dh[None, :, None]) * phi[None, None, :]  # (D,H,F)
        j_b1 = da[:, None] * w2 * dh[None, :]  # (D,H)
        j_w2 = np.zeros((D, D, H))
        j_w2[np.arange(D), np.arange(D), :] = da[:, None] * h[None, :]
        j_b2 = np.diag(da)
        return np.concatenate([j_w1.reshape(D, -1), j_b1, j_w2.reshape(D, -1), j_b2], axis=1)

    def vjp(self, states, u):
        w1, b1, w2, b2 = self._unpack()
        phi = self.features(np.atleast_2d(states))
        h = np.tanh(phi @ w1.T + b1)
        a = sigmoid(h @ w2.T + b2)
        ga = np.atleast_2d(u) * a * (1.0 - a)
        gp = (ga @ w2) * (1.0 - h**2)
        return np.concatenate([(gp.T @ phi).ravel(), gp.sum(0), (ga.T @ h).ravel(), ga.sum(0)])

    def state_vjp(self, states, u):
        states = np.atleast_2d(states)
        w1, b1, w2, b2 = self._unpack()
        h = np.tanh(self.features(states) @ w1.T + b1)
        a = sigmoid(h @ w2.T + b2)
        gp = ((np.atleast_2d(u) * a * (1.0 - a)) @ w2) * (1.0 - h**2)
        return self.features.population_vjp(gp @ w1, states.shape[1])

    def _arch_dict(self):
        return {"kind": self.architecture, "n_actions": self.n_actions, "hidden": self.hidden,
                "features": asdict(self.features)}


def policy_from_dict(d: dict) -> Policy:
    try:
        arch = d["architecture"]
        kind = arch["kind"]
        theta = d["theta"]
        if kind == "tabular":
            return TabularPolicy(theta, arch["n_actions"], arch["key"], arch["radices"], arch.get("clock_index"))
        if kind not in ("linear-sigmoid", "mlp"):
            raise ConfigError(f"unknown policy architecture {kind!r}")
        features = FeatureSpec(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in arch["features"].items()})
        if kind == "linear-sigmoid":
            return LinearSigmoidPolicy(theta, arch["n_actions"], features)
        return MlpPolicy(theta, arch["n_actions"], features, arch["hidden"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed policy checkpoint: {exc!r}") from exc


def load_policy(path) -> Policy:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return policy_from_dict(data)


def init_policy(model, architecture="linear-sigmoid", seed=0, scale=0.01, hidden=8, clock_bins=None, key="state") -> Policy:
    """Small uniform noise around zero (the squash midpoint); tables start exactly at zero."""
    D = model.num_action_dims
    if architecture == "tabular":
        return TabularPolicy.for_model(model, key=key)
    rng = np.random.default_rng(seed)
    features = FeatureSpec.for_model(model, clock_bins=clock_bins)
    F = features.n_features
    if architecture == "linear-sigmoid":
        return LinearSigmoidPolicy(rng.uniform(-scale, scale, D * F), D, features)
    if architecture == "mlp":
        n = hidden * F + hidden + D * hidden + D
        # hidden weights need O(1) scale or tanh units start dead-linear
        theta = rng.uniform(-scale, scale, n)
        theta[: hidden * F] = rng.uniform(-1.0, 1.0, hidden * F) / np.sqrt(F)
        return MlpPolicy(theta, D, features, hidden)
    raise ConfigError(f"unknown policy architecture {architecture!r}")


def rate_coefficient_jacobian(policy: Policy, model, state) -> np.ndarray:
    """dc/dtheta = (dc/da)(mu(s)) @ (da/dtheta)(s), shape (K, n_params)."""
    a = policy.act(state)
    return model.action_map.jacobian(a) @ policy.action_jacobian(state)
