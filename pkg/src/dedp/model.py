"""Discrete event decision process (DEDP) definition and exact step algebra.

A model is a set of population components with finite integer domains, a
list of events each with a state delta and product-form rate factors, an
action map turning policy outputs into rate coefficients, and an additively
separable reward.  One event (or the null event) fires per unit time step.

Event ids are 1..V; id 0 (``NULL_EVENT``) is the null event.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DomainViolation, RateOverflow

NULL_EVENT = 0
RATE_TOL = 1e-12

FACTOR_KINDS = ("linear", "indicator", "constant", "capacity", "table")


def _freeze(value):
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return value


def _thaw(value):
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Component:
    name: str
    domain_max: int
    clock: bool = False

    def __post_init__(self):
        if int(self.domain_max) != self.domain_max or self.domain_max < 0:
            raise ConfigError(f"component {self.name!r}: domain_max must be a non-negative int")


@dataclass(frozen=True)
class Factor:
    """Per-component rate factor g(x) of one event.

    kinds:
      linear     g(x) = scale * x
      indicator  g(x) = 1 if lo <= x <= hi else 0
      constant   g(x) = value
      capacity   g(x) = max(0, 1 - x / capacity)
      table      g(x) = values[x]
    """

    component: int
    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise ConfigError(f"unknown factor kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(sorted((k, _freeze(v)) for k, v in dict(self.params).items())))

    @property
    def p(self) -> dict:
        return dict(self.params)

    def values(self, domain_max: int) -> np.ndarray:
        x = np.arange(domain_max + 1, dtype=float)
        p = self.p
        if self.kind == "linear":
            g = p.get("scale", 1.0) * x
        elif self.kind == "indicator":
            lo = p.get("lo", -math.inf)
            hi = p.get("hi", math.inf)
            g = ((x >= lo) & (x <= hi)).astype(float)
        elif self.kind == "constant":
            g = np.full_like(x, p.get("value", 1.0))
        elif self.kind == "capacity":
            g = np.maximum(0.0, 1.0 - x / p["capacity"])
        else:
            vals = np.asarray(p["values"], dtype=float)
            if vals.shape != x.shape:
                raise ConfigError("table factor needs one value per domain entry")
            g = vals
        if np.any(g < 0):
            raise ConfigError(f"factor {self.kind} yields negative values")
        return g


@dataclass(frozen=True)
class EventSpec:
    name: str
    delta: tuple
    coeff_index: int
    factors: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "delta", tuple(int(d) for d in self.delta))
        object.__setattr__(self, "factors", tuple(self.factors))


# ---------------------------------------------------------------------------
# action maps: a (length D) -> c (length K), with analytic dc/da
# ---------------------------------------------------------------------------


class ActionMap:
    kind = "abstract"
    n_actions: int
    n_coeffs: int

    def coefficients(self, a: np.ndarray) -> np.ndarray:
        """Rate coefficients for actions ``a`` of shape (..., D)."""
        raise NotImplementedError

    def jacobian(self, a: np.ndarray) -> np.ndarray:
        """dc/da of shape (K, D) at a single action vector."""
        raise NotImplementedError

    def vjp(self, a: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Row-wise w @ dc/da for a (N, D), w (N, K); returns (N, D)."""
        return np.stack([wi @ self.jacobian(ai) for ai, wi in zip(np.atleast_2d(a), np.atleast_2d(w))])

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(d: dict) -> "ActionMap":
        kind = d["kind"]
        params = d.get("params", {})
        try:
            cls = _ACTION_MAPS[kind]
        except KeyError:
            raise ConfigError(f"unknown action_map kind {kind!r}") from None
        return cls.from_params(params)


@dataclass(frozen=True)
class IdentityMap(ActionMap):
    n: int
    kind = "identity"

    @property
    def n_actions(self):
        return self.n

    @property
    def n_coeffs(self):
        return self.n

    def coefficients(self, a):
        return np.array(a, dtype=float, copy=True)

    def jacobian(self, a):
        return np.eye(self.n)

    def vjp(self, a, w):
        return np.array(np.atleast_2d(w), dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "params": {"n": self.n}}

    @classmethod
    def from_params(cls, p):
        return cls(int(p["n"]))


@dataclass(frozen=True)
class ConstantMap(ActionMap):
    values: tuple
    n_actions: int = 0
    kind = "constant"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def n_coeffs(self):
        return len(self.values)

    def coefficients(self, a):
        a = np.asarray(a, dtype=float)
        return np.broadcast_to(np.asarray(self.values), a.shape[:-1] + (self.n_coeffs,)).copy()

    def jacobian(self, a):
        return np.zeros((self.n_coeffs, self.n_actions))

    def vjp(self, a, w):
        return np.zeros((np.atleast_2d(w).shape[0], self.n_actions))

    def to_dict(self):
        return {"kind": self.kind, "params": {"values": list(self.values), "n_actions": self.n_actions}}

    @classmethod
    def from_params(cls, p):
        return cls(tuple(p["values"]), int(p.get("n_actions", 0)))


@dataclass(frozen=True)
class LinearMap(ActionMap):
    """c = bias + weights @ a.  Non-negative weights and bias keep c >= 0 for a >= 0."""

    weights: tuple
    bias: tuple
    kind = "linear"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != len(self.bias):
            raise ConfigError("linear action map: weights must be K x D with K == len(bias)")
        if np.any(w < 0) or np.any(np.asarray(self.bias) < 0):
            raise ConfigError("linear action map: weights and bias must be non-negative")
        object.__setattr__(self, "weights", _freeze(w.tolist()))
        object.__setattr__(self, "bias", tuple(float(b) for b in self.bias))

    @cached_property
    def _w(self):
        return np.asarray(self.weights, dtype=float)

    @property
    def n_actions(self):
        return self._w.shape[1]

    @property
    def n_coeffs(self):
        return self._w.shape[0]

    def coefficients(self, a):
        return np.asarray(self.bias) + np.asarray(a, dtype=float) @ self._w.T

    def jacobian(self, a):
        return self._w.copy()

    def vjp(self, a, w):
        return np.atleast_2d(w) @ self._w

    def to_dict(self):
        return {"kind": self.kind, "params": {"weights": _thaw(self.weights), "bias": list(self.bias)}}

    @classmethod
    def from_params(cls, p):
        return cls(p["weights"], p["bias"])


@dataclass(frozen=True)
class RoutingMap(ActionMap):
    """Departure gates times softmax route splits.

    c_k = scale_k * gate_k * share_k where gate_k = a[gate[k]] (1 if gate[k] < 0)
    and share_k = exp(s * a[logit[k]]) / sum_{j in group(k)} exp(s * a[logit[j]])
    (share_k = 1 if group[k] < 0).  With a in (0, 1) every c_k lies in
    (0, scale_k), which is what the scenario rate ceiling is certified against.
    """

    n: int
    scale: tuple
    gate: tuple
    group: tuple
    logit: tuple
    sharpness: float = 6.0
    kind = "routing"

    def __post_init__(self):
        k = len(self.scale)
        if not (len(self.gate) == len(self.group) == len(self.logit) == k):
            raise ConfigError("routing map: scale/gate/group/logit lengths differ")
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))
        for name in ("gate", "group", "logit"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))
        for k_, g in enumerate(self.group):
            if g >= 0 and self.logit[k_] < 0:
                raise ConfigError("routing map: grouped coefficient needs a logit action")
        if any(s < 0 for s in self.scale):
            raise ConfigError("routing map: negative scale")

    @property
    def n_actions(self):
        return self.n

    @property
    def n_coeffs(self):
        return len(self.scale)

    @cached_property
    def _arrays(self):
        gate = np.asarray(self.gate)
        group = np.asarray(self.group)
        logit = np.asarray(self.logit)
        groups = [np.flatnonzero(group == g) for g in np.unique(group[group >= 0])]
        return gate, group, logit, groups

    def _shares(self, a):
        gate, group, logit, groups = self._arrays
        share = np.ones(a.shape[:-1] + (self.n_coeffs,))
        for members in groups:
            z = self.sharpness * a[..., logit[members]]
            z = z - z.max(axis=-1, keepdims=True)
            e = np.exp(z)
            share[..., members] = e / e.sum(axis=-1, keepdims=True)
        return share

    def _gates(self, a):
        gate = self._arrays[0]
        g = np.ones(a.shape[:-1] + (self.n_coeffs,))
        on = gate >= 0
        g[..., on] = a[..., gate[on]]
        return g

    def coefficients(self, a):
        a = np.asarray(a, dtype=float)
        return np.asarray(self.scale) * self._gates(a) * self._shares(a)

    def jacobian(self, a):
        a = np.asarray(a, dtype=float)
        gate, group, logit, groups = self._arrays
        scale = np.asarray(self.scale)
        gates = self._gates(a)
        shares = self._shares(a)
        jac = np.zeros((self.n_coeffs, self.n))
        for k in range(self.n_coeffs):
            if gate[k] >= 0:
                jac[k, gate[k]] += scale[k] * shares[k]
        for members in groups:
            for k in members:
                for j in members:
                    # d share_k / d z_j = share_k (1[k=j] - share_j), z = s * a[logit]
                    d = shares[k] * ((k == j) - shares[j]) * self.sharpness
                    jac[k, logit[j]] += scale[k] * gates[k] * d
        return jac

    def vjp(self, a, w):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        w = np.atleast_2d(np.asarray(w, dtype=float))
        gate, group, logit, groups = self._arrays
        scale = np.asarray(self.scale)
        shares = self._shares(a)
        rows = np.arange(a.shape[0])[:, None]
        out = np.zeros((a.shape[0], self.n))
        on = gate >= 0
        np.add.at(out, (rows, gate[on][None, :]), (w * scale * shares)[:, on])
        y = w * scale * self._gates(a)
        for members in groups:
            sm = shares[:, members]
            ym = y[:, members]
            dz = self.sharpness * sm * (ym - (ym * sm).sum(axis=1, keepdims=True))
            np.add.at(out, (rows, logit[members][None, :]), dz)
        return out

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": {
                "n": self.n,
                "scale": list(self.scale),
                "gate": list(self.gate),
                "group": list(self.group),
                "logit": list(self.logit),
                "sharpness": self.sharpness,
            },
        }

    @classmethod
    def from_params(cls, p):
        return cls(int(p["n"]), p["scale"], p["gate"], p["group"], p["logit"], float(p.get("sharpness", 6.0)))


_ACTION_MAPS = {c.kind: c for c in (IdentityMap, ConstantMap, LinearMap, RoutingMap)}


# ---------------------------------------------------------------------------
# rewards
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComponentReward:
    """Reward schedule of one component.

    ``linear``: values[t % len(values)] * x.
    ``table``:  values[t % len(values)][x].
    ``t`` is the clock value (0 when the model has no clock).
    """

    component: int
    kind: str
    values: tuple

    def __post_init__(self):
        if self.kind not in ("linear", "table"):
            raise ConfigError(f"unknown reward kind {self.kind!r}")
        object.__setattr__(self, "values", _freeze(list(self.values)))

    def table(self, period: int, domain_max: int) -> np.ndarray:
        x = np.arange(domain_max + 1, dtype=float)
        t = np.arange(period)
        if self.kind == "linear":
            coef = np.asarray(self.values, dtype=float)
            return coef[t % len(coef)][:, None] * x[None, :]
        rows = np.asarray(self.values, dtype=float)
        if rows.ndim != 2 or rows.shape[1] != domain_max + 1:
            raise ConfigError("table reward needs rows of length domain_max + 1")
        return rows[t % rows.shape[0]]


@dataclass(frozen=True)
class RewardSpec:
    schedules: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "schedules", tuple(self.schedules))


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DedpModel:
    components: tuple
    events: tuple
    action_map: ActionMap
    reward: RewardSpec = field(default_factory=RewardSpec)
    gamma: float = 0.9
    initial_state: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "events", tuple(self.events))
        if self.initial_state is not None:
            object.__setattr__(self, "initial_state", tuple(int(x) for x in self.initial_state))
        self._validate()

    # -- sizes -------------------------------------------------------------
    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def num_events(self) -> int:
        return len(self.events)

    @property
    def num_action_dims(self) -> int:
        return self.action_map.n_actions

    @cached_property
    def clock_index(self) -> int | None:
        idx = [i for i, c in enumerate(self.components) if c.clock]
        return idx[0] if idx else None

    @property
    def period(self) -> int:
        """Number of distinct clock values (1 when there is no clock)."""
        ci = self.clock_index
        return 1 if ci is None else self.components[ci].domain_max + 1

    @cached_property
    def population_indices(self) -> np.ndarray:
        return np.array([i for i, c in enumerate(self.components) if not c.clock], dtype=int)

    @cached_property
    def domain_max(self) -> np.ndarray:
        return np.array([c.domain_max for c in self.components], dtype=int)

    def component_index(self, name: str) -> int:
        for i, c in enumerate(self.components):
            if c.name == name:
                return i
        raise ConfigError(f"no component named {name!r}")

    # -- derived tables ----------------------------------------------------
    @cached_property
    def deltas(self) -> np.ndarray:
        """(V, M) integer state changes."""
        return np.array([e.delta for e in self.events], dtype=int).reshape(self.num_events, self.num_components)

    @cached_property
    def coeff_index(self) -> np.ndarray:
        return np.array([e.coeff_index for e in self.events], dtype=int)

    @cached_property
    def g_table(self) -> np.ndarray:
        """(V, M, Dmax+1) rate factors; 1 for unlisted components, 0 off-domain."""
        dmax = int(self.domain_max.max())
        g = np.zeros((self.num_events, self.num_components, dmax + 1))
        for m, comp in enumerate(self.components):
            g[:, m, : comp.domain_max + 1] = 1.0
        for v, ev in enumerate(self.events):
            for f in ev.factors:
                g[v, f.component, : self.components[f.component].domain_max + 1] *= f.values(
                    self.components[f.component].domain_max
                )
        return g

    @cached_property
    def reward_table(self) -> np.ndarray:
        """(M, period, Dmax+1) per-component reward; zero off-domain and on the clock."""
        dmax = int(self.domain_max.max())
        tab = np.zeros((self.num_components, self.period, dmax + 1))
        for sch in self.reward.schedules:
            d = self.components[sch.component].domain_max
            tab[sch.component, :, : d + 1] += sch.table(self.period, d)
        return tab

    # -- validation --------------------------------------------------------
    def _validate(self):
        M = self.num_components
        if M < 1:
            raise ConfigError("model needs at least one component")
        if self.num_events < 1:
            raise ConfigError("model needs at least one event")
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError("gamma must lie in [0, 1)")
        if sum(c.clock for c in self.components) > 1:
            raise ConfigError("at most one clock component")
        names = [c.name for c in self.components]
        if len(set(names)) != len(names):
            raise ConfigError("component names must be unique")
        K = self.action_map.n_coeffs
        for ev in self.events:
            if len(ev.delta) != M:
                raise ConfigError(f"event {ev.name!r}: delta length {len(ev.delta)} != {M}")
            if not (0 <= ev.coeff_index < K):
                raise ConfigError(f"event {ev.name!r}: coeff_index out of range")
            for f in ev.factors:
                if not (0 <= f.component < M):
                    raise ConfigError(f"event {ev.name!r}: factor component out of range")
        ci = self.clock_index
        if ci is not None and np.any(self.deltas[:, ci] != 0):
            raise ConfigError("events may not change the clock; it advances by itself")
        for sch in self.reward.schedules:
            if not (0 <= sch.component < M) or self.components[sch.component].clock:
                raise ConfigError("reward schedules must target population components")
        # closure: any move with positive factor stays in the domain
        g = self.g_table
        for v, ev in enumerate(self.events):
            for m, d in enumerate(ev.delta):
                if d == 0:
                    continue
                dm = self.components[m].domain_max
                x = np.arange(dm + 1)
                bad = (g[v, m, : dm + 1] > 0) & ((x + d < 0) | (x + d > dm))
                if bad.any():
                    raise ConfigError(
                        f"event {ev.name!r} can leave the domain of {self.components[m].name!r} "
                        f"from x={int(x[bad][0])}; add a factor that is zero there"
                    )
        if self.initial_state is not None:
            check_state(self, self.initial_state)
        self.reward_table  # table shape errors surface at construction

    # -- coefficients ------------------------------------------------------
    def coefficients(self, action) -> np.ndarray:
        c = self.action_map.coefficients(np.asarray(action, dtype=float))
        if np.any(c < 0):
            raise ConfigError("action map produced negative rate coefficients")
        return c

    def event_coefficients(self, action) -> np.ndarray:
        """Per-event coefficient c_v (length V), resolving shared coefficient indices."""
        return self.coefficients(action)[..., self.coeff_index]

    # -- equality by value -------------------------------------------------
    def __eq__(self, other):
        if not isinstance(other, DedpModel):
            return NotImplemented
        return model_to_dict(self) == model_to_dict(other)

    @cached_property
    def _hash(self) -> int:
        return hash(json.dumps(model_to_dict(self), sort_keys=True))

    def __hash__(self):
        return self._hash


# ---------------------------------------------------------------------------
# step algebra
# ---------------------------------------------------------------------------


def check_state(model: DedpModel, state) -> tuple:
    s = tuple(int(x) for x in state)
    if len(s) != model.num_components:
        raise DomainViolation(f"state has {len(s)} entries, model has {model.num_components} components")
    for x, c in zip(s, model.components):
        if x < 0 or x > c.domain_max:
            raise DomainViolation(f"{c.name}={x} outside 0..{c.domain_max}")
    return s


def factor_products(model: DedpModel, states: np.ndarray) -> np.ndarray:
    """prod_m g_v^(m)(s^(m)) for integer states of shape (..., M); returns (..., V)."""
    s = np.asarray(states, dtype=int)
    m = np.arange(model.num_components)
    g = model.g_table[:, m, s]  # (V, ..., M)
    return np.moveaxis(g.prod(axis=-1), 0, -1)


def event_rate(model: DedpModel, state, coeffs, v: int) -> float:
    """h_v = c_v * prod_m g_v^(m)(s^(m)) for event id ``v`` in 1..V."""
    if not (1 <= v <= model.num_events):
        raise ValueError(f"event id {v} not in 1..{model.num_events}")
    s = check_state(model, state)
    c = np.asarray(coeffs, dtype=float)[model.coeff_index[v - 1]]
    return float(c * factor_products(model, np.array(s))[v - 1])


def _distribution_from_rates(h: np.ndarray) -> np.ndarray:
    total = h.sum(axis=-1)
    if np.any(total > 1.0 + RATE_TOL):
        raise RateOverflow(f"total event rate {float(np.max(total)):.6g} exceeds 1")
    out = np.empty(h.shape[:-1] + (h.shape[-1] + 1,))
    out[..., 1:] = h
    out[..., 0] = np.maximum(0.0, 1.0 - total)
    return out


def event_distribution(model: DedpModel, state, action) -> np.ndarray:
    """Categorical over (null, 1..V); index 0 is the null event."""
    s = check_state(model, state)
    h = model.event_coefficients(action) * factor_products(model, np.array(s))
    return _distribution_from_rates(h)


def event_distribution_batch(model: DedpModel, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    h = model.event_coefficients(actions) * factor_products(model, states)
    return _distribution_from_rates(h)


def apply_event(model: DedpModel, state, v: int) -> tuple:
    """State after event ``v`` (0 = null); the clock advances on every step."""
    s = np.array(check_state(model, state))
    if v != NULL_EVENT:
        if not (1 <= v <= model.num_events):
            raise ValueError(f"event id {v} not in 0..{model.num_events}")
        s = s + model.deltas[v - 1]
    ci = model.clock_index
    if ci is not None:
        s[ci] = (s[ci] + 1) % model.period
    bad = (s < 0) | (s > model.domain_max)
    if bad.any():
        m = int(np.flatnonzero(bad)[0])
        raise DomainViolation(f"{model.components[m].name}={int(s[m])} outside 0..{model.components[m].domain_max}")
    return tuple(int(x) for x in s)


def marginalize_events(model: DedpModel, state, action) -> dict:
    """Next-state distribution with the event summed out: {next_state: prob}."""
    p = event_distribution(model, state, action)
    out: dict = {}
    for v in range(model.num_events + 1):
        if p[v] == 0.0:
            continue
        nxt = apply_event(model, state, v)
        out[nxt] = out.get(nxt, 0.0) + float(p[v])
    return out


def reward(model: DedpModel, state) -> float:
    """R(s) = sum_m R_t^(m)(s^(m)) with t read from the clock component."""
    s = check_state(model, state)
    ci = model.clock_index
    t = 0 if ci is None else s[ci]
    tab = model.reward_table
    return float(sum(tab[m, t, s[m]] for m in range(model.num_components)))


def reward_batch(model: DedpModel, states: np.ndarray) -> np.ndarray:
    s = np.asarray(states, dtype=int)
    ci = model.clock_index
    t = np.zeros(s.shape[:-1], dtype=int) if ci is None else s[..., ci]
    m = np.arange(model.num_components)
    return model.reward_table[m, t[..., None], s].sum(axis=-1)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    events: tuple
    actions: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(tuple(int(x) for x in s) for s in self.states))
        object.__setattr__(self, "events", tuple(int(v) for v in self.events))
        object.__setattr__(self, "actions", tuple(tuple(float(a) for a in act) for act in self.actions))
        if len(self.states) != len(self.events) + 1:
            raise ValueError("trajectory needs len(states) == len(events) + 1")

    @property
    def length(self) -> int:
        return len(self.events)

    def is_consistent(self, model: DedpModel) -> bool:
        for t, v in enumerate(self.events):
            try:
                if apply_event(model, self.states[t], v) != self.states[t + 1]:
                    return False
            except (DomainViolation, ValueError):
                return False
        return True


def trajectory_log_prob(model: DedpModel, policy, trajectory: Trajectory) -> float:
    """log p(xi) under the deterministic policy, with a point-mass p(s_0)."""
    if not trajectory.is_consistent(model):
        return -math.inf
    total = 0.0
    for t, v in enumerate(trajectory.events):
        s = trajectory.states[t]
        p = event_distribution(model, s, policy.act(np.array(s, dtype=float)))[v]
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
    return total


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------


def model_to_dict(model: DedpModel) -> dict:
    comps = model.components
    return {
        "components": [
            {"name": c.name, "domain_max": c.domain_max, **({"clock": True} if c.clock else {})} for c in comps
        ],
        "events": [
            {
                "name": e.name,
                "delta": list(e.delta),
                "coeff_index": e.coeff_index,
                "factors": [
                    {"component": comps[f.component].name, "kind": f.kind, "params": {k: _thaw(v) for k, v in f.params}}
                    for f in e.factors
                ],
            }
            for e in model.events
        ],
        "action_map": model.action_map.to_dict(),
        "reward": {
            "schedules": [
                {"component": comps[s.component].name, "kind": s.kind, "values": _thaw(s.values)}
                for s in model.reward.schedules
            ]
        },
        "gamma": model.gamma,
        "initial_state": None if model.initial_state is None else list(model.initial_state),
    }


def model_from_dict(d: dict) -> DedpModel:
    try:
        comps = tuple(Component(c["name"], int(c["domain_max"]), bool(c.get("clock", False))) for c in d["components"])
        index = {c.name: i for i, c in enumerate(comps)}

        def comp_id(ref):
            if isinstance(ref, str):
                if ref not in index:
                    raise ConfigError(f"unknown component {ref!r}")
                return index[ref]
            return int(ref)

        events = tuple(
            EventSpec(
                e["name"],
                tuple(e["delta"]),
                int(e["coeff_index"]),
                tuple(Factor(comp_id(f["component"]), f["kind"], tuple(f.get("params", {}).items())) for f in e.get("factors", [])),
            )
            for e in d["events"]
        )
        reward = RewardSpec(
            tuple(ComponentReward(comp_id(s["component"]), s["kind"], s["values"]) for s in d.get("reward", {}).get("schedules", []))
        )
        init = d.get("initial_state")
        return DedpModel(comps, events, ActionMap.from_dict(d["action_map"]), reward, float(d["gamma"]), None if init is None else tuple(init))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed model definition: {exc}") from exc


def save_model(model: DedpModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def load_model(path) -> DedpModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return model_from_dict(data)


def single_component_model(
    domain_max: int,
    events: Sequence[tuple[int, str, dict]],
    coeffs: Sequence[float] | None = None,
    reward_values: Sequence[float] | None = None,
    gamma: float = 0.9,
    initial: int = 0,
) -> DedpModel:
    """Convenience builder for one-component chains.

    ``events`` is a list of (delta, factor_kind, factor_params).  Fixed
    ``coeffs`` give a constant map; ``None`` routes one policy action to
    each event's coefficient through the identity map.
    """
    comp = Component("x", domain_max)
    evs = tuple(
        EventSpec(f"e{i + 1}", (d,), i, (Factor(0, kind, tuple(params.items())),) if kind else ())
        for i, (d, kind, params) in enumerate(events)
    )
    rew = RewardSpec(() if reward_values is None else (ComponentReward(0, "table", [list(reward_values)]),))
    amap = IdentityMap(len(evs)) if coeffs is None else ConstantMap(tuple(coeffs))
    return DedpModel((comp,), evs, amap, rew, gamma, (initial,))
