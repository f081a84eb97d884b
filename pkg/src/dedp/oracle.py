"""Brute-force references for small models.

Everything here enumerates: reachable states, whole trajectory sets, the
exact mixture over (length, reward component, trajectory).  It exists to
check the approximate solver, not to scale.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NegativeReward, SpaceTooLarge
from .model import (
    ComponentReward,
    DedpModel,
    RewardSpec,
    apply_event,
    check_state,
    event_distribution,
    event_distribution_batch,
    factor_products,
)

DEFAULT_CAP = 10**6


@dataclass
class EnumeratedSpace:
    states: list
    index: dict

    def __len__(self):
        return len(self.states)

    @classmethod
    def from_states(cls, states):
        states = list(states)
        return cls(states, {s: i for i, s in enumerate(states)})


def enumerate_states(model: DedpModel, s0=None, cap: int = DEFAULT_CAP) -> EnumeratedSpace:
    """All states (``s0`` None) or those structurally reachable from ``s0``.

    Reachability uses positive rate factors only, so it does not depend on
    the policy.  The clock, when present, cycles through its period.
    """
    if s0 is None:
        size = math.prod(c.domain_max + 1 for c in model.components)
        if size > cap:
            raise SpaceTooLarge(f"{size} states exceed cap {cap}")
        return EnumeratedSpace.from_states(itertools.product(*(range(c.domain_max + 1) for c in model.components)))
    start = check_state(model, s0)
    seen = {start: 0}
    order = [start]
    queue = deque([start])
    while queue:
        s = queue.popleft()
        g = factor_products(model, np.array(s))
        for v in [0] + [i + 1 for i in np.flatnonzero(g > 0)]:
            nxt = apply_event(model, s, int(v))
            if nxt not in seen:
                if len(order) >= cap:
                    raise SpaceTooLarge(f"more than {cap} reachable states")
                seen[nxt] = len(order)
                order.append(nxt)
                queue.append(nxt)
    return EnumeratedSpace(order, seen)


def _population_space(model: DedpModel, s0, cap):
    """Reachable states with the clock pinned to its start value."""
    ci = model.clock_index
    if ci is None:
        return enumerate_states(model, s0, cap)
    # BFS over populations only; the clock stays at its start value
    start = check_state(model, s0)
    seen = {start: 0}
    order = [start]
    queue = deque([start])
    while queue:
        s = queue.popleft()
        g = factor_products(model, np.array(s))
        for v in np.flatnonzero(g > 0):
            nxt = list(np.array(s) + model.deltas[v])
            nxt[ci] = s[ci]
            nxt = tuple(int(x) for x in nxt)
            if nxt not in seen:
                if len(order) >= cap:
                    raise SpaceTooLarge(f"more than {cap} reachable states")
                seen[nxt] = len(order)
                order.append(nxt)
                queue.append(nxt)
    return EnumeratedSpace(order, seen)


@dataclass(frozen=True)
class ExactValue:
    value: float
    truncation_bound: float  # |V_inf - V_H| <= gamma^(H+1) R_max / (1 - gamma)
    horizon: int

    def __float__(self):
        return self.value


def _clock_at(model, s0, t):
    ci = model.clock_index
    return 0 if ci is None else (s0[ci] + t) % model.period


def exact_value(model: DedpModel, policy, s0, horizon: int, cap: int = DEFAULT_CAP) -> ExactValue:
    """sum_{t=0}^{H} gamma^t E[R(s_t)] by backward dynamic programming."""
    s0 = check_state(model, s0)
    space = _population_space(model, s0, cap)
    S = np.array(space.states, dtype=int)
    n = len(S)
    ci = model.clock_index
    V = model.num_events
    # next-state index for every (state, event); off-domain moves carry zero rate
    nxt = np.empty((n, V + 1), dtype=int)
    nxt[:, 0] = np.arange(n)
    for v in range(V):
        cand = S + model.deltas[v]
        for i in range(n):
            key = tuple(int(x) for x in cand[i])
            nxt[i, v + 1] = space.index.get(key, -1)
    kernels = {}

    def kernel(clock):
        if clock not in kernels:
            St = S.copy()
            if ci is not None:
                St[:, ci] = clock
            p = event_distribution_batch(model, St, policy.act_batch(St))
            if np.any(p[nxt < 0] > 0):
                raise AssertionError("positive rate into an unenumerated state")
            ok = nxt >= 0
            rows = np.repeat(np.arange(n), V + 1).reshape(n, V + 1)[ok]
            kernels[clock] = sp.csr_matrix((p[ok], (rows, nxt[ok])), shape=(n, n))
        return kernels[clock]

    def rewards(clock):
        St = S.copy()
        if ci is not None:
            St[:, ci] = clock
        m = np.arange(model.num_components)
        return model.reward_table[m, np.full((n, 1), clock), St].sum(axis=1)

    val = rewards(_clock_at(model, s0, horizon))
    for t in range(horizon - 1, -1, -1):
        k = _clock_at(model, s0, t)
        val = rewards(k) + model.gamma * (kernel(k) @ val)
    r_max = float(np.abs(model.reward_table).max())
    bound = model.gamma ** (horizon + 1) * r_max / (1.0 - model.gamma) if model.gamma < 1 else math.inf
    return ExactValue(float(val[space.index[s0]]), bound, horizon)


@dataclass
class MixturePosterior:
    """Exact q*(T, m, xi) over all positive-probability trajectories up to H.

    Row j describes (lengths[j], components[j], trajectories[j]) with
    discounted trajectory-weighted reward ``r[j]``.
    """

    lengths: np.ndarray
    components: np.ndarray
    trajectories: list
    r: np.ndarray

    @property
    def normalizer(self) -> float:
        return float(self.r.sum())

    @property
    def weights(self) -> np.ndarray:
        return self.r / self.r.sum()


def _require_nonneg(model):
    if np.any(model.reward_table < 0):
        raise NegativeReward("mixture checks need non-negative rewards; use shift_rewards first")


def exact_mixture(model: DedpModel, policy, s0, horizon: int, cap: int = DEFAULT_CAP) -> MixturePosterior:
    """Enumerate r(T, m, xi) = gamma^T P(xi) R_T^(m)(s_T^(m)) for T <= H."""
    _require_nonneg(model)
    s0 = check_state(model, s0)
    pops = list(model.population_indices)
    lengths, comps, trajs, rs = [], [], [], []
    dist_cache = {}

    def dist(s):
        if s not in dist_cache:
            dist_cache[s] = event_distribution(model, s, policy.act(np.array(s, dtype=float)))
        return dist_cache[s]

    count = 0
    stack = [(s0, (), 1.0)]
    while stack:
        s, events, prob = stack.pop()
        T = len(events)
        count += 1
        if count * len(pops) > cap:
            raise SpaceTooLarge(f"more than {cap} mixture entries")
        clock = s[model.clock_index] if model.clock_index is not None else 0
        disc = model.gamma**T * prob
        for m in pops:
            lengths.append(T)
            comps.append(m)
            trajs.append(events)
            rs.append(disc * model.reward_table[m, clock, s[m]])
        if T == horizon:
            continue
        p = dist(s)
        for v in range(model.num_events, -1, -1):
            if p[v] > 0.0:
                stack.append((apply_event(model, s, v), events + (v,), prob * p[v]))
    return MixturePosterior(np.array(lengths), np.array(comps), trajs, np.array(rs))


def duality_gap_from_mixture(mix: MixturePosterior, q) -> float:
    """log(sum r) - [sum q log r + H(q)]; terms with q = 0 contribute 0."""
    q = np.asarray(q, dtype=float)
    if q.shape != mix.r.shape:
        raise ValueError("q must align with the mixture rows")
    if np.any(q < 0) or not math.isclose(q.sum(), 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError("q must be a normalised distribution")
    on = q > 0
    if np.any(mix.r[on] <= 0):
        return math.inf
    bound = float(np.sum(q[on] * (np.log(mix.r[on]) - np.log(q[on]))))
    return math.log(mix.normalizer) - bound


def duality_gap(model: DedpModel, policy, s0, horizon: int, q, cap: int = DEFAULT_CAP) -> float:
    return duality_gap_from_mixture(exact_mixture(model, policy, s0, horizon, cap), q)


# ---------------------------------------------------------------------------
# reward shifting for models with negative rewards
# ---------------------------------------------------------------------------


def shift_rewards(model: DedpModel):
    """Subtract the per-(clock, component) minimum so every reward is >= 0.

    Returns (shifted_model, offsets) where offsets[k, m] was removed at clock
    value k from component m.  The shift is the same for every state, so it
    moves V by ``reward_offset_value`` and leaves policy rankings unchanged.
    """
    tab = model.reward_table
    offsets = np.zeros((model.period, model.num_components))
    schedules = []
    for m in model.population_indices:
        d = model.components[m].domain_max
        rows = tab[m, :, : d + 1]
        offsets[:, m] = rows.min(axis=1)
        shifted = rows - offsets[:, m][:, None]
        if np.any(shifted != 0):
            schedules.append(ComponentReward(int(m), "table", shifted.tolist()))
    new = DedpModel(model.components, model.events, model.action_map, RewardSpec(tuple(schedules)),
                    model.gamma, model.initial_state)
    return new, offsets


def reward_offset_value(model: DedpModel, offsets: np.ndarray, s0, horizon: int) -> float:
    """sum_{t<=H} gamma^t sum_m offsets[clock_t, m] -- the V removed by a shift."""
    s0 = check_state(model, s0)
    return float(sum(model.gamma**t * offsets[_clock_at(model, s0, t)].sum() for t in range(horizon + 1)))
