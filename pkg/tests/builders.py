"""Small models shared by the test modules."""

import itertools
import math

import numpy as np

from dedp import (
    Component,
    ComponentReward,
    ConstantMap,
    DedpModel,
    EventSpec,
    Factor,
    FeatureSpec,
    IdentityMap,
    LinearSigmoidPolicy,
    RewardSpec,
)
from dedp.scenarios import build_commute_chain


def birth_death(dmax=4, gamma=0.9, initial=1):
    """One population with a capped birth event and a per-capita death event."""
    birth = [0.5] * dmax + [0.0]
    events = (
        EventSpec("birth", (1,), 0, (Factor(0, "table", (("values", birth),)),)),
        EventSpec("death", (-1,), 1, (Factor(0, "linear", (("scale", 0.5 / dmax),)),)),
    )
    rew = RewardSpec((ComponentReward(0, "table", [[0.0, 1.0, 1.5, 1.0, 0.2][: dmax + 1] + [0.0] * max(0, dmax - 4)]),))
    return DedpModel((Component("x", dmax),), events, IdentityMap(2), rew, gamma, (initial,))


def exchange(n=3, gamma=0.9, clock=0):
    """Individuals move between two places; the return leg slows as the origin fills."""
    comps = [Component("a", n), Component("b", n)]
    events = [
        EventSpec("a_to_b", (-1, 1), 0, (Factor(0, "linear", (("scale", 0.5 / n),)),
                                          Factor(1, "indicator", (("hi", n - 1),)))),
        EventSpec("b_to_a", (1, -1), 1, (Factor(1, "linear", (("scale", 0.5 / n),)),
                                          Factor(0, "capacity", (("capacity", n),)))),
    ]
    if clock:
        comps.append(Component("clock", clock - 1, clock=True))
        events = [EventSpec(e.name, e.delta + (0,), e.coeff_index, e.factors) for e in events]
        rb = [[0.0, 1.0 * (1 + k % 2)] for k in range(clock)]
        rew = RewardSpec((ComponentReward(1, "linear", [r[1] for r in rb]), ComponentReward(0, "linear", [0.3])))
        s0 = (n, 0, 0)
    else:
        rew = RewardSpec((ComponentReward(1, "linear", [1.0]), ComponentReward(0, "linear", [0.3])))
        s0 = (n, 0)
    return DedpModel(tuple(comps), tuple(events), IdentityMap(2), rew, gamma, s0)


def infection(n=4, gamma=0.9):
    """Susceptible-infected-recovered counts with a mass-action infection term."""
    comps = (Component("s", n), Component("i", n), Component("r", n))
    events = (
        EventSpec("infect", (-1, 1, 0), 0, (Factor(0, "linear", (("scale", 1.0 / n),)),
                                             Factor(1, "table", (("values", [0.6 * i / n for i in range(n)] + [0.0]),)))),
        EventSpec("recover", (0, -1, 1), 1, (Factor(1, "linear", (("scale", 0.3 / n),)),
                                              Factor(2, "indicator", (("hi", n - 1),)))),
    )
    rew = RewardSpec((ComponentReward(0, "linear", [1.0 / n]), ComponentReward(2, "linear", [0.5 / n])))
    return DedpModel(comps, events, IdentityMap(2), rew, gamma, (n - 1, 1, 0))


def chain(n_locations=3, n_individuals=2, gamma=0.9, period=1):
    return build_commute_chain(n_locations, n_individuals, gamma=gamma, period=period)


def fixed_rates(model, coeffs):
    """Same model with a constant action map (no policy dependence)."""
    return DedpModel(model.components, model.events, ConstantMap(tuple(coeffs)), model.reward, model.gamma,
                     model.initial_state)


def linear_policy(model, seed=0, scale=1.0, clock_bins=None):
    features = FeatureSpec.for_model(model, clock_bins=clock_bins)
    theta = np.random.default_rng(seed).normal(0.0, scale, model.num_action_dims * features.n_features)
    return LinearSigmoidPolicy(theta, model.num_action_dims, features)


def _factor_by_formula(f, x):
    p = f.p
    if f.kind == "linear":
        return p.get("scale", 1.0) * x
    if f.kind == "indicator":
        return float(p.get("lo", -math.inf) <= x <= p.get("hi", math.inf))
    if f.kind == "constant":
        return p.get("value", 1.0)
    if f.kind == "capacity":
        return max(0.0, 1.0 - x / p["capacity"])
    return p["values"][x]


def explicit_kernel(model, state, action):
    """Next-state distribution summed event by event, written without the library's tables."""
    c = np.asarray(model.action_map.coefficients(np.asarray(action, dtype=float)))
    out = {}
    total = 0.0
    for ev in model.events:
        h = c[ev.coeff_index] * math.prod(_factor_by_formula(f, state[f.component]) for f in ev.factors)
        total += h
        if h == 0.0:
            continue
        nxt = list(s + d for s, d in zip(state, ev.delta))
        if model.clock_index is not None:
            nxt[model.clock_index] = (nxt[model.clock_index] + 1) % model.period
        out[tuple(nxt)] = out.get(tuple(nxt), 0.0) + h
    stay = list(state)
    if model.clock_index is not None:
        stay[model.clock_index] = (stay[model.clock_index] + 1) % model.period
    out[tuple(stay)] = out.get(tuple(stay), 0.0) + (1.0 - total)
    return out


def all_states(model):
    return itertools.product(*(range(c.domain_max + 1) for c in model.components))


def brute_force_value(model, policy, horizon):
    """sum_t gamma^t E[R(s_t)] by pushing a state distribution forward with ``explicit_kernel``."""
    tab = model.reward_table
    ci = model.clock_index
    dist = {tuple(model.initial_state): 1.0}
    total = 0.0
    for t in range(horizon + 1):
        for s, p in dist.items():
            clock = 0 if ci is None else s[ci]
            total += model.gamma**t * p * sum(tab[m, clock, s[m]] for m in model.population_indices)
        if t == horizon:
            break
        nxt = {}
        for s, p in dist.items():
            for s2, q in explicit_kernel(model, s, policy.act(np.array(s, dtype=float))).items():
                nxt[s2] = nxt.get(s2, 0.0) + p * q
        dist = nxt
    return total


MODELS = {
    "birth_death": birth_death,
    "exchange": exchange,
    "infection": infection,
    "chain": chain,
}
