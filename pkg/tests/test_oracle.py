import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import birth_death, brute_force_value, chain, exchange, fixed_rates, infection, linear_policy
from dedp import (
    ComponentReward,
    DedpModel,
    NegativeReward,
    RewardSpec,
    SpaceTooLarge,
    duality_gap,
    enumerate_states,
    exact_mixture,
    exact_value,
    shift_rewards,
    single_component_model,
)
from dedp.oracle import duality_gap_from_mixture, reward_offset_value


def _flip():
    # x: 0 -> 1 with probability 1/2 per step; reward 1 once flipped, gamma 0.9
    return single_component_model(1, [(1, "indicator", {"hi": 0})], coeffs=[0.5], reward_values=[0.0, 1.0], gamma=0.9)


def test_exact_value_by_hand():
    m = _flip()
    pol = linear_policy(m)
    # sum_t 0.9^t (1 - 0.5^t)
    assert exact_value(m, pol, (0,), 0).value == 0.0
    assert exact_value(m, pol, (0,), 1).value == pytest.approx(0.45, abs=1e-15)
    assert exact_value(m, pol, (0,), 2).value == pytest.approx(1.0575, abs=1e-15)
    long = exact_value(m, pol, (0,), 400)
    assert long.value == pytest.approx(10.0 - 1.0 / 0.55, abs=1e-12)
    assert long.truncation_bound < 1e-15


def test_zero_reward_model_has_zero_value():
    m = single_component_model(2, [(1, "indicator", {"hi": 1})], coeffs=[0.3])
    assert exact_value(m, linear_policy(m), (0,), 20).value == 0.0


@pytest.mark.parametrize(
    "build,H",
    [(birth_death, 25), (exchange, 20), (lambda: exchange(3, clock=3), 20), (infection, 15), (lambda: chain(3, 2, period=2), 20)],
)
def test_exact_value_matches_brute_force_distribution_push(build, H):
    m = build()
    for seed in range(2):
        pol = linear_policy(m, seed)
        assert exact_value(m, pol, m.initial_state, H).value == pytest.approx(brute_force_value(m, pol, H), rel=1e-12)


def test_truncation_bound_covers_the_tail():
    m = birth_death()
    pol = linear_policy(m, 1)
    short = exact_value(m, pol, m.initial_state, 20)
    long = exact_value(m, pol, m.initial_state, 300)
    assert 0.0 <= long.value - short.value <= short.truncation_bound


def test_enumerate_reachable_states():
    m = chain(3, 2)
    space = enumerate_states(m, m.initial_state)
    assert len(space) == math.comb(4, 2)
    assert all(sum(s) == 2 for s in space.states)
    assert space.index[space.states[3]] == 3
    assert len(enumerate_states(m)) == 27
    with pytest.raises(SpaceTooLarge):
        enumerate_states(m, cap=10)


def test_mixture_normalizer_is_the_value():
    m = exchange(3)
    pol = linear_policy(m, 3)
    mix = exact_mixture(m, pol, m.initial_state, 6)
    assert mix.normalizer == pytest.approx(exact_value(m, pol, m.initial_state, 6).value, rel=1e-12)
    assert mix.weights.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("build,H", [(_flip, 8), (birth_death, 7), (exchange, 6), (infection, 5)])
def test_duality_gap_vanishes_at_the_posterior(build, H):
    m = build()
    pol = linear_policy(m, 0)
    mix = exact_mixture(m, pol, m.initial_state, H)
    assert abs(duality_gap_from_mixture(mix, mix.weights)) <= 1e-9
    uniform = np.full(mix.r.shape, 1.0 / mix.r.size)
    assert duality_gap_from_mixture(mix, uniform) > 0.0 or np.any(mix.r == 0)
    live = mix.r > 0
    q = np.where(live, 1.0 / live.sum(), 0.0)
    assert duality_gap_from_mixture(mix, q) > 0.0


def test_duality_gap_rejects_bad_q():
    m = _flip()
    pol = linear_policy(m)
    mix = exact_mixture(m, pol, (0,), 3)
    with pytest.raises(ValueError):
        duality_gap_from_mixture(mix, np.ones(mix.r.size))
    with pytest.raises(ValueError):
        duality_gap_from_mixture(mix, np.ones(3) / 3)
    # mass on a zero-reward row makes the bound -inf
    q = np.zeros(mix.r.size)
    q[np.flatnonzero(mix.r == 0)[0]] = 1.0
    assert duality_gap_from_mixture(mix, q) == math.inf
    assert duality_gap(m, pol, (0,), 3, mix.weights) == pytest.approx(0.0, abs=1e-12)


def _negative(model):
    rew = RewardSpec((ComponentReward(0, "linear", [-1.0]), ComponentReward(1, "linear", [0.5, -0.25])))
    comps = model.components
    return DedpModel(comps, model.events, model.action_map, rew, model.gamma, model.initial_state)


def test_shift_rewards_moves_the_value_by_the_offset():
    m = _negative(exchange(3, clock=2))
    pol = linear_policy(m, 2)
    with pytest.raises(NegativeReward):
        exact_mixture(m, pol, m.initial_state, 3)
    shifted, offsets = shift_rewards(m)
    assert np.all(shifted.reward_table >= 0)
    H = 12
    off = reward_offset_value(m, offsets, m.initial_state, H)
    assert exact_value(shifted, pol, m.initial_state, H).value + off == pytest.approx(
        exact_value(m, pol, m.initial_state, H).value, rel=1e-12, abs=1e-12
    )


def test_policy_independent_model_ignores_the_policy():
    m = fixed_rates(exchange(3), (0.4, 0.7))
    v1 = exact_value(m, linear_policy(m, 0), m.initial_state, 15).value
    v2 = exact_value(m, linear_policy(m, 9, scale=5.0), m.initial_state, 15).value
    assert v1 == v2


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.5, 0.99), st.integers(1, 12))
def test_flip_value_closed_form(c, gamma, H):
    m = single_component_model(1, [(1, "indicator", {"hi": 0})], coeffs=[c], reward_values=[0.0, 1.0], gamma=gamma)
    want = sum(gamma**t * (1 - (1 - c) ** t) for t in range(H + 1))
    assert exact_value(m, linear_policy(m), (0,), H).value == pytest.approx(want, rel=1e-12, abs=1e-14)
