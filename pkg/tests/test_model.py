import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import birth_death, chain, exchange, explicit_kernel, infection, linear_policy
from dedp import (
    Component,
    ComponentReward,
    ConfigError,
    ConstantMap,
    DedpModel,
    DomainViolation,
    EventSpec,
    Factor,
    IdentityMap,
    LinearMap,
    RateOverflow,
    RewardSpec,
    RoutingMap,
    Trajectory,
    apply_event,
    event_distribution,
    event_rate,
    marginalize_events,
    model_from_dict,
    model_to_dict,
    reward,
    single_component_model,
    trajectory_log_prob,
)
from dedp.model import event_distribution_batch, factor_products, reward_batch


def all_states(model):
    return itertools.product(*(range(c.domain_max + 1) for c in model.components))


# -- factors and rates --------------------------------------------------------


def test_factor_kinds():
    assert Factor(0, "linear", (("scale", 0.5),)).values(3).tolist() == [0.0, 0.5, 1.0, 1.5]
    assert Factor(0, "indicator", (("lo", 1), ("hi", 2))).values(3).tolist() == [0.0, 1.0, 1.0, 0.0]
    assert Factor(0, "constant", (("value", 0.25),)).values(2).tolist() == [0.25] * 3
    assert Factor(0, "capacity", (("capacity", 4),)).values(4).tolist() == [1.0, 0.75, 0.5, 0.25, 0.0]
    assert Factor(0, "table", (("values", [3, 1, 2]),)).values(2).tolist() == [3.0, 1.0, 2.0]


def test_factor_rejects_unknown_kind_and_negative_values():
    with pytest.raises(ConfigError):
        Factor(0, "quadratic")
    with pytest.raises(ConfigError):
        Factor(0, "linear", (("scale", -1.0),)).values(2)
    with pytest.raises(ConfigError):
        Factor(0, "table", (("values", [1.0]),)).values(2)


def test_event_rate_is_coefficient_times_factor_product():
    m = infection(n=4)
    # infect: c0 * (s / 4) * (0.6 i / 4) at s=3, i=1
    assert event_rate(m, (3, 1, 0), [0.8, 0.5], 1) == pytest.approx(0.8 * 0.75 * 0.15, abs=1e-15)
    assert event_rate(m, (3, 1, 0), [0.8, 0.5], 2) == pytest.approx(0.5 * 0.3 / 4, abs=1e-15)
    with pytest.raises(ValueError):
        event_rate(m, (3, 1, 0), [0.8, 0.5], 3)


def test_event_distribution_puts_the_remainder_on_null():
    m = birth_death(dmax=4)
    p = event_distribution(m, (2,), [0.6, 0.4])
    assert p.tolist() == pytest.approx([1 - 0.3 - 0.1, 0.3, 0.1], abs=1e-15)


def test_rate_overflow():
    m = single_component_model(2, [(1, "indicator", {"hi": 1}), (-1, "indicator", {"lo": 1})], coeffs=[0.7, 0.7])
    assert event_distribution(m, (0,), []).sum() == pytest.approx(1.0)
    with pytest.raises(RateOverflow):
        event_distribution(m, (1,), [])


def test_tiny_overflow_within_tolerance_is_accepted():
    m = single_component_model(1, [(1, "indicator", {"hi": 0})], coeffs=[1.0 + 1e-13])
    p = event_distribution(m, (0,), [])
    assert p[0] == 0.0


# -- state updates --------------------------------------------------------------


def test_apply_event_and_domain_violation():
    m = chain(3, 2)
    assert apply_event(m, (2, 0, 0), 1) == (1, 1, 0)
    assert apply_event(m, (2, 0, 0), 0) == (2, 0, 0)
    with pytest.raises(DomainViolation):
        apply_event(m, (0, 2, 0), 1)
    with pytest.raises(DomainViolation):
        apply_event(m, (3, 0, 0), 0)
    with pytest.raises(ValueError):
        apply_event(m, (2, 0, 0), 99)


def test_clock_advances_on_every_step_and_wraps():
    m = chain(2, 1, period=3)
    assert apply_event(m, (1, 0, 0), 0) == (1, 0, 1)
    assert apply_event(m, (1, 0, 2), 1) == (0, 1, 0)


def test_validation_requires_a_guard_at_the_domain_edge():
    comp = (Component("x", 2),)
    with pytest.raises(ConfigError):
        DedpModel(comp, (EventSpec("up", (1,), 0),), ConstantMap((0.5,)))


def test_clock_cannot_be_moved_by_events():
    comps = (Component("x", 1), Component("clock", 2, clock=True))
    ev = EventSpec("tick", (0, 1), 0, (Factor(0, "constant"),))
    with pytest.raises(ConfigError):
        DedpModel(comps, (ev,), ConstantMap((0.1,)))


def test_reward_reads_the_clock():
    m = exchange(n=3, clock=3)
    # b is rewarded 1 at even clock values and 2 at odd ones, a at 0.3 per head
    assert reward(m, (1, 2, 0)) == pytest.approx(2 * 1.0 + 0.3)
    assert reward(m, (1, 2, 1)) == pytest.approx(2 * 2.0 + 0.3)
    states = np.array([(1, 2, 0), (1, 2, 1), (3, 0, 2)])
    assert reward_batch(m, states).tolist() == pytest.approx([2.3, 4.3, 0.9])


# -- the event-marginalised kernel ---------------------------------------------


@pytest.mark.parametrize("build", [birth_death, exchange, infection, lambda: chain(3, 2, period=2)])
def test_marginalized_kernel_matches_explicit_event_sum(build):
    m = build()
    rng = np.random.default_rng(1)
    for s in all_states(m):
        a = rng.uniform(0, 1, m.num_action_dims)
        got = marginalize_events(m, s, a)
        want = explicit_kernel(m, s, a)
        want = {k: v for k, v in want.items() if v != 0.0}
        assert set(got) == set(want)
        for k in want:
            assert abs(got[k] - want[k]) <= 1e-12


def test_batched_distribution_matches_single_state():
    m = infection()
    states = np.array(list(all_states(m)))
    acts = np.random.default_rng(0).uniform(0, 1, (len(states), 2))
    batch = event_distribution_batch(m, states, acts)
    for s, a, row in zip(states, acts, batch):
        assert np.allclose(row, event_distribution(m, s, a), atol=1e-15)


# -- trajectories ---------------------------------------------------------------


def test_trajectory_log_prob_by_hand():
    m = single_component_model(1, [(1, "indicator", {"hi": 0})], coeffs=[0.25])
    pol = linear_policy(m)
    up = Trajectory(((0,), (1,), (1,)), (1, 0))
    stay = Trajectory(((0,), (0,)), (0,))
    assert trajectory_log_prob(m, pol, up) == pytest.approx(math.log(0.25))
    assert trajectory_log_prob(m, pol, stay) == pytest.approx(math.log(0.75))
    bad = Trajectory(((0,), (0,)), (1,))
    assert trajectory_log_prob(m, pol, bad) == -math.inf


def test_trajectory_shape_check():
    with pytest.raises(ValueError):
        Trajectory(((0,),), (0,))


# -- action maps ---------------------------------------------------------------


def _routing():
    # two gates, one two-way split on the first gate, one fixed-share coefficient
    return RoutingMap(4, scale=(0.5, 0.5, 0.3), gate=(0, 0, 1), group=(0, 0, -1), logit=(2, 3, -1), sharpness=3.0)


def _maps():
    rng = np.random.default_rng(3)
    return [
        IdentityMap(4),
        ConstantMap((0.1, 0.2), n_actions=4),
        LinearMap(tuple(map(tuple, rng.uniform(0, 0.3, (3, 4)))), tuple(rng.uniform(0, 0.1, 3))),
        _routing(),
    ]


@pytest.mark.parametrize("amap", _maps(), ids=lambda a: a.kind)
def test_action_map_jacobian_matches_finite_differences(amap):
    a = np.array([0.3, 0.6, 0.45, 0.7])
    J = amap.jacobian(a)
    h = 1e-6
    fd = np.stack([(amap.coefficients(a + h * e) - amap.coefficients(a - h * e)) / (2 * h) for e in np.eye(4)], axis=1)
    assert np.allclose(J, fd, atol=1e-8)


@pytest.mark.parametrize("amap", _maps(), ids=lambda a: a.kind)
def test_action_map_vjp_is_transposed_jacobian(amap):
    rng = np.random.default_rng(5)
    A = rng.uniform(0, 1, (5, 4))
    W = rng.normal(size=(5, amap.n_coeffs))
    got = amap.vjp(A, W)
    want = np.stack([w @ amap.jacobian(a) for a, w in zip(A, W)])
    assert np.allclose(got, want, atol=1e-12)


def test_routing_shares_split_the_gate():
    amap = _routing()
    c = amap.coefficients(np.array([0.8, 0.5, 0.4, 0.4]))
    # equal logits split the first gate evenly
    assert c[0] == pytest.approx(0.5 * 0.8 * 0.5)
    assert c[1] == pytest.approx(0.5 * 0.8 * 0.5)
    assert c[2] == pytest.approx(0.3 * 0.5)


# -- serialisation ---------------------------------------------------------------


@pytest.mark.parametrize("build", [birth_death, exchange, infection, lambda: chain(3, 2, period=2)])
def test_model_json_round_trip(build):
    m = build()
    d = json.loads(json.dumps(model_to_dict(m)))
    back = model_from_dict(d)
    assert back == m
    assert hash(back) == hash(m)
    assert np.array_equal(back.g_table, m.g_table)
    assert np.array_equal(back.reward_table, m.reward_table)


def test_routing_model_round_trip():
    from dedp.scenarios import build_synthtown

    m = build_synthtown(5).model
    assert model_from_dict(json.loads(json.dumps(model_to_dict(m)))) == m


def test_reward_spec_table_kind():
    comps = (Component("x", 2),)
    ev = EventSpec("up", (1,), 0, (Factor(0, "indicator", (("hi", 1),)),))
    rew = RewardSpec((ComponentReward(0, "table", [[0.0, 2.0, 5.0]]),))
    m = DedpModel(comps, (ev,), ConstantMap((0.5,)), rew, 0.9, (0,))
    assert [reward(m, (x,)) for x in range(3)] == [0.0, 2.0, 5.0]


# -- properties ----------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(
    st.integers(0, 3), st.integers(0, 3),
    st.floats(0.0, 1.0), st.floats(0.0, 1.0),
)
def test_distribution_is_a_probability_vector(a, b, c0, c1):
    m = exchange(n=3)
    if a + b > 3:
        return
    p = event_distribution(m, (a, b), [c0, c1])
    assert np.all(p >= 0.0)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=2, max_size=2), st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4))
def test_chain_moves_conserve_population(start, acts):
    m = chain(3, 4)
    rest = 4 - sum(start)
    if rest < 0:
        return
    s = (start[0], start[1], rest)
    for nxt in marginalize_events(m, s, acts):
        assert sum(nxt) == 4


def test_factor_products_shape():
    m = infection()
    states = np.zeros((2, 5, 3), dtype=int)
    assert factor_products(m, states).shape == (2, 5, 2)
