"""
Events, rollouts and exact values
=================================

A two-individual commute chain: people start at location 0 and step
forward or back one location at a time.  We simulate it, estimate the
policy value by Monte Carlo and compare with the exact value obtained by
pushing the full state distribution forward.
"""

import numpy as np

from dedp import RolloutConfig, exact_value, init_policy, marginalize_events, monte_carlo_value, simulate
from dedp.scenarios import build_commute_chain

# %%
# Three locations, two individuals, a 4-step clock.  Being at the last
# location earns 1 per individual per step.
model = build_commute_chain(3, 2, gamma=0.9, period=4)
print([c.name for c in model.components], "events:", [e.name for e in model.events])

policy = init_policy(model, "linear-sigmoid", seed=0, scale=1.0)
state = np.array(model.initial_state, dtype=float)
print("actions at the start:", policy.act(state).round(3))

# %%
# One step of the event-marginalised kernel: at most one event fires,
# and the null event takes the remaining probability.
for nxt, p in sorted(marginalize_events(model, model.initial_state, policy.act(state)).items()):
    print(nxt, round(p, 4))

# %%
# A sampled trajectory and the event ids that drove it.
traj = simulate(model, policy, model.initial_state, RolloutConfig(12, seed=3))
for s, e in zip(traj.states[1:], traj.events):
    print(e, s)

# %%
# Monte Carlo against the exact value.  The two should agree within a few
# standard errors.
H = 40
exact = exact_value(model, policy, model.initial_state, H)
est = monte_carlo_value(model, policy, model.initial_state, RolloutConfig(H, seed=1, num_rollouts=2000))
print(f"exact {exact.value:.4f} (tail bound {exact.truncation_bound:.1e})")
print(f"MC    {est.mean:.4f} +- {est.std_error:.4f}")
