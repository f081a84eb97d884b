"""
A small SynthTown day
=====================

The commute scenario: everyone starts at home, work pays during the middle
of the day, and time on road links costs a little.  Departures are gated
per facility and split over three alternative routes each way.  This demo
shrinks the town to keep the run short; ``configs/bench_synthtown.json``
holds the full 50-person benchmark.
"""

import numpy as np

from dedp import OptimizeSchedule, RolloutConfig, monte_carlo_value, optimize
from dedp.bench import Problem, initial_policy
from dedp.scenarios import ScenarioConfig, validate_scenario
from dedp.simulator import mean_occupancy

cfg = ScenarioConfig(n_individuals=10, link_capacity=4, facility_rate=0.4, link_rate=0.6,
                     schedule={"beta_work": 2.0, "beta_home": 0.2, "beta_trav": -0.1})
print(validate_scenario(cfg))

# %%
# The default policy barely leaves home.  Twenty VI epochs with the cheap
# "expected" coupling learn to send people out before work opens.
sc = cfg.build()
model = sc.model
problem = Problem(model, sc.features, cfg.horizon, tuple(loc.name for loc in sc.network.locations))
pol0 = initial_policy(problem, seed=0)
pol, history = optimize(model, pol0, OptimizeSchedule(epochs=20, horizon=cfg.horizon, mc_rollouts=8,
                                                      coupling="expected"))
evalc = RolloutConfig(cfg.horizon, seed=99, num_rollouts=50)
for name, p in (("initial", pol0), ("trained", pol)):
    est = monte_carlo_value(model, p, model.initial_state, evalc)
    print(f"{name:>8}: value {est.mean:8.2f} +- {est.std_error:.2f}")

# %%
# Where people are, hour by hour (every 12 steps), under the trained policy.
occ = mean_occupancy(model, pol, model.initial_state, RolloutConfig(cfg.horizon, 7, 20))
links = sc.link_indices
print(" step  home  work  links")
for t in range(0, cfg.horizon + 1, 12):
    row = occ[t]
    print(f"{t:5d} {row[0]:5.1f} {row[1]:5.1f} {row[links].sum():6.1f}")
print("work share during work hours:", round(float(np.mean(occ[54:102, 1])) / cfg.n_individuals, 3))
