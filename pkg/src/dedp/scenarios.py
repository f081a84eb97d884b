"""Transportation scenarios: the SynthTown-style commute network and tiny oracle chains.

Individuals move between locations (facilities and road links) one event
at a time.  A move o -> d fires at rate

    c_k * (x_o / N) * g_d(x_d)

where N is the population, ``c_k`` comes from the policy through a routing
map (departure gate at facilities, softmax split over alternative
downstream edges) and ``g_d`` is the congestion factor of the destination:
max(0, 1 - x_d / capacity) on links, 1 on facilities.  Each origin's
outgoing coefficients sum to at most its ``rate``.  With every rate <= 1
the total rate of a mass-conserving state never exceeds 1.  The solver's
projected kernels see one component at an arbitrary value and the others
at their expectations, which can add up to 2N individuals; rates <= 1/2
keep those rows valid too.  ``build_synthtown`` certifies both bounds.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import (
    Component,
    ComponentReward,
    DedpModel,
    EventSpec,
    Factor,
    IdentityMap,
    RewardSpec,
    RoutingMap,
)
from .policy import FeatureSpec

LOCATION_KINDS = ("home", "work", "link")


@dataclass(frozen=True)
class Location:
    name: str
    kind: str
    capacity: int = 0  # links only; 0 means the population size

    def __post_init__(self):
        if self.kind not in LOCATION_KINDS:
            raise ConfigError(f"location {self.name!r}: kind must be one of {LOCATION_KINDS}")
        if self.capacity < 0:
            raise ConfigError(f"location {self.name!r}: negative capacity")


@dataclass(frozen=True)
class Edge:
    origin: str
    dest: str
    rate: float = 1.0  # free-flow ceiling of the origin's outflow


@dataclass(frozen=True)
class RoadNetwork:
    locations: tuple
    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "locations", tuple(self.locations))
        object.__setattr__(self, "edges", tuple(self.edges))
        names = [loc.name for loc in self.locations]
        if len(set(names)) != len(names):
            raise ConfigError("location names must be unique")
        known = set(names)
        for e in self.edges:
            if e.origin not in known or e.dest not in known:
                raise ConfigError(f"edge {e.origin}->{e.dest} references an unknown location")
            if e.origin == e.dest:
                raise ConfigError(f"self-loop at {e.origin!r}")
            if not (0.0 < e.rate <= 1.0):
                raise ConfigError(f"edge {e.origin}->{e.dest}: rate must lie in (0, 1]")
        for name in names:
            rates = {e.rate for e in self.out_edges(name)}
            if len(rates) > 1:
                raise ConfigError(f"edges leaving {name!r} must share one rate")
        if not self.facilities("home") or not self.facilities("work"):
            raise ConfigError("network needs a home and a work facility")
        self._check_connected()

    def index(self, name: str) -> int:
        for i, loc in enumerate(self.locations):
            if loc.name == name:
                return i
        raise ConfigError(f"unknown location {name!r}")

    def out_edges(self, name: str) -> list:
        return [e for e in self.edges if e.origin == name]

    def facilities(self, kind: str) -> list:
        return [loc.name for loc in self.locations if loc.kind == kind]

    @property
    def links(self) -> list:
        return [loc.name for loc in self.locations if loc.kind == "link"]

    def _reach(self, start: str) -> set:
        seen, stack = {start}, [start]
        while stack:
            for e in self.out_edges(stack.pop()):
                if e.dest not in seen:
                    seen.add(e.dest)
                    stack.append(e.dest)
        return seen

    def _check_connected(self):
        # every facility reaches every other, and every link lies on a facility-to-facility path
        facs = [loc.name for loc in self.locations if loc.kind != "link"]
        for f in facs:
            missing = set(facs) - self._reach(f)
            if missing:
                raise ConfigError(f"facility {f!r} cannot reach {sorted(missing)}")
        for link in self.links:
            if not any(link in self._reach(f) for f in facs) or not (set(facs) & self._reach(link)):
                raise ConfigError(f"link {link!r} is not on a commute path")

    def to_dict(self) -> dict:
        return {"locations": [asdict(loc) for loc in self.locations], "edges": [asdict(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d: dict) -> "RoadNetwork":
        try:
            return cls(tuple(Location(**loc) for loc in d["locations"]), tuple(Edge(**e) for e in d["edges"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed network: {exc}") from exc


def route_network(outbound=(1, 3, 7), inbound=(1, 4, 7), link_capacity: int = 0, facility_rate: float = 0.5,
                  link_rate: float = 0.5) -> RoadNetwork:
    """Home and work joined by disjoint routes of the given link counts.

    The default 3 + 3 routes hold 23 links: short, medium and long
    alternatives in each direction.  Departures leave facilities at up to
    ``facility_rate`` and links drain at ``link_rate``.
    """
    locs = [Location("home", "home"), Location("work", "work")]
    edges = []

    def add_route(tag, src, dst, n_links):
        prev = src
        for j in range(n_links):
            name = f"{tag}{j + 1}"
            locs.append(Location(name, "link", link_capacity))
            edges.append(Edge(prev, name, facility_rate if prev == src else link_rate))
            prev = name
        edges.append(Edge(prev, dst, facility_rate if prev == src else link_rate))

    for r, n in enumerate(outbound):
        add_route(f"out{r + 1}_", "home", "work", n)
    for r, n in enumerate(inbound):
        add_route(f"in{r + 1}_", "work", "home", n)
    return RoadNetwork(tuple(locs), tuple(edges))


@dataclass(frozen=True)
class ScheduleSpec:
    """Day length and per-location score coefficients.

    ``beta_work`` and ``beta_home`` reward each individual present at the
    facility during its active window (work hours for work, the rest of the
    day for home); ``beta_trav`` (<= 0) is charged per individual per step on
    a link.  Inactive facility hours score ``beta_idle``.
    """

    period: int = 144
    work_start: int = 54
    work_end: int = 102
    beta_work: float = 1.0
    beta_home: float = 1.0
    beta_trav: float = -1.0
    beta_idle: float = 0.0

    def __post_init__(self):
        if self.period < 1 or not (0 <= self.work_start < self.work_end <= self.period):
            raise ConfigError("schedule needs 0 <= work_start < work_end <= period")
        if self.beta_trav > 0:
            raise ConfigError("beta_trav must be <= 0")
        if self.beta_work < 0 or self.beta_home < 0:
            raise ConfigError("facility coefficients must be >= 0 in their active windows")

    def work_hours(self) -> np.ndarray:
        t = np.arange(self.period)
        return (t >= self.work_start) & (t < self.work_end)

    def coefficients(self, kind: str) -> np.ndarray:
        """Per-clock reward per individual at a location of this kind."""
        w = self.work_hours()
        if kind == "work":
            return np.where(w, self.beta_work, self.beta_idle)
        if kind == "home":
            return np.where(w, self.beta_idle, self.beta_home)
        return np.full(self.period, self.beta_trav)


@dataclass(frozen=True)
class Scenario:
    model: DedpModel
    features: FeatureSpec
    network: RoadNetwork
    schedule: ScheduleSpec
    n_individuals: int
    rate_bound: float  # max of the exact and projected worst-case total rates

    @property
    def work_index(self) -> int:
        return self.network.index(self.network.facilities("work")[0])

    @property
    def link_indices(self) -> list:
        return [self.network.index(n) for n in self.network.links]


def _greedy(per, budget):
    """max sum r_o x_o over 0 <= x_o <= cap_o, sum x_o <= budget."""
    total = 0.0
    for r, cap in sorted(per, reverse=True):
        take = min(cap, budget)
        total += r * take
        budget -= take
        if budget <= 0:
            break
    return total


def _per_individual(network, n_individuals, capacities):
    return [(max((e.rate for e in network.out_edges(loc.name)), default=0.0) / n_individuals, cap)
            for loc, cap in zip(network.locations, capacities)]


def worst_case_rate(network: RoadNetwork, n_individuals: int, capacities) -> float:
    """max over mass-conserving states of sum_v h_v with every coefficient at its ceiling.

    Per-individual outflow at origin o is at most rate_o / N, and a linear
    function over {sum x = N, 0 <= x_o <= cap_o} peaks by filling the
    fastest locations first.
    """
    return _greedy(_per_individual(network, n_individuals, capacities), n_individuals)


def worst_case_projected_rate(network: RoadNetwork, n_individuals: int, capacities) -> float:
    """Same bound for the solver's projected rows: one component at any x <= cap, the rest in expectation.

    Destination factors are bounded by 1 and the other components'
    expectations by a total of N.
    """
    per = _per_individual(network, n_individuals, capacities)
    best = 0.0
    for i, (r, cap) in enumerate(per):
        others = per[:i] + per[i + 1 :]
        best = max(best, r * cap + _greedy(others, n_individuals))
    return best


def build_synthtown(n_individuals: int = 50, network: RoadNetwork | None = None,
                    schedule: ScheduleSpec | None = None, gamma: float = 0.99,
                    clock_bins: int = 24, sharpness: float = 4.0) -> Scenario:
    """Commute DEDP: one component per location plus an appended clock.

    Actions are one departure gate per facility followed by one split logit
    per edge leaving any location with several outgoing edges.  Every
    individual starts at home at clock 0.
    """
    if n_individuals < 1:
        raise ConfigError("n_individuals must be >= 1")
    network = network or route_network()
    schedule = schedule or ScheduleSpec()
    N = n_individuals
    locs = network.locations
    caps = [min(N, loc.capacity or N) if loc.kind == "link" else N for loc in locs]
    comps = [Component(loc.name, cap) for loc, cap in zip(locs, caps)]
    comps.append(Component("clock", schedule.period - 1, clock=True))
    M = len(comps)

    gate_of = {}
    for loc in locs:
        if loc.kind != "link":
            gate_of[loc.name] = len(gate_of)
    n_act = len(gate_of)
    scale, gate, group, logit, events = [], [], [], [], []
    n_groups = 0
    for loc in locs:
        out = network.out_edges(loc.name)
        if not out:
            continue
        grp = -1
        if len(out) > 1:
            grp, n_groups = n_groups, n_groups + 1
        for e in out:
            k = len(scale)
            scale.append(e.rate)
            gate.append(gate_of.get(loc.name, -1))
            group.append(grp)
            if grp >= 0:
                logit.append(n_act)
                n_act += 1
            else:
                logit.append(-1)
            o, d = network.index(e.origin), network.index(e.dest)
            delta = [0] * M
            delta[o], delta[d] = -1, 1
            factors = [Factor(o, "linear", (("scale", 1.0 / N),))]
            if locs[d].kind == "link":
                factors.append(Factor(d, "capacity", (("capacity", caps[d]),)))
            else:
                factors.append(Factor(d, "indicator", (("hi", caps[d] - 1),)))
            events.append(EventSpec(f"{e.origin}->{e.dest}", tuple(delta), k, tuple(factors)))
    if n_act == 0:
        raise ConfigError("network yields no action variables")
    amap = RoutingMap(n_act, tuple(scale), tuple(gate), tuple(group), tuple(logit), sharpness)
    rewards = tuple(
        ComponentReward(i, "linear", schedule.coefficients(loc.kind).tolist()) for i, loc in enumerate(locs)
    )
    init = [0] * M
    init[network.index(network.facilities("home")[0])] = N
    model = DedpModel(tuple(comps), tuple(events), amap, RewardSpec(rewards), gamma, tuple(init))
    bound = max(worst_case_rate(network, N, caps), worst_case_projected_rate(network, N, caps))
    if bound > 1.0 + 1e-12:
        raise ConfigError(f"worst-case total rate {bound:.4g} exceeds 1; lower edge rates")
    pops = tuple(range(len(locs)))
    features = FeatureSpec(pops, tuple(float(N) for _ in pops), M - 1, schedule.period,
                           min(clock_bins, schedule.period), True)
    return Scenario(model, features, network, schedule, N, bound)


def build_commute_chain(n_locations: int, n_individuals: int, gamma: float = 0.9, period: int = 1,
                        end_reward: float = 1.0, start_reward: float = 0.0) -> DedpModel:
    """Line of locations with forward and backward moves, one action per move.

    Individuals start at location 0.  Rewards are constant per individual:
    ``start_reward`` at the first location, ``end_reward`` at the last.  With
    ``period`` > 1 a clock component is appended (rewards ignore it).  Move
    rates are a * x_o / (2N), so the total never exceeds 1.
    """
    if n_locations < 2 or n_individuals < 1:
        raise ConfigError("need n_locations >= 2 and n_individuals >= 1")
    N = n_individuals
    comps = [Component(f"loc{i}", N) for i in range(n_locations)]
    if period > 1:
        comps.append(Component("clock", period - 1, clock=True))
    M = len(comps)
    events = []
    for i in range(n_locations - 1):
        for o, d in ((i, i + 1), (i + 1, i)):
            delta = [0] * M
            delta[o], delta[d] = -1, 1
            factors = (Factor(o, "linear", (("scale", 0.5 / N),)), Factor(d, "indicator", (("hi", N - 1),)))
            events.append(EventSpec(f"loc{o}->loc{d}", tuple(delta), len(events), factors))
    rewards = []
    if start_reward:
        rewards.append(ComponentReward(0, "linear", [start_reward]))
    if end_reward:
        rewards.append(ComponentReward(n_locations - 1, "linear", [end_reward]))
    init = [0] * M
    init[0] = N
    return DedpModel(tuple(comps), tuple(events), IdentityMap(len(events)), RewardSpec(tuple(rewards)), gamma,
                     tuple(init))


def stars_and_bars(n_locations: int, n_individuals: int) -> int:
    """Number of ways to place n identical individuals in n_locations."""
    return math.comb(n_individuals + n_locations - 1, n_locations - 1)


# ---------------------------------------------------------------------------
# scenario config files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    n_individuals: int = 50
    network: dict | None = None  # None: the default 23-link route network
    routes: dict = field(default_factory=lambda: {"outbound": [1, 3, 7], "inbound": [1, 4, 7]})
    link_capacity: int = 0
    facility_rate: float = 0.5
    link_rate: float = 0.5
    schedule: dict = field(default_factory=dict)
    gamma: float = 0.99
    horizon: int = 144
    clock_bins: int = 24
    sharpness: float = 4.0

    def build(self) -> Scenario:
        if self.network is not None:
            net = RoadNetwork.from_dict(self.network)
        else:
            net = route_network(tuple(self.routes["outbound"]), tuple(self.routes["inbound"]), self.link_capacity,
                                self.facility_rate, self.link_rate)
        try:
            sched = ScheduleSpec(**self.schedule)
        except TypeError as exc:
            raise ConfigError(f"malformed schedule: {exc}") from exc
        return build_synthtown(self.n_individuals, net, sched, self.gamma, self.clock_bins, self.sharpness)


def load_scenario_config(path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    try:
        return ScenarioConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def validate_scenario(config: ScenarioConfig) -> dict:
    """Build the scenario and summarise what the solver will face."""
    sc = config.build()
    m = sc.model
    pops = m.population_indices
    n_locations = len(pops)
    return {
        "num_components": m.num_components,
        "num_events": m.num_events,
        "num_action_dims": m.num_action_dims,
        "worst_case_rate": worst_case_rate(sc.network, sc.n_individuals, _caps(sc)),
        "worst_case_projected_rate": worst_case_projected_rate(sc.network, sc.n_individuals, _caps(sc)),
        "population_states": stars_and_bars(n_locations, sc.n_individuals),
        "state_space_estimate": stars_and_bars(n_locations, sc.n_individuals) * m.period,
        "message_cells": int(sum(m.domain_max[pops] + 1)),
        "horizon": config.horizon,
    }


def _caps(sc: Scenario) -> list:
    return [int(sc.model.domain_max[i]) for i in range(len(sc.network.locations))]
