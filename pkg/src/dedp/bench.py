"""Seeded head-to-head benchmark runs and their report files.

Every run writes

* ``history_<solver>_seed<k>.csv``: the per-epoch record of one run,
* ``summary.csv``: one row per (solver, seed),
* ``occupancy.csv``: mean populations per (policy, seed, time step),
* ``summary.json``: per-solver aggregates, including wall time.

CSV files carry no timing, so re-running a config reproduces them byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baseline import PgConfig, pg_optimize
from .errors import ConfigError
from .model import DedpModel, model_from_dict
from .policy import FeatureSpec, LinearSigmoidPolicy
from .scenarios import ScenarioConfig
from .simulator import RolloutConfig, default_horizon, mean_occupancy, monte_carlo_value
from .vi import HISTORY_COLUMNS, OptimizeSchedule, optimize

SOLVERS = ("vi", "pg")
CSV_COLUMNS = tuple(c for c in HISTORY_COLUMNS if c != "wall_ms")
EVAL_SEED_BASE = 2**32  # keeps evaluation rollouts apart from training seeds


@dataclass(frozen=True)
class Problem:
    model: DedpModel
    features: FeatureSpec
    horizon: int
    labels: tuple  # population component names, in occupancy column order


def load_problem(path, horizon: int | None = None) -> Problem:
    """Read a scenario config or a serialised model.

    A JSON object with an ``events`` key is taken to be a model; anything else
    is parsed as a scenario config.
    """
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if "events" in data:
        model = model_from_dict(data)
        features = FeatureSpec.for_model(model)
        default = default_horizon(model.gamma)
    else:
        try:
            cfg = ScenarioConfig(**data)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        sc = cfg.build()
        model, features, default = sc.model, sc.features, cfg.horizon
    if model.initial_state is None:
        raise ConfigError(f"{path}: the model has no initial state")
    labels = tuple(model.components[i].name for i in model.population_indices)
    return Problem(model, features, default if horizon is None else int(horizon), labels)


def initial_policy(problem: Problem, seed: int, scale: float = 0.01) -> LinearSigmoidPolicy:
    """Linear-sigmoid policy with small uniform weights; shared by every solver for a seed."""
    D, F = problem.model.num_action_dims, problem.features.n_features
    theta = np.random.default_rng(seed).uniform(-scale, scale, D * F)
    return LinearSigmoidPolicy(theta, D, problem.features)


def epochs_to_converge(values, window: int = 10, rel: float = 0.01) -> int:
    """First epoch whose value lies within ``rel`` of the mean of the last ``window`` values.

    A history that never enters the band (possible when the plateau is near 0
    or the curve is noisy) converges at its last epoch.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty history")
    plateau = v[-window:].mean()
    close = np.flatnonzero(np.abs(v - plateau) <= rel * abs(plateau))
    return int(close[0]) if close.size else v.size - 1


@dataclass(frozen=True)
class RunConfig:
    scenario: str
    solvers: tuple = SOLVERS
    epochs: int = 150
    seeds: tuple = tuple(range(10))
    horizon: int | None = None
    out: str = "bench_out"
    mc_rollouts: int = 16  # per-epoch history estimate
    eval_rollouts: int = 100  # final TRPE estimate
    occupancy_rollouts: int = 10
    workers: int = 1
    vi: dict = field(default_factory=dict)  # OptimizeSchedule overrides
    pg: dict = field(default_factory=dict)  # PgConfig overrides

    def __post_init__(self):
        object.__setattr__(self, "solvers", tuple(self.solvers))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if any(not (0 <= s < 2**32) for s in self.seeds):
            raise ConfigError("seeds must lie in [0, 2**32)")
        unknown = [s for s in self.solvers if s not in SOLVERS]
        if unknown or not self.solvers:
            raise ConfigError(f"solvers must be drawn from {SOLVERS}, got {list(self.solvers)}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if min(self.mc_rollouts, self.eval_rollouts, self.occupancy_rollouts, self.workers) < 1:
            raise ConfigError("rollout counts and workers must be positive")
        bad = set(self.vi) & {"epochs", "horizon", "mc_rollouts", "mc_seed"}
        bad |= set(self.pg) & {"epochs", "horizon", "mc_rollouts", "mc_seed", "seed"}
        if bad:
            raise ConfigError(f"set {sorted(bad)} at the top level of the run config")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "RunConfig":
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(f"malformed run config: {exc}") from exc
        if base_dir is not None and not Path(cfg.scenario).is_absolute():
            cfg = cls(**{**asdict(cfg), "scenario": str(Path(base_dir) / cfg.scenario)})
        return cfg


def load_run_config(path) -> RunConfig:
    """Parse a run config; a relative scenario path is resolved against the config's folder."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return RunConfig.from_dict(data, Path(path).parent)


@dataclass
class SeedResult:
    solver: str
    seed: int
    history: list
    trpe: float
    trpe_stderr: float
    ec: int
    wall_s: float
    occupancy: np.ndarray  # (H+1, populations) under the final policy
    initial_occupancy: np.ndarray


def train(problem: Problem, solver: str, policy, config: RunConfig, seed: int):
    """Run one solver from ``policy``; returns (policy, history)."""
    if solver == "vi":
        try:
            sched = OptimizeSchedule(epochs=config.epochs, horizon=problem.horizon, mc_rollouts=config.mc_rollouts,
                                     mc_seed=seed, **config.vi)
        except TypeError as exc:
            raise ConfigError(f"bad vi options: {exc}") from exc
        return optimize(problem.model, policy, sched)
    try:
        pgc = PgConfig(epochs=config.epochs, horizon=problem.horizon, mc_rollouts=config.mc_rollouts, mc_seed=seed,
                       seed=seed, **config.pg)
    except TypeError as exc:
        raise ConfigError(f"bad pg options: {exc}") from exc
    return pg_optimize(problem.model, policy, pgc)


def _occupancy(problem: Problem, policy, seed: int, rollouts: int) -> np.ndarray:
    m = problem.model
    occ = mean_occupancy(m, policy, m.initial_state, RolloutConfig(problem.horizon, EVAL_SEED_BASE + seed, rollouts))
    return occ[:, m.population_indices]


def run_seed(problem: Problem, solver: str, seed: int, config: RunConfig) -> SeedResult:
    m = problem.model
    start = time.perf_counter()
    pol0 = initial_policy(problem, seed)
    policy, history = train(problem, solver, pol0, config, seed)
    wall = time.perf_counter() - start
    est = monte_carlo_value(m, policy, m.initial_state,
                            RolloutConfig(problem.horizon, EVAL_SEED_BASE + seed, config.eval_rollouts))
    ec = epochs_to_converge([h.mc_value_mean for h in history])
    return SeedResult(solver, seed, history, est.mean, est.std_error, ec, wall,
                      _occupancy(problem, policy, seed, config.occupancy_rollouts),
                      _occupancy(problem, pol0, seed, config.occupancy_rollouts))


def _run_task(args):
    problem, solver, seed, config = args
    return run_seed(problem, solver, seed, config)


def _fmt(x) -> str:
    return repr(int(x)) if isinstance(x, (int, np.integer)) else repr(float(x))


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def summarize(results) -> dict:
    """Per-solver aggregates over seeds."""
    out = {}
    for solver in dict.fromkeys(r.solver for r in results):
        rs = [r for r in results if r.solver == solver]
        trpe = np.array([r.trpe for r in rs])
        ec = np.array([r.ec for r in rs], dtype=float)
        n = len(rs)
        out[solver] = {
            "seeds": [r.seed for r in rs],
            "trpe": trpe.tolist(),
            "trpe_mean": float(trpe.mean()),
            "trpe_stderr": float(trpe.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
            "ec": [r.ec for r in rs],
            "ec_mean": float(ec.mean()),
            "epochs_run": [len(r.history) - 1 for r in rs],
            "wall_s": [r.wall_s for r in rs],
            "wall_s_mean": float(np.mean([r.wall_s for r in rs])),
        }
    return out


def pooled_stderr(summary: dict, a: str = "vi", b: str = "pg") -> float:
    """Standard error of the difference of two solvers' mean TRPE."""
    sa, sb = summary[a], summary[b]
    return math.hypot(sa["trpe_stderr"], sb["trpe_stderr"])


def run_benchmark(config: RunConfig, problem: Problem | None = None) -> dict:
    """Run every (solver, seed) pair and write the report files to ``config.out``.

    Returns the summary dictionary that is also written to ``summary.json``.
    """
    problem = problem or load_problem(config.scenario, config.horizon)
    out = Path(config.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    tasks = [(problem, solver, seed, config) for solver in config.solvers for seed in config.seeds]
    start = time.perf_counter()
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    total = time.perf_counter() - start
    results.sort(key=lambda r: (config.solvers.index(r.solver), r.seed))

    for r in results:
        rows = [[_fmt(getattr(h, c)) for c in CSV_COLUMNS] for h in r.history]
        _write_csv(out / f"history_{r.solver}_seed{r.seed}.csv", CSV_COLUMNS, rows)
    _write_csv(out / "summary.csv", ("solver", "seed", "trpe", "trpe_stderr", "ec", "epochs_run"),
               [[r.solver, r.seed, _fmt(r.trpe), _fmt(r.trpe_stderr), r.ec, len(r.history) - 1] for r in results])
    occ_rows = []
    seen_initial = set()
    for r in results:
        blocks = [(r.solver, r.occupancy)]
        if r.seed not in seen_initial:
            seen_initial.add(r.seed)
            blocks.insert(0, ("initial", r.initial_occupancy))
        for name, occ in blocks:
            occ_rows += [[name, r.seed, t] + [_fmt(x) for x in row] for t, row in enumerate(occ)]
    occ_rows.sort(key=lambda row: (row[0] != "initial", row[0], row[1], row[2]))
    _write_csv(out / "occupancy.csv", ("policy", "seed", "t") + problem.labels, occ_rows)

    summary = {"solvers": summarize(results), "wall_s_total": total,
               "config": {**asdict(config), "solvers": list(config.solvers), "seeds": list(config.seeds)}}
    if "vi" in summary["solvers"] and "pg" in summary["solvers"]:
        summary["pooled_stderr"] = pooled_stderr(summary["solvers"])
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def read_occupancy(path) -> dict:
    """occupancy.csv -> {(policy, seed): array (H+1, populations)} plus the column labels."""
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for row in body:
        out.setdefault((row[0], int(row[1])), []).append([float(x) for x in row[3:]])
    return {k: np.array(v) for k, v in out.items()}, tuple(header[3:])
