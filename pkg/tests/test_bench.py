import csv
import json
import math

import numpy as np
import pytest

from builders import chain
from dedp import ConfigError, model_to_dict, monte_carlo_value, single_component_model
from dedp.bench import (
    CSV_COLUMNS,
    EVAL_SEED_BASE,
    RunConfig,
    epochs_to_converge,
    initial_policy,
    load_problem,
    load_run_config,
    read_occupancy,
    run_benchmark,
)
from dedp.cli import main
from dedp.simulator import RolloutConfig


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def chain_model(tmp_path):
    return _write(tmp_path / "chain.json", model_to_dict(chain(3, 2, gamma=0.8)))


def _run(tmp_path, chain_model, **kw):
    base = dict(scenario=str(chain_model), epochs=4, seeds=(0, 1), horizon=12, out=str(tmp_path / "out"),
                mc_rollouts=8, eval_rollouts=20, occupancy_rollouts=3, pg={"rollouts": 4, "pairs": 2})
    return RunConfig(**{**base, **kw})


# -- convergence epoch ------------------------------------------------------------


def test_epochs_to_converge():
    assert epochs_to_converge([0, 5, 9.95, 10, 10, 10], window=3) == 2
    assert epochs_to_converge([10.0] * 5) == 0
    # the band is relative to the plateau
    assert epochs_to_converge([0, 98, 100, 100], window=2, rel=0.01) == 2
    assert epochs_to_converge([0, 98, 100, 100], window=2, rel=0.05) == 1
    # never entering the band converges at the last epoch
    assert epochs_to_converge([1.0, -1.0, 1.0, -1.0], window=4) == 3
    with pytest.raises(ValueError):
        epochs_to_converge([])


# -- run configs ------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [{"seeds": ()}, {"seeds": (1, 1)}, {"seeds": (-1,)}, {"solvers": ("vi", "dqn")}, {"solvers": ()},
     {"epochs": -1}, {"eval_rollouts": 0}, {"workers": 0}, {"vi": {"epochs": 3}}, {"pg": {"seed": 3}}],
)
def test_run_config_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(scenario="x.json", **kw)


def test_run_config_resolves_the_scenario_next_to_itself(tmp_path):
    path = _write(tmp_path / "run.json", {"scenario": "s.json", "seeds": [3]})
    cfg = load_run_config(path)
    assert cfg.scenario == str(tmp_path / "s.json")
    assert cfg.seeds == (3,)
    _write(path, {"scenario": "s.json", "colour": "red"})
    with pytest.raises(ConfigError):
        load_run_config(path)


def test_load_problem_reads_models_and_scenarios(tmp_path, chain_model):
    p = load_problem(chain_model)
    assert p.labels == ("loc0", "loc1", "loc2")
    assert load_problem(chain_model, horizon=7).horizon == 7
    s = load_problem(_write(tmp_path / "s.json", {"n_individuals": 2, "routes": {"outbound": [1], "inbound": [1]}}))
    assert s.labels[:2] == ("home", "work") and s.horizon == 144
    with pytest.raises(ConfigError):
        load_problem(_write(tmp_path / "bad.json", [1]))


# -- benchmark runs ---------------------------------------------------------------


def test_benchmark_outputs_share_one_schema(tmp_path, chain_model):
    cfg = _run(tmp_path, chain_model)
    summary = run_benchmark(cfg)
    out = tmp_path / "out"
    for solver in ("vi", "pg"):
        for seed in (0, 1):
            with (out / f"history_{solver}_seed{seed}.csv").open() as fh:
                rows = list(csv.reader(fh))
            assert tuple(rows[0]) == CSV_COLUMNS
            assert rows[1][0] == "0"
        agg = summary["solvers"][solver]
        assert set(agg) >= {"trpe_mean", "trpe_stderr", "ec", "ec_mean", "wall_s_mean", "epochs_run"}
        assert agg["seeds"] == [0, 1]
    assert summary["pooled_stderr"] == pytest.approx(
        math.hypot(summary["solvers"]["vi"]["trpe_stderr"], summary["solvers"]["pg"]["trpe_stderr"]))
    with (out / "summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["solver"], r["seed"]) for r in rows] == [("vi", "0"), ("vi", "1"), ("pg", "0"), ("pg", "1")]
    assert json.loads((out / "summary.json").read_text())["solvers"]["vi"]["trpe"] == summary["solvers"]["vi"]["trpe"]


def test_benchmark_is_byte_reproducible(tmp_path, chain_model):
    run_benchmark(_run(tmp_path, chain_model, out=str(tmp_path / "a")))
    run_benchmark(_run(tmp_path, chain_model, out=str(tmp_path / "b")))
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert len(names) == 6
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_zero_epochs_report_the_initial_policy(tmp_path, chain_model):
    cfg = _run(tmp_path, chain_model, epochs=0, solvers=("pg",), seeds=(4,))
    summary = run_benchmark(cfg)
    prob = load_problem(chain_model, 12)
    want = monte_carlo_value(prob.model, initial_policy(prob, 4), prob.model.initial_state,
                             RolloutConfig(12, EVAL_SEED_BASE + 4, 20)).mean
    assert summary["solvers"]["pg"]["trpe"] == [want]
    assert summary["solvers"]["pg"]["ec"] == [0]


def test_occupancy_rows_conserve_the_population(tmp_path, chain_model):
    run_benchmark(_run(tmp_path, chain_model))
    occ, labels = read_occupancy(tmp_path / "out" / "occupancy.csv")
    assert labels == ("loc0", "loc1", "loc2")
    assert set(occ) == {(p, s) for p in ("initial", "vi", "pg") for s in (0, 1)}
    for arr in occ.values():
        assert arr.shape == (13, 3)
        assert np.allclose(arr.sum(axis=1), 2.0)
        assert np.array_equal(arr[0], [2.0, 0.0, 0.0])


def test_parallel_workers_match_serial(tmp_path, chain_model):
    run_benchmark(_run(tmp_path, chain_model, out=str(tmp_path / "s"), seeds=(0,)))
    run_benchmark(_run(tmp_path, chain_model, out=str(tmp_path / "p"), seeds=(0,), workers=2))
    assert (tmp_path / "s" / "summary.csv").read_bytes() == (tmp_path / "p" / "summary.csv").read_bytes()


# -- command line -----------------------------------------------------------------


def _cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 and out.strip() else None)


def test_cli_simulate_oracle_evaluate(tmp_path, chain_model, capsys):
    code, sim = _cli(capsys, "simulate", "--config", chain_model, "--horizon", 10, "--rollouts", 50,
                     "--out", tmp_path / "sim")
    assert code == 0 and sim["rollouts"] == 50
    assert (tmp_path / "sim" / "trajectory.csv").read_text().startswith("t,event,loc0,loc1,loc2\n0,0,2,0,0\n")
    code, orc = _cli(capsys, "oracle", "--config", chain_model, "--horizon", 10)
    assert code == 0 and orc["exact_value"] >= 0.0
    assert abs(sim["mc_value_mean"] - orc["exact_value"]) <= 4 * sim["mc_value_stderr"] + 1e-12
    code, ev = _cli(capsys, "evaluate", "--config", chain_model, "--horizon", 10)
    assert code == 0 and "elbo" in ev


def test_cli_optimize_writes_a_loadable_policy(tmp_path, chain_model, capsys):
    out = tmp_path / "opt"
    code, res = _cli(capsys, "optimize", "--config", chain_model, "--horizon", 10, "--epochs", 2, "--out", out)
    assert code == 0 and res["solver"] == "vi"
    code, orc = _cli(capsys, "oracle", "--config", chain_model, "--horizon", 10, "--policy", out / "policy.json")
    assert code == 0
    code, _ = _cli(capsys, "optimize", "--config", chain_model, "--solver", "pg", "--horizon", 10, "--epochs", 1,
                   "--rollouts", 4, "--out", tmp_path / "pg")
    assert code == 0
    assert (tmp_path / "pg" / "history.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)


def test_cli_benchmark_and_scenario_validate(tmp_path, chain_model, capsys):
    run = _write(tmp_path / "run.json", {"scenario": chain_model.name, "epochs": 1, "seeds": [0, 1], "horizon": 8,
                                         "mc_rollouts": 4, "eval_rollouts": 10, "occupancy_rollouts": 2,
                                         "pg": {"rollouts": 2, "pairs": 1}})
    code, res = _cli(capsys, "benchmark", "--config", run, "--seed", 1, "--out", tmp_path / "bench")
    assert code == 0 and set(res["solvers"]) == {"vi", "pg"}
    assert (tmp_path / "bench" / "history_pg_seed1.csv").exists()
    assert not (tmp_path / "bench" / "history_pg_seed0.csv").exists()
    scen = _write(tmp_path / "s.json", {"n_individuals": 4})
    code, info = _cli(capsys, "scenario", "validate", "--config", scen)
    assert code == 0 and info["num_components"] == 26


def test_cli_exit_codes(tmp_path, chain_model, capsys):
    assert main(["optimize", "--config", str(chain_model), "--solver", "dqn", "--out", str(tmp_path)]) == 2
    assert main(["oracle", "--config", str(tmp_path / "missing.json")]) == 4
    assert main(["scenario", "validate", "--config", str(_write(tmp_path / "b.json", {"n_individuals": 0}))]) == 2
    bad_policy = _write(tmp_path / "p.json", {"architecture": {"kind": "linear-sigmoid"}, "theta": []})
    assert main(["oracle", "--config", str(chain_model), "--policy", str(bad_policy)]) == 2
    # up and down moves both fire at 0.7 from the middle state
    overflow = single_component_model(2, [(1, "indicator", {"hi": 1}), (-1, "indicator", {"lo": 1})],
                                      gamma=0.9, initial=1)
    path = _write(tmp_path / "overflow.json", model_to_dict(overflow))
    pol = tmp_path / "pol.json"
    from dedp import LinearSigmoidPolicy
    from dedp.policy import FeatureSpec

    LinearSigmoidPolicy([5.0, 5.0], 2, FeatureSpec((), (), bias=True)).save(pol)
    assert main(["simulate", "--config", str(path), "--policy", str(pol), "--horizon", "3"]) == 3
    capsys.readouterr()
