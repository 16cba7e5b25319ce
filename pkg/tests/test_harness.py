import json
import math

import numpy as np
import pytest

from stealthrl import harness
from stealthrl.harness import (
    Components,
    ConfigError,
    ExperimentConfig,
    UnsupportedMethodError,
    episodes_csv,
    format_config,
    parse_config,
    parse_seeds,
    read_episodes_csv,
    run_clean,
    run_every_n,
    run_st,
    run_uniform,
    sweep,
    validate_fairness,
    worst_target,
    write_report,
)
from stealthrl.perturb import PerturbConfig
from stealthrl.reports import EpisodeReport

SEEDS = (1, 2, 3)


def test_uniform_attacks_every_step(catch_env, catch_victim):
    for rep in run_uniform(catch_env, catch_victim, PerturbConfig(), SEEDS):
        assert rep.attack_count == rep.length and rep.attacked_steps == list(range(rep.length))
        assert rep.param == ""


@pytest.mark.parametrize("n", [2, 5, 7])
def test_every_n_count(catch_env, catch_victim, n):
    for rep in run_every_n(catch_env, catch_victim, n, PerturbConfig(), SEEDS):
        assert rep.attack_count == math.ceil(rep.length / n)
        assert all(t % n == 0 for t in rep.attacked_steps)


def test_every_n_longer_than_episode_attacks_once(catch_env, catch_victim):
    reps = run_every_n(catch_env, catch_victim, catch_env.spec.horizon + 1, PerturbConfig(), SEEDS)
    assert all(r.attacked_steps == [0] for r in reps)
    with pytest.raises(ValueError):
        run_every_n(catch_env, catch_victim, 0, PerturbConfig(), SEEDS)


def test_every_one_is_uniform(catch_env, catch_victim):
    a = run_every_n(catch_env, catch_victim, 1, PerturbConfig(), SEEDS)
    b = run_uniform(catch_env, catch_victim, PerturbConfig(), SEEDS)
    for x, y in zip(a, b):
        assert (x.ret, x.attacked_steps, x.linf) == (y.ret, y.attacked_steps, y.linf)


def test_st_threshold_extremes(catch_env, catch_victim):
    for rep in run_st(catch_env, catch_victim, 0.0, PerturbConfig(), SEEDS):
        assert rep.attack_count == rep.length
    clean = run_clean(catch_env, catch_victim, SEEDS)
    for rep, ref in zip(run_st(catch_env, catch_victim, 1.0, PerturbConfig(), SEEDS), clean):
        assert rep.attack_count == 0 and rep.ret == ref.ret
        assert len(rep.diagnostics) == 0


def test_st_needs_discrete_victim(lanekeep_env, lanekeep_victim):
    with pytest.raises(UnsupportedMethodError):
        run_st(lanekeep_env, lanekeep_victim, 0.5, PerturbConfig(), SEEDS)


def test_worst_target(catch_env, catch_victim, lanekeep_env, lanekeep_victim):
    obs = catch_env.observe(catch_env.reset(1))
    p = catch_victim.distribution(obs)
    assert worst_target(catch_victim, obs) == int(np.argmin(p))
    obs = lanekeep_env.observe(lanekeep_env.reset(1))
    a = lanekeep_victim.act(obs)
    assert np.all(np.abs(worst_target(lanekeep_victim, obs)) == 1.0)
    assert np.all(np.sign(worst_target(lanekeep_victim, obs)) != np.sign(a))


def test_clean_run_never_attacks(catch_env, catch_victim):
    reps = run_clean(catch_env, catch_victim, SEEDS)
    assert all(r.attack_count == 0 and r.length == catch_env.spec.horizon for r in reps)
    assert all(r.ret == sum(r.rewards) for r in reps)


# ---------------------------------------------------------------------------
# config

CONFIG_TEXT = """
# a comment
env.id = catch
env.victim = runs/catch.srlm
env.balls = 2
method.name = cp
method.delta = 1.7   # inline comment
method.N = 2
method.M = 2
method.selection = max_dam
perturb.eps_inf = 0.05
seeds = 1..4
"""


def test_parse_config():
    cfg = parse_config(CONFIG_TEXT)
    assert cfg.env_id == "catch" and cfg.victim == "runs/catch.srlm"
    assert cfg.env_overrides == {"balls": 2}
    assert cfg.params == {"delta": 1.7, "N": 2, "M": 2, "selection": "max_dam"}
    assert cfg.perturb.eps_inf == 0.05 and cfg.seeds == (1, 2, 3, 4)
    assert cfg.make_env().spec.horizon == 2 * 11


def test_format_round_trip():
    cfg = parse_config(CONFIG_TEXT)
    assert parse_config(format_config(cfg)) == cfg


def test_infinite_values_parse():
    cfg = parse_config("env.id = catch\nmethod.name = cp\nmethod.delta = inf\n")
    assert cfg.params["delta"] == math.inf
    assert parse_config(format_config(cfg)).params["delta"] == math.inf


@pytest.mark.parametrize("text", [
    "method.name = cp\nmethod.delta = 1",
    "env.id = catch\nenv.id = catch",
    "env.id = catch\nbogus = 1",
    "env.id = catch\nperturb.bogus = 1",
    "env.id = catch\nmethod.name = pgd",
    "env.id = catch\nmethod.name = cp",
    "env.id = catch\njust words",
    "env.id = catch\nseeds = ,",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_parse_seeds():
    assert parse_seeds("1..3") == (1, 2, 3)
    assert parse_seeds("5, 2") == (5, 2)


def test_unknown_env_override_is_rejected():
    cfg = parse_config("env.id = catch\nenv.gravity = 3\n")
    with pytest.raises(ValueError):
        cfg.make_env()


def test_fairness():
    a = ExperimentConfig("catch", "v.srlm", "clean")
    b = ExperimentConfig("catch", "v.srlm", "cp", {"delta": 1.0})
    validate_fairness([a, b])
    validate_fairness([])
    with pytest.raises(ConfigError):
        validate_fairness([a, ExperimentConfig("catch", "v.srlm", "uniform", perturb=PerturbConfig(eps_inf=0.2))])
    with pytest.raises(ConfigError):
        validate_fairness([a, ExperimentConfig("catch", "v.srlm", "uniform", seeds=(1, 2))])


# ---------------------------------------------------------------------------
# sweeps and reports


def test_sweep_records_failed_cells(lanekeep_env, lanekeep_victim):
    cfg = ExperimentConfig("lanekeep", method="st", params={"c": 0.1}, seeds=(1,))
    res = sweep(cfg, "c", [0.1, 0.5], Components(lanekeep_env, lanekeep_victim))
    assert not res.complete and set(res.failures) == {0.1, 0.5}
    assert all(math.isnan(m) for m in res.means) and res.reports == []
    assert json.loads(json.dumps(res.to_dict(), allow_nan=False))["means"] == [None, None]


def test_sweep_axis_must_match_method(catch_victim, catch_env):
    cfg = ExperimentConfig("catch", method="cp", params={"delta": 1.0}, seeds=(1,))
    with pytest.raises(ConfigError):
        sweep(cfg, "c", [0.1], Components(catch_env, catch_victim))
    with pytest.raises(ConfigError):
        sweep(cfg, "gamma", [0.1], Components(catch_env, catch_victim))
    with pytest.raises(ValueError):
        sweep(cfg, "delta", [], Components(catch_env, catch_victim))


def test_cp_sweep_and_report(tmp_path, catch_env, catch_victim):
    cfg = ExperimentConfig("catch", method="cp", params={"delta": 0.0, "N": 2, "M": 2}, seeds=SEEDS)
    res = sweep(cfg, "delta", [0.5, math.inf], Components(catch_env, catch_victim))
    assert res.complete and len(res.reports) == 6
    clean = np.mean([r.ret for r in run_clean(catch_env, catch_victim, SEEDS)])
    assert res.means[1] == clean and res.mean_attack_counts[1] == 0
    assert all(r.attack_count <= 2 for r in res.reports)
    paths = write_report(res.reports, res, tmp_path)
    payload = json.loads(paths["sweep"].read_text())
    assert payload["values"] == [0.5, "inf"] and payload["axis"] == "delta"
    plot = json.loads(paths["plotdata"].read_text())
    assert plot["sweep_return"]["y"] == res.means
    rows = read_episodes_csv(paths["episodes"])
    assert [r["return"] for r in rows] == [r.ret for r in harness.sort_reports(res.reports)]
    again = sweep(cfg, "delta", [0.5, math.inf], Components(catch_env, catch_victim))
    assert episodes_csv(again.reports) == paths["episodes"].read_text()


def test_empty_report_writes_header_only(tmp_path):
    paths = write_report([], None, tmp_path / "nested")
    assert paths["episodes"].read_text() == ",".join(harness.CSV_HEADER) + "\n"
    assert json.loads(paths["sweep"].read_text()) is None


def test_report_has_one_row_per_episode(tmp_path):
    reports = [EpisodeReport(seed, m, 1.5 if m == "cp" else "", ret=float(seed), length=10)
               for m in ("clean", "cp", "uniform") for seed in range(1, 21)]
    rows = read_episodes_csv(write_report(reports[::-1], None, tmp_path)["episodes"])
    assert len(rows) == 60
    assert [(r["method"], r["seed"]) for r in rows] == [(r.method, r.seed) for r in reports]


def test_report_path_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        write_report([], None, blocker / "sub")


def test_conversion_study_counts(catch_env, catch_victim):
    from stealthrl.cp_attack import CpConfig

    n, conv = harness.conversion_study(catch_env, catch_victim, CpConfig(N=2, M=2, delta=1.7), PerturbConfig(),
                                       range(1, 4), max_instances=5)
    assert 0 <= conv <= n <= 5
    n1, conv1 = harness.conversion_study(catch_env, catch_victim, CpConfig(N=2, M=2, delta=math.inf),
                                         PerturbConfig(), range(1, 4))
    assert n1 == conv1 == 0
