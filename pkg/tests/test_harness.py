import json

import pytest

from lowrank_pomdp.evaluation import LearningCurve
from lowrank_pomdp.harness import DEFAULTS, ConfigError, ExperimentConfig, parse_assignments, run_experiment
from lowrank_pomdp.serialization import load_class, load_model, load_policy

SMALL = {"porl.K": 2, "eval.episodes": 5}


def test_defaults_resolve():
    cfg = ExperimentConfig.from_dict({})
    assert cfg.values == DEFAULTS
    rc = cfg.run_config()
    assert rc.L == 2 and rc.K == 200 and rc.schedule.beta == 1.0 and rc.schedule.mode == "constant"


@pytest.mark.parametrize("bad", [
    {"porl.nope": 1},
    {"porl.K": 0},
    {"porl.K": 2.5},
    {"porl.mode": "other"},
    {"sched.beta": -1.0},
    {"sched.beta": "x"},
    {"eval.exact": 1},
    {"env.kind": "file"},
    {"env.mode": "rich"},
])
def test_invalid_configs_are_rejected(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_integer_values_coerce_to_float_keys():
    cfg = ExperimentConfig.from_dict({"sched.beta": 2})
    assert cfg["sched.beta"] == 2.0 and isinstance(cfg["sched.beta"], float)


def test_config_file_and_digest(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"porl.K": 3}))
    a = ExperimentConfig.from_file(tmp_path / "c.json", {"harness.seed": 1})
    b = ExperimentConfig.from_dict({"harness.seed": 1, "porl.K": 3})
    assert a.digest() == b.digest() and a.canonical() == b.canonical()
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "missing.json")


def test_parse_assignments():
    assert parse_assignments(["porl.K=3", "porl.mode=observable", "eval.exact=false"]) == {
        "porl.K": 3, "porl.mode": "observable", "eval.exact": False}
    with pytest.raises(ConfigError):
        parse_assignments(["novalue"])


def test_dry_run_writes_only_manifest(tmp_path):
    out = run_experiment(ExperimentConfig.from_dict(SMALL), tmp_path / "r", dry_run=True)
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["porl.K"] == 2 and man["seed"] == 12345 and len(man["config_sha256"]) == 64


def test_run_artifacts_and_rerun_identity(tmp_path):
    cfg = ExperimentConfig.from_dict(SMALL)
    out = run_experiment(cfg, tmp_path / "a")
    names = sorted(p.name for p in out.iterdir())
    assert names == ["class.json", "curve.csv", "env.json", "iterations.jsonl", "manifest.json", "policy.json",
                     "summary.json"]
    curve = LearningCurve.from_csv((out / "curve.csv").read_text())
    assert curve.column("iter").tolist() == [0, 1, 2]
    lines = (out / "iterations.jsonl").read_text().splitlines()
    assert [json.loads(l)["k"] for l in lines] == [1, 2]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["optimal_lmemory_value"] == pytest.approx(1.0)
    cands, truth = load_class(out / "class.json")
    assert truth == summary["truth_id"] and len(cands) == 16
    load_model(out / "env.json")
    assert len(load_policy(out / "policy.json").members) == 2
    man = json.loads((out / "manifest.json").read_text())
    again = run_experiment(ExperimentConfig.from_dict(man["config"]), tmp_path / "b")
    for name in ("curve.csv", "iterations.jsonl", "summary.json"):
        assert (again / name).read_bytes() == (out / name).read_bytes()


def test_random_environment_run(tmp_path):
    cfg = ExperimentConfig.from_dict({**SMALL, "env.kind": "random", "env.num_actions": 2, "porl.mode": "observable",
                                      "class.size": 3})
    out = run_experiment(cfg, tmp_path / "r")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["L"] == 2 and summary["mixture_value"] is not None
