"""Experiment configuration, orchestration and run artifacts."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .core import CapExceededError, RandomStream
from .environments import PocomblockConfig, make_pocomblock, make_random_lowrank_pomdp
from .evaluation import optimal_lmemory_value
from .exploration import ScheduleConfig
from .mle import build_perturbed_class, build_pocomblock_class
from .porl import RunConfig, RunResult, porl_decodable, porl_observable
from .serialization import class_to_dict, load_model, model_to_dict, policy_to_dict, write_json


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""


DEFAULTS: dict = {
    "env.kind": "pocomblock",
    "env.path": None,
    "env.horizon": 4,
    "env.num_actions": 4,
    "env.mode": "discrete",
    "env.anti_shaping_reward": 0.1,
    "env.anti_shaping_prob": 0.5,
    "env.noise_std": 0.1,
    "env.num_states": 3,
    "env.num_observations": 4,
    "env.rank": 2,
    "env.gamma_target": None,
    "class.size": 16,
    "class.num_permuted": 8,
    "class.radius": 0.2,
    "porl.mode": "decodable",
    "porl.L": 2,
    "porl.K": 200,
    "porl.batch": 1,
    "porl.support": "full",
    "porl.gamma": None,
    "porl.eps1": None,
    "porl.c_memory": 1.0,
    "porl.gamma_min": None,
    "porl.clip": None,
    "sched.mode": "constant",
    "sched.beta": 1.0,
    "sched.ridge": 1.0,
    "sched.c_lambda": 1.0,
    "sched.c_zeta": 1.0,
    "sched.delta": 0.1,
    "sched.cap": 2.0,
    "eval.episodes": 200,
    "eval.exact": True,
    "eval.optimal": True,
    "eval.moving_average": 10,
    "harness.seed": 12345,
    "harness.out": "run",
    "harness.record_wallclock": False,
}

_CHOICES = {
    "env.kind": ("pocomblock", "random", "file"),
    "env.mode": ("discrete",),
    "porl.mode": ("decodable", "observable"),
    "porl.support": ("full", "dataset"),
    "sched.mode": ("constant", "theory"),
}


def _coerce(key: str, value, default):
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved flat-key configuration; unknown keys are rejected."""

    values: dict

    @classmethod
    def from_dict(cls, overrides: dict) -> "ExperimentConfig":
        unknown = sorted(set(overrides) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        vals = dict(DEFAULTS)
        for k, v in overrides.items():
            vals[k] = _coerce(k, v, DEFAULTS[k])
        for k, allowed in _CHOICES.items():
            if vals[k] not in allowed:
                raise ConfigError(f"{k} must be one of {allowed}, got {vals[k]!r}")
        if vals["env.kind"] == "file" and not vals["env.path"]:
            raise ConfigError("env.kind=file needs env.path")
        cfg = cls(vals)
        try:
            cfg.run_config()
            cfg.schedule()
        except ValueError as err:
            raise ConfigError(str(err)) from None
        return cfg

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object of dotted keys")
        doc.update(overrides or {})
        return cls.from_dict(doc)

    def __getitem__(self, key):
        return self.values[key]

    def canonical(self) -> str:
        return json.dumps(self.values, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def schedule(self) -> ScheduleConfig:
        v = self.values
        return ScheduleConfig(mode=v["sched.mode"], beta=v["sched.beta"], ridge=v["sched.ridge"],
                              c_lambda=v["sched.c_lambda"], c_zeta=v["sched.c_zeta"], delta=v["sched.delta"],
                              observable=v["porl.mode"] == "observable", cap=v["sched.cap"])

    def run_config(self) -> RunConfig:
        v = self.values
        return RunConfig(mode=v["porl.mode"], L=v["porl.L"], K=v["porl.K"], batch=v["porl.batch"],
                         schedule=self.schedule(), support=v["porl.support"], eval_episodes=v["eval.episodes"],
                         eval_exact=v["eval.exact"], seed=v["harness.seed"], gamma=v["porl.gamma"],
                         eps1=v["porl.eps1"], c_memory=v["porl.c_memory"], gamma_min=v["porl.gamma_min"],
                         clip=v["porl.clip"], record_wallclock=v["harness.record_wallclock"])


def build_environment(cfg: ExperimentConfig, stream: RandomStream):
    """Environment, model class and truth id for a config (streams 0 and 1 of ``stream``)."""
    v = cfg.values
    if v["env.kind"] == "pocomblock":
        inst = make_pocomblock(PocomblockConfig(
            horizon=v["env.horizon"], num_actions=v["env.num_actions"],
            anti_shaping_reward=v["env.anti_shaping_reward"], anti_shaping_prob=v["env.anti_shaping_prob"],
            noise_std=v["env.noise_std"], mode=v["env.mode"]), stream.child(0))
        cands, truth = build_pocomblock_class(inst, stream.child(1), v["class.size"], v["class.num_permuted"],
                                              v["class.radius"])
        return inst.pomdp, inst.factors, cands, truth
    if v["env.kind"] == "random":
        inst = make_random_lowrank_pomdp(v["env.num_states"], v["env.num_actions"], v["env.num_observations"],
                                         v["env.horizon"], v["env.rank"], stream.child(0),
                                         gamma_target=v["env.gamma_target"])
        pomdp, factors = inst.pomdp, inst.factors
    else:
        pomdp, factors = load_model(v["env.path"])
        if factors is None:
            raise ConfigError(f"{v['env.path']} carries no low-rank factors")
    cands, truth = build_perturbed_class(pomdp, factors, stream.child(1), v["class.size"], v["class.radius"])
    return pomdp, factors, cands, truth


def _manifest(cfg: ExperimentConfig) -> dict:
    from . import __version__

    return {"config": cfg.values, "config_sha256": cfg.digest(), "seed": cfg["harness.seed"],
            "version": __version__}


def run_experiment(cfg: ExperimentConfig, out_dir=None, dry_run: bool = False) -> Path:
    """Run a configured experiment and write its artifacts.

    Files: ``manifest.json``, ``curve.csv``, ``iterations.jsonl``,
    ``policy.json`` (the final mixture), ``env.json``, ``class.json`` and
    ``summary.json``.  With ``dry_run`` only the manifest is written.
    """
    out = Path(out_dir if out_dir is not None else cfg["harness.out"])
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "manifest.json", _manifest(cfg))
    if dry_run:
        return out
    stream = RandomStream(cfg["harness.seed"])
    pomdp, factors, cands, truth = build_environment(cfg, stream)
    rc = cfg.run_config()
    records_path = out / "iterations.jsonl"
    driver = porl_decodable if rc.mode == "decodable" else porl_observable
    try:
        result: RunResult = driver(pomdp, cands, rc, stream.child(2))
    except Exception:
        records_path.write_text("")
        raise
    records_path.write_text("".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in result.records))
    (out / "curve.csv").write_text(result.curve.to_csv())
    write_json(out / "policy.json", policy_to_dict(result.mixture))
    write_json(out / "env.json", model_to_dict(pomdp, factors))
    write_json(out / "class.json", class_to_dict(cands, truth))
    summary = {"L": result.L, "truth_id": truth, "mixture_value": result.mixture_value,
               "final_value": result.exact_values[-1],
               "final_selected": result.records[-1].selected}
    if cfg["eval.optimal"]:
        try:
            summary["optimal_lmemory_value"] = optimal_lmemory_value(pomdp, result.L).value
        except (CapExceededError, ValueError) as err:
            summary["optimal_lmemory_value"] = None
            summary["optimal_skipped"] = str(err)
    if len(result.curve):
        w = cfg["eval.moving_average"]
        summary["moving_average_last"] = float(result.curve.moving_average(w)[-1])
    write_json(out / "summary.json", summary)
    return out


def parse_assignments(items) -> dict:
    """``key=value`` strings to a dict; values are parsed as JSON when possible."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, raw = item.split("=", 1)
        try:
            out[k] = json.loads(raw)
        except json.JSONDecodeError:
            out[k] = raw
    return out
