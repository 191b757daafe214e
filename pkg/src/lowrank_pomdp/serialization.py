"""JSON files for models, model classes and policies; text lines for trajectories.

Floats are written with Python's shortest round-trip representation, so
save/load is lossless.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import LMemoryPolicy, LowRankFactorization, MemorySpace, MixturePolicy, TabularPOMDP, Trajectory
from .mle import ModelCandidate

MODEL_FORMAT = "lowrank-pomdp/1"
CLASS_FORMAT = "lowrank-pomdp-class/1"
POLICY_FORMAT = "lmemory-policy/1"
MIXTURE_FORMAT = "mixture-policy/1"


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def _expect(doc: dict, fmt: str) -> None:
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise FormatError(f"expected a {fmt!r} document")


def _jsonable(meta: dict) -> dict:
    out = {}
    for k, v in meta.items():
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def model_to_dict(pomdp: TabularPOMDP, factors: LowRankFactorization | None = None) -> dict:
    doc = {
        "format": MODEL_FORMAT,
        "name": pomdp.name,
        "prefix_length": pomdp.prefix_length,
        "init": pomdp.init.tolist(),
        "transitions": pomdp.transitions.tolist(),
        "emissions": pomdp.emissions.tolist(),
        "rewards": pomdp.rewards.tolist(),
        "meta": _jsonable(pomdp.meta),
    }
    if factors is not None:
        doc["factors"] = {"omega": factors.omega.tolist(), "psi": factors.psi.tolist()}
    return doc


def model_from_dict(doc: dict) -> tuple[TabularPOMDP, LowRankFactorization | None]:
    _expect(doc, MODEL_FORMAT)
    try:
        pomdp = TabularPOMDP(np.array(doc["init"]), np.array(doc["transitions"]), np.array(doc["emissions"]),
                             np.array(doc["rewards"]), prefix_length=int(doc.get("prefix_length", 0)),
                             name=doc.get("name", "pomdp"), meta=dict(doc.get("meta", {})))
    except KeyError as err:
        raise FormatError(f"model document lacks {err}") from None
    factors = None
    if "factors" in doc:
        factors = LowRankFactorization(np.array(doc["factors"]["omega"]), np.array(doc["factors"]["psi"]))
        factors.check(pomdp, atol=1e-8)
    return pomdp, factors


def class_to_dict(candidates: list[ModelCandidate], truth_id: int | None = None) -> dict:
    doc = {"format": CLASS_FORMAT,
           "candidates": [{"id": c.id, "label": c.label, "model": model_to_dict(c.pomdp, c.factors)}
                          for c in candidates]}
    if truth_id is not None:
        doc["truth_id"] = truth_id
    return doc


def class_from_dict(doc: dict) -> tuple[list[ModelCandidate], int | None]:
    _expect(doc, CLASS_FORMAT)
    cands = []
    for entry in doc["candidates"]:
        pomdp, factors = model_from_dict(entry["model"])
        if factors is None:
            raise FormatError(f"candidate {entry['id']} has no factors")
        cands.append(ModelCandidate(int(entry["id"]), pomdp, factors, entry.get("label", "")))
    ids = [c.id for c in cands]
    if len(set(ids)) != len(ids):
        raise FormatError("candidate ids are not unique")
    return cands, doc.get("truth_id")


def policy_to_dict(policy) -> dict:
    if isinstance(policy, MixturePolicy):
        return {"format": MIXTURE_FORMAT, "members": [policy_to_dict(m) for m in policy.members]}
    if not isinstance(policy, LMemoryPolicy):
        raise TypeError(f"cannot serialize {type(policy).__name__}")
    sp = policy.space
    return {"format": POLICY_FORMAT, "L": sp.L, "horizon": sp.horizon,
            "num_observations": sp.num_observations, "num_actions": sp.num_actions,
            "tables": [t.tolist() for t in policy.tables]}


def policy_from_dict(doc: dict):
    if isinstance(doc, dict) and doc.get("format") == MIXTURE_FORMAT:
        return MixturePolicy([policy_from_dict(m) for m in doc["members"]])
    _expect(doc, POLICY_FORMAT)
    space = MemorySpace(int(doc["num_observations"]), int(doc["num_actions"]), int(doc["L"]), int(doc["horizon"]))
    return LMemoryPolicy(space, [np.array(t) for t in doc["tables"]])


def write_json(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: {err}") from None


def save_model(path, pomdp: TabularPOMDP, factors: LowRankFactorization | None = None) -> None:
    write_json(path, model_to_dict(pomdp, factors))


def load_model(path) -> tuple[TabularPOMDP, LowRankFactorization | None]:
    return model_from_dict(read_json(path))


def save_class(path, candidates, truth_id=None) -> None:
    write_json(path, class_to_dict(candidates, truth_id))


def load_class(path):
    return class_from_dict(read_json(path))


def save_policy(path, policy) -> None:
    write_json(path, policy_to_dict(policy))


def load_policy(path):
    return policy_from_dict(read_json(path))


def trajectories_to_text(trajectories: list[Trajectory]) -> str:
    """``h,o,a,r`` lines; a line with ``h = 0`` starts a new episode."""
    return "".join(t.to_lines() for t in trajectories)


def trajectories_from_text(text: str) -> list[tuple[tuple, tuple, tuple]]:
    """Parse ``h,o,a,r`` lines into (observations, actions, rewards) per episode."""
    episodes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            h, o, a, r = line.split(",")
            h, o, a, r = int(h), int(o), int(a), float(r)
        except ValueError:
            raise FormatError(f"line {lineno}: expected h,o,a,r") from None
        if h == 0:
            episodes.append(([], [], []))
        elif not episodes or len(episodes[-1][0]) != h:
            raise FormatError(f"line {lineno}: step {h} out of sequence")
        for col, v in zip(episodes[-1], (o, a, r)):
            col.append(v)
    return [tuple(tuple(c) for c in ep) for ep in episodes]
