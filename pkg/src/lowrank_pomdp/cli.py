"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 enumeration cap exceeded,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .belief import InconsistentHistoryError, NumericalError, estimate_observability
from .core import CapExceededError, RandomStream, UniformPolicy, sample_episode
from .environments import (
    PocomblockConfig,
    make_pocomblock,
    make_random_decodable_pomdp,
    make_random_lowrank_pomdp,
)
from .evaluation import mc_value, optimal_lmemory_value, policy_value
from .harness import ConfigError, ExperimentConfig, parse_assignments, run_experiment
from .mle import LikelihoodTable, TransitionSample
from .serialization import FormatError, load_class, load_model, load_policy, read_json, save_model, save_policy

EXIT_CONFIG, EXIT_CAP, EXIT_NUMERIC = 2, 3, 4


def _cmd_run(args) -> int:
    overrides = parse_assignments(args.set)
    flags = {"porl.mode": args.mode, "porl.L": args.L, "porl.K": args.K, "harness.seed": args.seed,
             "sched.beta": args.beta, "porl.batch": args.batch, "porl.support": args.support}
    overrides.update({k: v for k, v in flags.items() if v is not None})
    if args.env is not None:
        if args.env == "pocomblock":
            overrides["env.kind"] = "pocomblock"
        else:
            overrides["env.kind"] = "file"
            overrides["env.path"] = args.env
    if args.manifest:
        cfg = ExperimentConfig.from_dict({**read_json(args.manifest)["config"], **overrides})
    elif args.config:
        cfg = ExperimentConfig.from_file(args.config, overrides)
    else:
        cfg = ExperimentConfig.from_dict(overrides)
    out = run_experiment(cfg, args.out, dry_run=args.dry_run)
    print(f"wrote {out}")
    return 0


def _cmd_gen_env(args) -> int:
    rs = RandomStream(args.seed)
    if args.kind == "pocomblock":
        inst = make_pocomblock(PocomblockConfig(horizon=args.horizon, num_actions=args.actions, mode=args.mode),
                               rs.child(0))
        pomdp, factors = inst.pomdp, inst.factors
        pomdp.meta["secret_actions"] = inst.secret_actions.tolist()
        if inst.encoder is not None:
            pomdp.meta["encoder"] = inst.encoder.to_dict()
    elif args.kind == "random":
        inst = make_random_lowrank_pomdp(args.states, args.actions, args.observations, args.horizon, args.rank,
                                         rs.child(0), gamma_target=args.gamma_target)
        pomdp, factors = inst.pomdp, inst.factors
    else:
        inst = make_random_decodable_pomdp(args.states, args.actions, args.observations, args.horizon, args.L,
                                           rs.child(0))
        pomdp, factors = inst.pomdp, inst.factors
    save_model(args.out, pomdp, factors)
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    pomdp, _ = load_model(args.model)
    policy = load_policy(args.policy)
    mean, (lo, hi) = mc_value(pomdp, policy, args.episodes, RandomStream(args.seed))
    print("mean_return,ci_low,ci_high")
    print(f"{mean!r},{lo!r},{hi!r}")
    if args.exact:
        print(f"exact,{policy_value(pomdp, policy)!r}")
    return 0


def _cmd_check_observability(args) -> int:
    pomdp, _ = load_model(args.model)
    gen = RandomStream(args.seed).generator
    rows = [(h, estimate_observability(pomdp.emissions[h], args.probes, gen)) for h in range(pomdp.horizon)]
    print(f"{'step':>4}  {'gamma_hat':>10}")
    for h, g in rows:
        print(f"{h:>4}  {g:>10.6f}")
    print("h,gamma_hat")
    for h, g in rows:
        print(f"{h},{g!r}")
    return 0


def _cmd_oracle(args) -> int:
    if not args.optimal_lmemory:
        raise ConfigError("oracle needs --optimal-lmemory")
    pomdp, _ = load_model(args.model)
    res = optimal_lmemory_value(pomdp, args.L, args.method)
    print(f"optimal_lmemory_value,{res.value!r}")
    print(f"method,{res.method}")
    if args.policy_out:
        save_policy(args.policy_out, res.policy)
    return 0


def _cmd_mle_debug(args) -> int:
    pomdp, _ = load_model(args.model)
    cands, _ = load_class(args.model_class)
    table = LikelihoodTable(cands, pomdp.horizon, args.mode, args.L)
    rs = RandomStream(args.seed)
    pi = UniformPolicy(pomdp.num_actions, args.L)
    samples = []
    for i in range(args.episodes):
        view = sample_episode(pomdp, pi, rs.child(i)).view()
        samples.extend(TransitionSample.from_view(view, h) for h in range(pomdp.horizon - 1))
    table.extend(samples)
    print("id,h,loglik")
    for h in range(pomdp.horizon - 1):
        for c, s in zip(table.candidates, table.scores(h)):
            print(f"{c.id},{h},{s.loglik!r}")
    print("selected," + ",".join(str(table.select(h).id) for h in range(pomdp.horizon - 1)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lowrank-pomdp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an exploration experiment")
    r.add_argument("--config", help="JSON file of dotted keys")
    r.add_argument("--manifest", help="rerun the configuration stored in a manifest.json")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    r.add_argument("--mode", choices=["decodable", "observable"])
    r.add_argument("--env", help="'pocomblock' or a model file")
    r.add_argument("--L", type=int)
    r.add_argument("--K", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--beta", type=float)
    r.add_argument("--batch", type=int)
    r.add_argument("--support", choices=["full", "dataset"])
    r.add_argument("--out")
    r.add_argument("--dry-run", action="store_true")
    r.set_defaults(func=_cmd_run)

    g = sub.add_parser("gen-env", help="write a generated model file")
    g.add_argument("--env", "--kind", dest="kind", choices=["pocomblock", "random", "decodable"],
                   default="pocomblock")
    g.add_argument("--mode", choices=["discrete", "rich"], default="discrete")
    g.add_argument("--horizon", type=int, default=4)
    g.add_argument("--actions", type=int, default=4)
    g.add_argument("--states", type=int, default=3)
    g.add_argument("--observations", type=int, default=4)
    g.add_argument("--rank", type=int, default=2)
    g.add_argument("--L", type=int, default=2)
    g.add_argument("--gamma-target", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_env)

    e = sub.add_parser("eval", help="evaluate a policy on a model")
    e.add_argument("--model", required=True)
    e.add_argument("--policy", required=True)
    e.add_argument("--episodes", type=int, default=200)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--exact", action="store_true")
    e.set_defaults(func=_cmd_eval)

    c = sub.add_parser("check-observability", help="per-step observability estimates")
    c.add_argument("--model", required=True)
    c.add_argument("--probes", type=int, default=2000)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_cmd_check_observability)

    o = sub.add_parser("oracle", help="exact reference values")
    o.add_argument("--optimal-lmemory", action="store_true")
    o.add_argument("--model", required=True)
    o.add_argument("--L", type=int, default=2)
    o.add_argument("--method", choices=["auto", "dp", "enumerate"], default="auto")
    o.add_argument("--policy-out")
    o.set_defaults(func=_cmd_oracle)

    m = sub.add_parser("mle-debug", help="per-candidate likelihood table on uniform-policy data")
    m.add_argument("--model", required=True, help="environment model file")
    m.add_argument("--class", dest="model_class", required=True, help="model class file")
    m.add_argument("--mode", choices=["decodable", "observable"], default="decodable")
    m.add_argument("--L", type=int, default=2)
    m.add_argument("--episodes", type=int, default=1000)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=_cmd_mle_debug)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CapExceededError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CAP
    except (NumericalError, InconsistentHistoryError, np.linalg.LinAlgError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
