"""Learn the 4-step combination lock with and without the exploration bonus.

    python3 demos/pocomblock_exploration.py [--K 200] [--seed 12345]
"""

import argparse

from lowrank_pomdp.core import RandomStream
from lowrank_pomdp.evaluation import optimal_lmemory_value
from lowrank_pomdp.harness import ExperimentConfig, build_environment
from lowrank_pomdp.porl import porl_decodable


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--K", type=int, default=200)
    parser.add_argument("--seed", type=int, default=12345)
    args = parser.parse_args()

    for beta in (1.0, 0.0):
        cfg = ExperimentConfig.from_dict({"porl.K": args.K, "harness.seed": args.seed, "sched.beta": beta,
                                          "eval.episodes": 0})
        stream = RandomStream(args.seed)
        pomdp, _, cands, truth = build_environment(cfg, stream)
        res = porl_decodable(pomdp, cands, cfg.run_config(), stream.child(2))
        hits = sum(all(i == truth for i in r.selected) for r in res.records)
        print(f"beta={beta:g}: mixture return {res.mixture_value:.4f}, final iterate {res.exact_values[-1]:.4f}, "
              f"truth selected at every step in {hits}/{args.K} iterations")
    print(f"optimal 2-memory value {optimal_lmemory_value(pomdp, 2).value:.4f}")


if __name__ == "__main__":
    main()
