"""Run the filtered-belief learner on a random gamma-observable instance.

    python3 demos/observable_pipeline.py [--seed 0] [--K 300]
"""

import argparse

from lowrank_pomdp.belief import estimate_observability
from lowrank_pomdp.core import RandomStream
from lowrank_pomdp.environments import make_random_lowrank_pomdp
from lowrank_pomdp.evaluation import optimal_lmemory_value
from lowrank_pomdp.mle import build_perturbed_class
from lowrank_pomdp.porl import RunConfig, porl_observable


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--K", type=int, default=300)
    args = parser.parse_args()

    inst = make_random_lowrank_pomdp(3, 2, 4, 4, 2, RandomStream(args.seed), gamma_target=0.8)
    p = inst.pomdp
    gamma = min(estimate_observability(p.emissions[h], 2000, h) for h in range(p.horizon))
    print(f"S={p.num_states} O={p.num_observations} A={p.num_actions} H={p.horizon}, gamma_hat={gamma:.3f}")

    cands, truth = build_perturbed_class(p, inst.factors, RandomStream(args.seed).child(1))
    res = porl_observable(p, cands, RunConfig(mode="observable", L=2, K=args.K, eval_episodes=0),
                          RandomStream(args.seed).child(2))
    opt = optimal_lmemory_value(p, 2).value
    for k in (0, 1, 10, 100, args.K):
        if k <= args.K:
            print(f"iterate {k:>4}: exact value {res.exact_values[k]:.4f}")
    print(f"mixture {res.mixture_value:.4f}, optimal 2-memory {opt:.4f}, "
          f"final selection {res.records[-1].selected} (truth {truth})")


if __name__ == "__main__":
    main()
