"""How well do short memory windows stand in for the exact belief?

Builds the approximated window MDP for L = 1..4 and reports the one-step
gap to the true next-observation law and the value error of a few policies.

    python3 demos/belief_walkthrough.py
"""

import numpy as np

from lowrank_pomdp.belief import build_approx_mdp, g_optimal_design, one_step_gap
from lowrank_pomdp.core import LMemoryPolicy, RandomStream
from lowrank_pomdp.environments import make_random_lowrank_pomdp
from lowrank_pomdp.evaluation import lmemory_value


def main():
    inst = make_random_lowrank_pomdp(3, 2, 4, 5, 2, RandomStream(1), gamma_target=0.8)
    p, f = inst.pomdp, inst.factors

    des = g_optimal_design(f.psi[0].reshape(-1, f.rank))
    print(f"design over psi_0: {len(des.support)} support points, max leverage {des.g_value:.3f} (rank {des.rank})")

    gen = np.random.default_rng(0)
    print(f"{'L':>2}  {'one-step gap':>12}  {'max |V - V_approx|':>18}")
    for L in (1, 2, 3, 4):
        m = build_approx_mdp(p, f, L)
        eps = one_step_gap(p, m, LMemoryPolicy.uniform(m.space)).max()
        errs = []
        for _ in range(5):
            pi = LMemoryPolicy.random_deterministic(m.space, gen)
            errs.append(abs(lmemory_value(p, pi) - m.policy_value(pi, p.rewards, p.first_observation_dist())))
        print(f"{L:>2}  {eps:>12.2e}  {max(errs):>18.2e}")


if __name__ == "__main__":
    main()
