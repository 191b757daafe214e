"""Backward value iteration over memory states with factored next-observation laws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LMemoryPolicy, MemorySpace


@dataclass(eq=False)
class PlannerInput:
    """Everything one planning call needs.

    Parameters
    ----------
    space : MemorySpace
    rewards : list of (Z_h, A) arrays
        Reward plus bonus ``r_h(o_h) + b_h(z, a)`` for ``h = 0..H-1``.
    phi : list of (Z_h, A, d) arrays, ``h = 0..H-2``
    mu : list of (O, d) arrays, ``h = 0..H-2``
    support : list of observation index arrays or None
        Next observations summed over at each step; ``None`` means all of them.
    clip : float or None
        Optional upper clip on ``V``; values are also clipped at 0 when set.
    """

    space: MemorySpace
    rewards: list
    phi: list
    mu: list
    support: list | None = None
    clip: float | None = None

    def __post_init__(self):
        H = self.space.horizon
        if len(self.rewards) != H or len(self.phi) < H - 1 or len(self.mu) < H - 1:
            raise ValueError("planner tables do not cover the horizon")
        for h in range(H):
            r = self.rewards[h]
            if r.shape != (self.space.size(h), self.space.num_actions):
                raise ValueError(f"reward table at step {h} has shape {r.shape}")
            if not np.all(np.isfinite(r)):
                raise ValueError(f"reward table at step {h} is not finite")
        for h in range(H - 1):
            if self.phi[h].shape[:2] != (self.space.size(h), self.space.num_actions):
                raise ValueError(f"feature table at step {h} has shape {self.phi[h].shape}")
            if self.mu[h].shape != (self.space.num_observations, self.phi[h].shape[2]):
                raise ValueError(f"mu table at step {h} has shape {self.mu[h].shape}")


@dataclass(eq=False)
class PlannerOutput:
    policy: LMemoryPolicy
    Q: list
    V: list

    def initial_value(self, first_obs: np.ndarray) -> float:
        """``E_{o_0}[V_0(z_0)]`` for a first-observation law."""
        sp = self.policy.space
        return float(sum(p * self.V[0][sp.index(0, sp.initial(o))] for o, p in enumerate(first_obs)))


def q_backup(phi: np.ndarray, mu: np.ndarray, V_next: np.ndarray, rewards: np.ndarray,
             next_index: np.ndarray, support: np.ndarray | None = None) -> np.ndarray:
    """``Q(z, a) = r(z, a) + sum_o phi(z, a) . mu(o) V_next(next(z, a, o))``."""
    probs = np.einsum("zad,od->zao", phi, mu)
    cont = V_next[next_index]
    if support is not None:
        probs = probs[:, :, support]
        cont = cont[:, :, support]
    return rewards + np.einsum("zao,zao->za", probs, cont)


def lsvi_llr(inp: PlannerInput) -> PlannerOutput:
    """Greedy policy and value tables; ties go to the lowest action index."""
    sp = inp.space
    H = sp.horizon
    Q = [None] * H
    V = [None] * H
    acts = [None] * H
    for h in range(H - 1, -1, -1):
        if h == H - 1:
            q = np.array(inp.rewards[h], dtype=float)
        else:
            support = None if inp.support is None else inp.support[h]
            q = q_backup(inp.phi[h], inp.mu[h], V[h + 1], inp.rewards[h], sp.next_index(h), support)
        Q[h] = q
        acts[h] = np.argmax(q, axis=1)
        v = q[np.arange(q.shape[0]), acts[h]]
        if inp.clip is not None:
            v = np.clip(v, 0.0, inp.clip)
        V[h] = v
    return PlannerOutput(LMemoryPolicy(sp, acts), Q, V)


def observation_rewards(space: MemorySpace, rewards: np.ndarray) -> list[np.ndarray]:
    """Broadcast ``r_h(o_h)`` to (Z_h, A) tables."""
    A = space.num_actions
    return [np.repeat(rewards[h, space.last_observations(h)][:, None], A, axis=1)
            for h in range(space.horizon)]


def q_table_lines(Q: list, space: MemorySpace) -> str:
    """Debug dump as ``h,z,a,q`` lines (``z`` is the window's index)."""
    out = []
    for h, q in enumerate(Q):
        for z in range(q.shape[0]):
            for a in range(q.shape[1]):
                out.append(f"{h},{z},{a},{q[z, a]!r}\n")
    return "".join(out)
