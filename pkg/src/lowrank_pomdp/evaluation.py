"""Value oracles: Monte Carlo, exact history enumeration, and optimal L-memory search."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_ENUMERATION_CAP,
    CapExceededError,
    LMemoryPolicy,
    MemorySpace,
    MixturePolicy,
    Policy,
    RandomStream,
    TabularPOMDP,
    as_generator,
    sample_episode,
    window,
)
from .environments import check_decodable

Z95 = 1.959963984540054


def mc_value(pomdp: TabularPOMDP, policy: Policy, n_episodes: int, rng) -> tuple[float, tuple[float, float]]:
    """Mean episode return and a 95% normal-approximation interval.

    A :class:`RandomStream` gives every episode its own child stream.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    if isinstance(rng, RandomStream):
        returns = [sample_episode(pomdp, policy, rng.child(i)).total_reward for i in range(n_episodes)]
    else:
        gen = as_generator(rng)
        returns = [sample_episode(pomdp, policy, gen).total_reward for _ in range(n_episodes)]
    x = np.array(returns)
    mean = math.fsum(returns) / n_episodes
    if n_episodes == 1:
        return mean, (mean, mean)
    half = Z95 * float(x.std(ddof=1)) / math.sqrt(n_episodes)
    return mean, (mean - half, mean + half)


def exact_value(pomdp: TabularPOMDP, policy: Policy, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Expected return by enumerating every observation/action history.

    Mixtures are evaluated as the mean of their members' values.
    """
    if isinstance(policy, MixturePolicy):
        return math.fsum(exact_value(pomdp, m, cap) for m in policy.members) / len(policy.members)
    H, O, A = pomdp.horizon, pomdp.num_observations, pomdp.num_actions
    if (O * A) ** H > cap:
        raise CapExceededError(f"(O*A)^H = {(O * A) ** H} histories exceed cap {cap}")
    L = policy.memory
    total = []
    # Frontier entries: (alpha, obs, acts) with alpha(s) = P(s_h = s, history).
    frontier = []
    for o in range(O):
        alpha = pomdp.init * pomdp.emissions[0, :, o]
        if alpha.sum() > 0:
            frontier.append((alpha, (o,), ()))
    for h in range(H):
        nxt = []
        for alpha, obs, acts in frontier:
            total.append(alpha.sum() * pomdp.rewards[h, obs[-1]])
            if h + 1 == H:
                continue
            pa = policy.action_probs(h, window(obs, acts, h, L, O, A))
            for a in np.flatnonzero(pa > 0):
                pred = pa[a] * (alpha @ pomdp.transitions[h, a])
                for o2 in range(O):
                    a2 = pred * pomdp.emissions[h + 1, :, o2]
                    if a2.sum() > 0:
                        nxt.append((a2, obs + (o2,), acts + (int(a),)))
        frontier = nxt
    return math.fsum(total)


def _initial_measure(pomdp: TabularPOMDP, space: MemorySpace) -> np.ndarray:
    m = np.zeros((space.size(0), pomdp.num_states))
    for o in range(pomdp.num_observations):
        m[space.index(0, space.initial(o))] += pomdp.init * pomdp.emissions[0, :, o]
    return m


def _propagate(pomdp: TabularPOMDP, space: MemorySpace, h: int, m: np.ndarray, pa: np.ndarray) -> np.ndarray:
    """Joint law of (z_{h+1}, s_{h+1}) from that of (z_h, s_h) under action table ``pa`` (Z_h, A)."""
    S = pomdp.num_states
    flow = np.einsum("zs,za,ast->zat", m, pa, pomdp.transitions[h])
    full = flow[..., None] * pomdp.emissions[h + 1][None, None]  # (Z, A, S', O)
    nxt = space.next_index(h)
    out = np.zeros((space.size(h + 1), S))
    idx = np.broadcast_to(nxt[:, :, None, :], full.shape)
    for s2 in range(S):
        out[:, s2] = np.bincount(idx[:, :, s2, :].ravel(), weights=full[:, :, s2, :].ravel(),
                                 minlength=space.size(h + 1))
    return out


def _step_reward(pomdp: TabularPOMDP, space: MemorySpace, h: int, m: np.ndarray) -> float:
    return float(m.sum(axis=1) @ pomdp.rewards[h, space.last_observations(h)])


def lmemory_value(pomdp: TabularPOMDP, policy: LMemoryPolicy) -> float:
    """Exact value of an L-memory policy by a forward pass over (window, state) pairs."""
    sp = policy.space
    m = _initial_measure(pomdp, sp)
    total = 0.0
    for h in range(pomdp.horizon):
        total += _step_reward(pomdp, sp, h, m)
        if h + 1 < pomdp.horizon:
            m = _propagate(pomdp, sp, h, m, policy.prob_table(h))
    return total


def policy_value(pomdp: TabularPOMDP, policy: Policy) -> float:
    """Exact value, using the forward pass when the policy is an L-memory table."""
    if isinstance(policy, MixturePolicy):
        return math.fsum(policy_value(pomdp, m) for m in policy.members) / len(policy.members)
    if isinstance(policy, LMemoryPolicy):
        return lmemory_value(pomdp, policy)
    return exact_value(pomdp, policy)


# ---------------------------------------------------------------------------
# Optimal L-memory policies


@dataclass(frozen=True, eq=False)
class OracleResult:
    value: float
    policy: LMemoryPolicy
    method: str
    evaluated: int


def _last_step_gain(pomdp: TabularPOMDP, h: int) -> np.ndarray:
    """(S, A) expected final reward after acting at step ``h = H-2``."""
    r_next = pomdp.emissions[h + 1] @ pomdp.rewards[h + 1]
    return np.einsum("ast,t->sa", pomdp.transitions[h], r_next)


def _greedy_last(pomdp, space, h, m, gain) -> tuple[float, np.ndarray]:
    scores = m @ gain  # (Z, A)
    acts = np.argmax(scores, axis=1)
    return _step_reward(pomdp, space, h, m) + float(scores.max(axis=1).sum()), acts


def _one_hot(acts: np.ndarray, A: int) -> np.ndarray:
    out = np.zeros((acts.shape[0], A))
    out[np.arange(acts.shape[0]), acts] = 1.0
    return out


def _enumerate_optimal(pomdp: TabularPOMDP, space: MemorySpace, cap: int) -> OracleResult:
    """Exhaustive search over deterministic L-memory policies.

    Actions at ``H-1`` never matter.  Step ``H-2`` is solved greedily per
    window given the joint law of (window, state).  Step ``H-3`` is searched
    separately for each group of windows sharing the part retained in the next
    window, since groups lead to disjoint next windows.  Earlier steps are
    enumerated jointly over windows with positive probability.
    """
    H, A = pomdp.horizon, pomdp.num_actions
    zero = [np.zeros(space.size(h), dtype=np.int64) for h in range(H)]
    m0 = _initial_measure(pomdp, space)
    if H == 1:
        return OracleResult(_step_reward(pomdp, space, 0, m0), LMemoryPolicy(space, zero), "enumerate", 1)
    last = H - 2
    gain = _last_step_gain(pomdp, last)
    if H == 2:
        v, acts = _greedy_last(pomdp, space, 0, m0, gain)
        tables = list(zero)
        tables[0] = acts
        return OracleResult(v, LMemoryPolicy(space, tables), "enumerate", 1)
    sep = last - 1
    groups: dict[tuple, list[int]] = {}
    for i, z in enumerate(space.states(sep)):
        groups.setdefault((z.observations[1:], z.actions[1:]), []).append(i)
    counter = [0]

    def solve_separable(m):
        """Best value from step ``sep`` on, with its action tables."""
        base = _step_reward(pomdp, space, sep, m)
        acts_sep = np.zeros(space.size(sep), dtype=np.int64)
        acts_last = np.zeros(space.size(last), dtype=np.int64)
        total = base
        for members in groups.values():
            live = [i for i in members if m[i].sum() > 0]
            if not live:
                continue
            n = len(live)
            if A**n > cap:
                raise CapExceededError(f"{A**n} joint actions for one window group exceed cap {cap}")
            # Per-member flows to step `last` for each action.
            flows = np.empty((n, A, space.size(last), pomdp.num_states))
            for j, i in enumerate(live):
                for a in range(A):
                    sub = np.zeros_like(m)
                    sub[i] = m[i]
                    pa = np.zeros((space.size(sep), A))
                    pa[:, a] = 1.0
                    flows[j, a] = _propagate(pomdp, space, sep, sub, pa)
            combos = np.array(list(itertools.product(range(A), repeat=n)))
            counter[0] += len(combos)
            mm = flows[np.arange(n)[None, :], combos].sum(axis=1)  # (C, Z', S)
            scores = mm @ gain  # (C, Z', A)
            vals = mm.sum(axis=2) @ pomdp.rewards[last, space.last_observations(last)] + scores.max(axis=2).sum(axis=1)
            best = int(np.argmax(vals))
            total += float(vals[best])
            acts_sep[live] = combos[best]
            touched = mm[best].sum(axis=1) > 0
            acts_last[touched] = np.argmax(scores[best], axis=1)[touched]
        return total, acts_sep, acts_last

    best = [-np.inf, None]

    def search(h, m, acc, tables):
        if h == sep:
            v, a_sep, a_last = solve_separable(m)
            if acc + v > best[0] + 1e-15:
                full = list(tables) + [a_sep, a_last, zero[H - 1]]
                best[0], best[1] = acc + v, full
            return
        r = _step_reward(pomdp, space, h, m)
        live = np.flatnonzero(m.sum(axis=1) > 0)
        if A ** len(live) > cap:
            raise CapExceededError(f"{A ** len(live)} joint actions at step {h} exceed cap {cap}")
        for combo in itertools.product(range(A), repeat=len(live)):
            acts = np.zeros(space.size(h), dtype=np.int64)
            acts[live] = combo
            m2 = _propagate(pomdp, space, h, m, _one_hot(acts, A))
            search(h + 1, m2, acc + r, tables + [acts])
            if counter[0] > cap:
                raise CapExceededError(f"policy search exceeded cap {cap}")

    search(0, m0, 0.0, [])
    return OracleResult(float(best[0]), LMemoryPolicy(space, best[1]), "enumerate", counter[0])


def _decodable_optimal(pomdp: TabularPOMDP, space: MemorySpace, decoder: list) -> OracleResult:
    """Backward DP over reachable windows, each standing for its decoded state."""
    H = pomdp.horizon
    V = [np.zeros(space.size(h)) for h in range(H)]
    tables = [np.zeros(space.size(h), dtype=np.int64) for h in range(H)]
    for h in range(H - 1, -1, -1):
        for z, s in decoder[h].items():
            i = space.index(h, z)
            r = pomdp.rewards[h, z.last_observation]
            if h + 1 == H:
                V[h][i] = r
                continue
            nxt = space.next_index(h)[i]  # (A, O)
            po = pomdp.transitions[h, :, s] @ pomdp.emissions[h + 1]  # (A, O)
            q = (po * V[h + 1][nxt]).sum(axis=1)
            a = int(np.argmax(q))
            tables[h][i] = a
            V[h][i] = r + q[a]
    first = pomdp.first_observation_dist()
    value = float(sum(p * V[0][space.index(0, space.initial(o))] for o, p in enumerate(first) if p > 0))
    return OracleResult(value, LMemoryPolicy(space, tables), "dp", sum(len(d) for d in decoder))


def optimal_lmemory_value(pomdp: TabularPOMDP, L: int, method: str = "auto",
                          cap: int = DEFAULT_ENUMERATION_CAP) -> OracleResult:
    """Best value over deterministic L-memory policies.

    ``method="auto"`` uses the window DP when the instance is L-step decodable
    and exhaustive search otherwise.
    """
    space = MemorySpace.for_pomdp(pomdp, L, cap)
    if method not in ("auto", "dp", "enumerate"):
        raise ValueError(f"unknown method {method!r}")
    if method in ("auto", "dp"):
        res = check_decodable(pomdp, L, cap)
        if res.decodable:
            return _decodable_optimal(pomdp, space, res.decoder)
        if method == "dp":
            raise ValueError(f"instance is not {L}-step decodable (witness {res.witness})")
    return _enumerate_optimal(pomdp, space, cap)


# ---------------------------------------------------------------------------
# Learning curves

CURVE_HEADER = "iter,mean_return,ci_low,ci_high,wallclock_s"


@dataclass(frozen=True)
class CurveRow:
    iter: int
    mean_return: float
    ci_low: float
    ci_high: float
    wallclock_s: float = 0.0


def _fmt(x: float) -> str:
    return f"{x:.12f}"


class LearningCurve:
    """Per-iteration evaluation returns with confidence bounds."""

    def __init__(self, rows=()):
        self.rows: list[CurveRow] = []
        for r in rows:
            self.append(r)

    def append(self, row: CurveRow) -> None:
        if self.rows and row.iter <= self.rows[-1].iter:
            raise ValueError("curve iterations must be strictly increasing")
        if not row.ci_low <= row.mean_return <= row.ci_high:
            raise ValueError("confidence interval does not contain the mean")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def moving_average(self, window: int = 10) -> np.ndarray:
        """Trailing mean of ``mean_return`` over up to ``window`` rows."""
        x = self.column("mean_return")
        c = np.concatenate([[0.0], np.cumsum(x)])
        idx = np.arange(1, len(x) + 1)
        lo = np.maximum(idx - window, 0)
        return (c[idx] - c[lo]) / (idx - lo)

    def to_csv(self) -> str:
        lines = [CURVE_HEADER]
        for r in self.rows:
            lines.append(",".join([str(r.iter), _fmt(r.mean_return), _fmt(r.ci_low), _fmt(r.ci_high),
                                   _fmt(r.wallclock_s)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "LearningCurve":
        lines = text.splitlines()
        if not lines or lines[0] != CURVE_HEADER:
            raise ValueError("missing or malformed curve header")
        rows = []
        for line in lines[1:]:
            it, m, lo, hi, w = line.split(",")
            rows.append(CurveRow(int(it), float(m), float(lo), float(hi), float(w)))
        return cls(rows)
