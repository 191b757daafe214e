"""Benchmark POMDPs: the partially observed combination lock and random low-rank instances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEFAULT_ENUMERATION_CAP,
    CapExceededError,
    LMemoryPolicy,
    LowRankFactorization,
    MemorySpace,
    MemoryState,
    TabularPOMDP,
    advance_memory,
    as_generator,
    initial_memory,
)

GOOD0, GOOD1, BAD, BAD_SHAPED = 0, 1, 2, 3
ABSORBED_OBS = 2
SHAPED_OBS = 3


def hadamard(n: int) -> np.ndarray:
    """Sylvester Hadamard matrix of order ``n`` (a power of two), integer entries."""
    if n < 1 or n & (n - 1):
        raise ValueError(f"Hadamard order must be a power of two, got {n}")
    H = np.ones((1, 1), dtype=np.int64)
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    return H


def rich_dimension(horizon: int) -> int:
    return 1 << math.ceil(math.log2(horizon + 4))


@dataclass(frozen=True)
class PocomblockConfig:
    horizon: int
    num_actions: int = 10
    anti_shaping_reward: float = 0.1
    anti_shaping_prob: float = 0.5
    noise_std: float = 0.1
    mode: str = "discrete"
    seed: int = 0
    absorbed_good: int = GOOD1

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("pocomblock needs horizon >= 2")
        if self.num_actions < 2:
            raise ValueError("pocomblock needs at least two actions")
        if not 0 <= self.anti_shaping_prob <= 1 or not 0 <= self.anti_shaping_reward <= 1:
            raise ValueError("anti-shaping parameters must lie in [0, 1]")
        if self.mode not in ("discrete", "rich"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.absorbed_good not in (GOOD0, GOOD1):
            raise ValueError("absorbed_good must be 0 or 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def _merged_step(h: int) -> bool:
    # 1-based even steps are 0-based odd indices.
    return h % 2 == 1


class RichObservationEncoder:
    """Noisy Hadamard-rotated one-hot encoding of (latent symbol, step).

    The pre-rotation layout is ``[one-hot symbol (3) | one-hot step (H+1)]``,
    zero-padded to ``n = 2**ceil(log2(H+4))``.
    """

    def __init__(self, horizon: int, noise_std: float = 0.1, absorbed_good: int = GOOD1):
        self.horizon = horizon
        self.noise_std = noise_std
        self.absorbed_good = absorbed_good
        self.n = rich_dimension(horizon)
        self.matrix = hadamard(self.n)
        self.raw_dim = horizon + 4

    def symbol(self, state: int, h: int) -> int:
        if state in (BAD, BAD_SHAPED):
            return BAD
        if state == self.absorbed_good and _merged_step(h):
            return BAD
        return state

    def centroid(self, symbol: int, h: int) -> np.ndarray:
        raw = np.zeros(self.n)
        raw[symbol] = 1.0
        raw[3 + h + 1] = 1.0
        return self.matrix @ raw

    def encode(self, state: int, h: int, rng) -> np.ndarray:
        raw = np.zeros(self.raw_dim)
        raw[self.symbol(state, h)] = 1.0
        raw[3 + h + 1] = 1.0
        if self.noise_std > 0:
            raw = raw + as_generator(rng).normal(0.0, self.noise_std, size=self.raw_dim)
        padded = np.zeros(self.n)
        padded[: self.raw_dim] = raw
        return self.matrix @ padded

    def invert(self, x: np.ndarray) -> np.ndarray:
        """Undo the rotation (``M M^T = n I``)."""
        return (self.matrix.T @ x) / self.n

    def decode_argmax(self, x: np.ndarray) -> tuple[int, int]:
        raw = self.invert(x)
        return int(np.argmax(raw[:3])), int(np.argmax(raw[3: 3 + self.horizon + 1])) - 1

    def decode_nearest(self, x: np.ndarray, h: int) -> int:
        dists = [np.sum((x - self.centroid(sym, h)) ** 2) for sym in range(3)]
        return int(np.argmin(dists))

    def to_dict(self) -> dict:
        return {"horizon": self.horizon, "noise_std": self.noise_std,
                "absorbed_good": self.absorbed_good, "n": self.n}


def encode_observation(encoder: RichObservationEncoder, latent: int, h: int, rng) -> np.ndarray:
    return encoder.encode(latent, h, rng)


@dataclass(frozen=True, eq=False)
class Pocomblock:
    """A generated combination-lock instance; ``secret_actions`` is oracle-only."""

    config: PocomblockConfig
    pomdp: TabularPOMDP
    factors: LowRankFactorization
    secret_actions: np.ndarray
    encoder: RichObservationEncoder | None = None


def pocomblock_tables(cfg: PocomblockConfig, secrets: np.ndarray):
    """Tables for given secret actions ``secrets[h, i]`` (good state ``i`` at step ``h``).

    Discrete mode uses four latent states: good 0, good 1, bad, and
    "just fell with anti-shaping" which emits its own rewarded observation.
    """
    H, A = cfg.horizon, cfg.num_actions
    S, O, d = 4, 4, 3
    p = cfg.anti_shaping_prob
    omega = np.zeros((H, S, d))
    omega[:, GOOD0, 0] = omega[:, GOOD1, 0] = 0.5
    omega[:, BAD, 1] = 1.0 - p
    omega[:, BAD_SHAPED, 1] = p
    omega[:, BAD, 2] = 1.0
    psi = np.zeros((H, S, A, d))
    for h in range(H):
        for i in (GOOD0, GOOD1):
            psi[h, i, :, 1] = 1.0
            psi[h, i, secrets[h, i], 1] = 0.0
            psi[h, i, secrets[h, i], 0] = 1.0
        psi[h, BAD, :, 2] = 1.0
        psi[h, BAD_SHAPED, :, 2] = 1.0
    factors = LowRankFactorization(omega, psi)
    emis = np.zeros((H, S, O))
    for h in range(H):
        emis[h, np.arange(S), np.arange(S)] = 1.0
        if _merged_step(h) and h < H - 1:
            g = cfg.absorbed_good
            emis[h, g, g] = 0.0
            emis[h, g, ABSORBED_OBS] = 1.0
    rew = np.zeros((H, O))
    rew[:, SHAPED_OBS] = cfg.anti_shaping_reward
    rew[H - 1, GOOD0] = rew[H - 1, GOOD1] = 1.0
    init = np.array([0.5, 0.5, 0.0, 0.0])
    return init, factors, emis, rew


def make_pocomblock(cfg: PocomblockConfig, rng=None) -> Pocomblock:
    """Build the partially observed combination lock.

    Odd (1-based) steps reveal the latent state; at even steps before the last
    one the bad state and ``cfg.absorbed_good`` share one observation.
    """
    gen = as_generator(cfg.seed if rng is None else rng)
    secrets = gen.integers(cfg.num_actions, size=(cfg.horizon, 2))
    init, factors, emis, rew = pocomblock_tables(cfg, secrets)
    pomdp = TabularPOMDP(init, factors.transitions(), emis, rew, name="pocomblock",
                         meta={"env": "pocomblock", "mode": cfg.mode})
    encoder = None
    if cfg.mode == "rich":
        encoder = RichObservationEncoder(cfg.horizon, cfg.noise_std, cfg.absorbed_good)
    return Pocomblock(cfg, pomdp, factors, secrets, encoder)


# ---------------------------------------------------------------------------
# Decodability


@dataclass
class DecodabilityResult:
    decodable: bool
    witness: tuple | None
    decoder: list = field(default_factory=list)
    reachable: list = field(default_factory=list)

    def __bool__(self):
        return self.decodable


def reachable_pairs(pomdp: TabularPOMDP, L: int, cap: int = DEFAULT_ENUMERATION_CAP) -> list[dict]:
    """Per step, map each reachable window to the set of latent states it co-occurs with."""
    O, A = pomdp.num_observations, pomdp.num_actions
    out = []
    pairs = set()
    for s in np.flatnonzero(pomdp.init > 0):
        for o in np.flatnonzero(pomdp.emissions[0, s] > 0):
            pairs.add((initial_memory(L, int(o), O, A), int(s)))
    for h in range(pomdp.horizon):
        table: dict[MemoryState, set] = {}
        for z, s in pairs:
            table.setdefault(z, set()).add(s)
        out.append(table)
        if h + 1 == pomdp.horizon:
            break
        nxt = set()
        for z, s in pairs:
            for a in range(A):
                for s2 in np.flatnonzero(pomdp.transitions[h, a, s] > 0):
                    for o2 in np.flatnonzero(pomdp.emissions[h + 1, s2] > 0):
                        nxt.add((advance_memory(z, a, int(o2)), int(s2)))
                        if len(nxt) > cap:
                            raise CapExceededError(f"more than {cap} reachable pairs at step {h + 1}")
        pairs = nxt
    return out


def check_decodable(pomdp: TabularPOMDP, L: int, cap: int = DEFAULT_ENUMERATION_CAP) -> DecodabilityResult:
    """True iff every reachable window determines the latent state.

    ``witness`` is ``(h, z, s1, s2)`` for the first collision found; the
    decoder maps windows to states for the steps checked.
    """
    tables = reachable_pairs(pomdp, L, cap)
    decoder, witness = [], None
    for h, table in enumerate(tables):
        step = {}
        for z in sorted(table):
            states = sorted(table[z])
            if len(states) > 1 and witness is None:
                witness = (h, z, states[0], states[1])
            step[z] = states[0] if len(states) == 1 else None
        decoder.append(step)
    return DecodabilityResult(witness is None, witness, decoder, tables)


def secret_action_policy(instance: Pocomblock, L: int = 2) -> LMemoryPolicy:
    """Oracle policy: play the secret action of the decoded good state, else action 0."""
    pomdp = instance.pomdp
    space = MemorySpace.for_pomdp(pomdp, L)
    tables = reachable_pairs(pomdp, L)
    acts = []
    for h in range(pomdp.horizon):
        col = np.zeros(space.size(h), dtype=np.int64)
        for z, states in tables[h].items():
            if len(states) == 1:
                (s,) = states
                if s in (GOOD0, GOOD1):
                    col[space.index(h, z)] = instance.secret_actions[h, s]
        acts.append(col)
    return LMemoryPolicy(space, acts)


# ---------------------------------------------------------------------------
# Random instances


@dataclass(frozen=True, eq=False)
class RandomInstance:
    pomdp: TabularPOMDP
    factors: LowRankFactorization
    gamma_hat: float | None = None


def random_factors(S: int, A: int, H: int, d: int, gen: np.random.Generator,
                   concentration: float = 1.0) -> LowRankFactorization:
    """Nonnegative factors: ``omega`` columns and ``psi`` rows are distributions."""
    omega = np.transpose(gen.dirichlet(np.full(S, concentration), size=(H, d)), (0, 2, 1))
    psi = gen.dirichlet(np.full(d, concentration), size=(H, S, A))
    return LowRankFactorization(omega, psi)


def _near_identity_emissions(S, O, H, noise, gen):
    base = np.zeros((S, O))
    base[np.arange(S), np.arange(S) % O] = 1.0
    return np.stack([(1 - noise) * base + noise * gen.dirichlet(np.ones(O), size=S) for _ in range(H)])


def make_random_lowrank_pomdp(S: int, A: int, O: int, H: int, d: int, rng,
                              gamma_target: float | None = None,
                              emission_noise: float = 0.1,
                              num_probes: int = 2000,
                              max_tries: int = 200) -> RandomInstance:
    """Random rank-``d`` POMDP with uniform random rewards.

    With ``gamma_target`` set, emissions are drawn near the identity map and
    resampled until every step's observability estimate reaches the target.
    """
    from .belief import estimate_observability

    if d > min(S, S * A):
        raise ValueError("rank d must satisfy d <= min(S, S*A)")
    gen = as_generator(rng)
    factors = random_factors(S, A, H, d, gen)
    init = gen.dirichlet(np.ones(S))
    rewards = gen.random((H, O))
    for _ in range(max_tries):
        if gamma_target is None:
            emis = gen.dirichlet(np.ones(O), size=(H, S))
            gamma = None
        else:
            if S > O:
                raise ValueError("near-identity emissions need S <= O")
            emis = _near_identity_emissions(S, O, H, emission_noise, gen)
            gamma = min(estimate_observability(emis[h], num_probes, gen) for h in range(H))
            if gamma < gamma_target:
                continue
        pomdp = TabularPOMDP(init, factors.transitions(), emis, rewards, name="random-lowrank",
                             meta={"env": "random", "rank": d})
        return RandomInstance(pomdp, factors, gamma)
    raise RuntimeError(f"no instance reached gamma_target={gamma_target} in {max_tries} tries")


def make_random_decodable_pomdp(S: int, A: int, O: int, H: int, L: int, rng,
                                max_tries: int = 10_000) -> RandomInstance:
    """Random POMDP with deterministic emissions that is L-step decodable.

    Emission maps may merge states; rejection sampling keeps instances whose
    reachable windows of length ``L`` determine the latent state.
    """
    gen = as_generator(rng)
    for _ in range(max_tries):
        emis = np.zeros((H, S, O))
        for h in range(H):
            emis[h, np.arange(S), gen.integers(O, size=S)] = 1.0
        trans = np.zeros((H, A, S, S))
        for h in range(H):
            for a in range(A):
                for s in range(S):
                    k = int(gen.integers(1, 3))
                    support = gen.choice(S, size=k, replace=False)
                    trans[h, a, s, support] = gen.dirichlet(np.ones(k))
        init = np.zeros(S)
        init[gen.integers(S)] = 1.0
        rewards = gen.random((H, O))
        pomdp = TabularPOMDP(init, trans, emis, rewards, name="random-decodable",
                             meta={"env": "random-decodable", "L": L})
        if check_decodable(pomdp, L):
            return RandomInstance(pomdp, LowRankFactorization.trivial(pomdp))
    raise RuntimeError(f"no {L}-decodable instance found in {max_tries} tries")
