"""Tabular POMDP substrate: models, memory windows, policies and episode sampling.

Steps are 0-based throughout the package: an episode visits ``h = 0, ..., H-1``,
emits ``o_h ~ Obs[h][s_h]``, picks ``a_h`` and moves with ``P[h][a_h]``.  The
transition stored at ``h = H-1`` is never used by an episode but must still be
row-stochastic.

Memory windows ``z_h = (o_{h-L+1..h}, a_{h-L+1..h-1})`` reaching before step 0
are padded with a dummy observation (index ``O``) and a dummy action (index
``A``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

STOCHASTIC_ATOL = 1e-12
DEFAULT_ENUMERATION_CAP = 10**6


class CapExceededError(RuntimeError):
    """An exhaustive enumeration would exceed its configured cap."""


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_stochastic(name: str, arr: np.ndarray, atol: float) -> None:
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    rows = arr.sum(axis=-1)
    if not np.allclose(rows, 1.0, rtol=0.0, atol=atol):
        worst = float(np.max(np.abs(rows - 1.0)))
        raise ValueError(f"{name} rows do not sum to 1 (max deviation {worst:.3e})")


@dataclass(frozen=True, eq=False)
class TabularPOMDP:
    """Finite-horizon POMDP with observation-based rewards.

    Parameters
    ----------
    init : (S,) array
        Initial state distribution ``d0``.
    transitions : (H, A, S, S) array
        ``transitions[h, a, s, s2] = P_h(s2 | s, a)``.
    emissions : (H, S, O) array
        ``emissions[h, s, o] = Obs_h(o | s)``.
    rewards : (H, O) array
        ``rewards[h, o] = r_h(o)``, entries in [0, 1].
    prefix_length : int
        Number of leading dummy steps (non-zero only for extended POMDPs).
    """

    init: np.ndarray
    transitions: np.ndarray
    emissions: np.ndarray
    rewards: np.ndarray
    prefix_length: int = 0
    name: str = "pomdp"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        init = _frozen(self.init)
        trans = _frozen(self.transitions)
        emis = _frozen(self.emissions)
        rew = _frozen(self.rewards)
        if trans.ndim != 4 or trans.shape[2] != trans.shape[3]:
            raise ValueError("transitions must have shape (H, A, S, S)")
        H, A, S, _ = trans.shape
        if emis.ndim != 3 or emis.shape[:2] != (H, S):
            raise ValueError("emissions must have shape (H, S, O)")
        O = emis.shape[2]
        if init.shape != (S,):
            raise ValueError("init must have shape (S,)")
        if rew.shape != (H, O):
            raise ValueError("rewards must have shape (H, O)")
        if min(H, A, S, O) < 1:
            raise ValueError("all dimensions must be positive")
        _check_stochastic("init", init, STOCHASTIC_ATOL)
        _check_stochastic("transitions", trans, STOCHASTIC_ATOL)
        _check_stochastic("emissions", emis, STOCHASTIC_ATOL)
        if np.any(rew < 0) or np.any(rew > 1):
            raise ValueError("rewards must lie in [0, 1]")
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "transitions", trans)
        object.__setattr__(self, "emissions", emis)
        object.__setattr__(self, "rewards", rew)

    @property
    def horizon(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def num_states(self) -> int:
        return self.transitions.shape[2]

    @property
    def num_observations(self) -> int:
        return self.emissions.shape[2]

    def observation_dist(self, h: int, belief: np.ndarray) -> np.ndarray:
        """Distribution of ``o_h`` when ``s_h ~ belief``."""
        return belief @ self.emissions[h]

    def first_observation_dist(self) -> np.ndarray:
        return self.observation_dist(0, self.init)


@dataclass(frozen=True, eq=False)
class LowRankFactorization:
    """Factorization ``P_h(s2 | s, a) = omega[h, s2] . psi[h, s, a]``.

    ``omega`` has shape (H, S, d) and ``psi`` has shape (H, S, A, d).
    """

    omega: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        omega = _frozen(self.omega)
        psi = _frozen(self.psi)
        if omega.ndim != 3 or psi.ndim != 4:
            raise ValueError("omega must be (H, S, d) and psi (H, S, A, d)")
        if omega.shape[0] != psi.shape[0] or omega.shape[1] != psi.shape[1] or omega.shape[2] != psi.shape[3]:
            raise ValueError("omega and psi shapes are inconsistent")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "psi", psi)

    @property
    def rank(self) -> int:
        return self.omega.shape[2]

    def transitions(self) -> np.ndarray:
        """Reconstructed (H, A, S, S) kernel."""
        return np.einsum("hsad,htd->hast", self.psi, self.omega)

    def check(self, pomdp: TabularPOMDP, atol: float = 1e-10) -> None:
        rec = self.transitions()
        if rec.shape != pomdp.transitions.shape:
            raise ValueError("factorization shape does not match the POMDP")
        err = float(np.max(np.abs(rec - pomdp.transitions)))
        if err > atol:
            raise ValueError(f"factorization reconstruction error {err:.3e} exceeds {atol:.0e}")

    @classmethod
    def trivial(cls, pomdp: TabularPOMDP) -> "LowRankFactorization":
        """Full-rank factorization with ``omega = I`` and ``psi = P(.|s,a)``."""
        H, S = pomdp.horizon, pomdp.num_states
        omega = np.broadcast_to(np.eye(S), (H, S, S))
        psi = np.transpose(pomdp.transitions, (0, 2, 1, 3))
        return cls(omega, psi)


@dataclass(frozen=True, order=True)
class MemoryState:
    """Window of the last L observations and L-1 actions."""

    observations: tuple
    actions: tuple

    @property
    def memory(self) -> int:
        return len(self.observations)

    @property
    def last_observation(self) -> int:
        return self.observations[-1]


def initial_memory(L: int, o0: int, dummy_obs: int, dummy_act: int) -> MemoryState:
    if L < 1:
        raise ValueError("memory length must be >= 1")
    return MemoryState((dummy_obs,) * (L - 1) + (int(o0),), (dummy_act,) * (L - 1))


def advance_memory(z: MemoryState, a: int, o_next: int,
                   num_actions: int | None = None,
                   num_observations: int | None = None) -> MemoryState:
    """Slide the window: drop the oldest entries, append ``a`` and ``o_next``."""
    if num_actions is not None and not 0 <= a < num_actions:
        raise IndexError(f"action {a} out of range")
    if num_observations is not None and not 0 <= o_next < num_observations:
        raise IndexError(f"observation {o_next} out of range")
    if len(z.actions) != len(z.observations) - 1:
        raise ValueError("malformed memory state")
    obs = z.observations[1:] + (int(o_next),)
    acts = (z.actions[1:] + (int(a),)) if z.actions else ()
    return MemoryState(obs, acts)


def window(observations: Sequence[int], actions: Sequence[int], h: int, L: int,
           dummy_obs: int, dummy_act: int) -> MemoryState:
    """Extract ``z_h`` directly from a history (0-based step ``h``)."""
    obs = tuple(int(observations[t]) if t >= 0 else dummy_obs for t in range(h - L + 1, h + 1))
    acts = tuple(int(actions[t]) if t >= 0 else dummy_act for t in range(h - L + 1, h))
    return MemoryState(obs, acts)


def enumerate_memory_states(num_observations: int, num_actions: int, L: int, h: int,
                            cap: int = DEFAULT_ENUMERATION_CAP) -> list[MemoryState]:
    """All windows at step ``h`` in lexicographic order.

    Positions before step 0 hold the dummy symbols, so the step-``h`` set has
    ``O**min(h+1, L) * A**min(h, L-1)`` elements.
    """
    n_obs = min(h + 1, L)
    n_act = min(h, L - 1)
    count = num_observations**n_obs * num_actions**n_act
    if count > cap:
        raise CapExceededError(f"{count} memory states at step {h} exceed cap {cap}")
    pad_o = (num_observations,) * (L - n_obs)
    pad_a = (num_actions,) * (L - 1 - n_act)
    states = []
    # Chronological interleaving o, a, o, ..., o; n_act == n_obs - 1 always.
    ranges = []
    for i in range(n_obs):
        ranges.append(range(num_observations))
        if i < n_act:
            ranges.append(range(num_actions))
    for combo in itertools.product(*ranges):
        obs = combo[0::2]
        acts = combo[1::2]
        states.append(MemoryState(pad_o + tuple(obs), pad_a + tuple(acts)))
    return states


class MemorySpace:
    """Per-step memory-state enumeration with index lookup and window transitions."""

    def __init__(self, num_observations: int, num_actions: int, L: int, horizon: int,
                 cap: int = DEFAULT_ENUMERATION_CAP):
        if L < 1:
            raise ValueError("memory length must be >= 1")
        self.num_observations = num_observations
        self.num_actions = num_actions
        self.L = L
        self.horizon = horizon
        total = 0
        self._states = []
        self._index = []
        for h in range(horizon):
            states = enumerate_memory_states(num_observations, num_actions, L, h, cap)
            total += len(states)
            if total > cap:
                raise CapExceededError(f"{total} memory states exceed cap {cap}")
            self._states.append(states)
            self._index.append({z: i for i, z in enumerate(states)})
        self._next = [None] * horizon

    @classmethod
    def for_pomdp(cls, pomdp: TabularPOMDP, L: int, cap: int = DEFAULT_ENUMERATION_CAP) -> "MemorySpace":
        return cls(pomdp.num_observations, pomdp.num_actions, L, pomdp.horizon, cap)

    @property
    def dummy_obs(self) -> int:
        return self.num_observations

    @property
    def dummy_act(self) -> int:
        return self.num_actions

    def states(self, h: int) -> list[MemoryState]:
        return self._states[h]

    def size(self, h: int) -> int:
        return len(self._states[h])

    def index(self, h: int, z: MemoryState) -> int:
        try:
            return self._index[h][z]
        except KeyError:
            raise KeyError(f"{z} is not a memory state at step {h}") from None

    def initial(self, o0: int) -> MemoryState:
        return initial_memory(self.L, o0, self.dummy_obs, self.dummy_act)

    def advance(self, z: MemoryState, a: int, o_next: int) -> MemoryState:
        return advance_memory(z, a, o_next, self.num_actions, self.num_observations)

    def next_index(self, h: int) -> np.ndarray:
        """(Z_h, A, O) table of successor indices into step ``h+1``."""
        if self._next[h] is None:
            A, O = self.num_actions, self.num_observations
            table = np.empty((self.size(h), A, O), dtype=np.int64)
            nxt = self._index[h + 1]
            for i, z in enumerate(self._states[h]):
                for a in range(A):
                    for o in range(O):
                        table[i, a, o] = nxt[advance_memory(z, a, o)]
            table.setflags(write=False)
            self._next[h] = table
        return self._next[h]

    def last_observations(self, h: int) -> np.ndarray:
        return np.array([z.last_observation for z in self._states[h]], dtype=np.int64)

    def __iter__(self) -> Iterator[list[MemoryState]]:
        return iter(self._states)


# ---------------------------------------------------------------------------
# Random streams


class RandomStream:
    """Seeded, splittable stream: ``child(*key)`` is a pure function of (seed, key).

    Built on :class:`numpy.random.SeedSequence` spawn keys, so the stream a
    child produces does not depend on how many other children were drawn.
    """

    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed) & (2**64 - 1)
        self.key = tuple(int(k) for k in key)
        self._gen = None

    def child(self, *key: int) -> "RandomStream":
        return RandomStream(self.seed, self.key + tuple(int(k) for k in key))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
            self._gen = np.random.Generator(np.random.PCG64(ss))
        return self._gen

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, key={self.key})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RandomStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


# ---------------------------------------------------------------------------
# Policies


def _draw(probs: np.ndarray, gen: np.random.Generator) -> int:
    u = gen.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


class Policy:
    """Interface: action distributions over memory windows of length ``memory``."""

    memory: int = 1
    num_actions: int

    def for_episode(self, gen: np.random.Generator) -> "Policy":
        return self

    def action_probs(self, h: int, z: MemoryState) -> np.ndarray:
        raise NotImplementedError

    def act(self, h: int, z: MemoryState, gen: np.random.Generator) -> int:
        return _draw(self.action_probs(h, z), gen)


class UniformPolicy(Policy):
    def __init__(self, num_actions: int, memory: int = 1):
        self.num_actions = num_actions
        self.memory = memory
        self._probs = np.full(num_actions, 1.0 / num_actions)

    def action_probs(self, h, z):
        return self._probs

    def act(self, h, z, gen):
        return int(gen.integers(self.num_actions))


class LMemoryPolicy(Policy):
    """Per-step action tables indexed by memory state.

    ``tables[h]`` is either an int array of shape (Z_h,) (deterministic) or a
    float array of shape (Z_h, A) whose rows are action distributions.
    """

    def __init__(self, space: MemorySpace, tables: Sequence[np.ndarray]):
        if len(tables) != space.horizon:
            raise ValueError("need one table per step")
        self.space = space
        self.memory = space.L
        self.num_actions = space.num_actions
        self.tables = []
        for h, t in enumerate(tables):
            t = np.asarray(t)
            if t.shape[0] != space.size(h):
                raise ValueError(f"table at step {h} has {t.shape[0]} rows, expected {space.size(h)}")
            if t.ndim == 2:
                t = t.astype(float)
                if np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0, atol=1e-12, rtol=0):
                    raise ValueError(f"table at step {h} is not a distribution")
            else:
                t = t.astype(np.int64)
                if np.any(t < 0) or np.any(t >= self.num_actions):
                    raise ValueError(f"table at step {h} has out-of-range actions")
            t.setflags(write=False)
            self.tables.append(t)

    @property
    def deterministic(self) -> bool:
        return all(t.ndim == 1 for t in self.tables)

    def prob_table(self, h: int) -> np.ndarray:
        t = self.tables[h]
        if t.ndim == 2:
            return t
        out = np.zeros((t.shape[0], self.num_actions))
        out[np.arange(t.shape[0]), t] = 1.0
        return out

    def action_probs(self, h, z):
        i = self.space.index(h, z)
        t = self.tables[h]
        if t.ndim == 2:
            return t[i]
        out = np.zeros(self.num_actions)
        out[t[i]] = 1.0
        return out

    def act(self, h, z, gen):
        t = self.tables[h]
        i = self.space.index(h, z)
        if t.ndim == 1:
            return int(t[i])
        return _draw(t[i], gen)

    @classmethod
    def uniform(cls, space: MemorySpace) -> "LMemoryPolicy":
        A = space.num_actions
        return cls(space, [np.full((space.size(h), A), 1.0 / A) for h in range(space.horizon)])

    @classmethod
    def random_deterministic(cls, space: MemorySpace, gen: np.random.Generator) -> "LMemoryPolicy":
        return cls(space, [gen.integers(space.num_actions, size=space.size(h)) for h in range(space.horizon)])


class RolloutMix(Policy):
    """``pi o_n U(A)`` for a target step: follow ``pi`` through step ``target-n``, then act uniformly."""

    def __init__(self, pi: Policy, n: int, target: int):
        if n < 0:
            raise ValueError("n must be >= 0")
        self.pi = pi
        self.n = n
        self.target = target
        self.memory = pi.memory
        self.num_actions = pi.num_actions
        self._uniform = np.full(self.num_actions, 1.0 / self.num_actions)

    def for_episode(self, gen):
        inner = self.pi.for_episode(gen)
        if inner is self.pi:
            return self
        return RolloutMix(inner, self.n, self.target)

    def _uses_pi(self, h: int) -> bool:
        return h <= self.target - self.n

    def action_probs(self, h, z):
        return self.pi.action_probs(h, z) if self._uses_pi(h) else self._uniform

    def act(self, h, z, gen):
        if self._uses_pi(h):
            return self.pi.act(h, z, gen)
        return int(gen.integers(self.num_actions))


def rollin_mix(pi: Policy, n: int, target: int) -> RolloutMix:
    """Policy that follows ``pi`` for steps ``<= target - n`` and is uniform afterwards."""
    return RolloutMix(pi, n, target)


class MixturePolicy(Policy):
    """Uniform mixture; one member is drawn at the start of every episode."""

    def __init__(self, members: Sequence[Policy]):
        members = list(members)
        if not members:
            raise ValueError("mixture needs at least one member")
        self.members = members
        self.memory = members[0].memory
        self.num_actions = members[0].num_actions

    def for_episode(self, gen):
        return self.members[int(gen.integers(len(self.members)))].for_episode(gen)

    def action_probs(self, h, z):
        # Only meaningful per episode; averaged probabilities are not the mixture law.
        raise TypeError("draw a member with for_episode() before querying a mixture")


def uniform_mixture(policies: Sequence[Policy]) -> MixturePolicy:
    return MixturePolicy(policies)


# ---------------------------------------------------------------------------
# Trajectories


@dataclass(frozen=True)
class LearnerView:
    """Everything a learner may see from an episode."""

    observations: tuple
    actions: tuple
    rewards: tuple


@dataclass(frozen=True)
class Trajectory:
    """One episode; ``states`` is hidden and excluded from :meth:`view`."""

    states: tuple
    observations: tuple
    actions: tuple
    rewards: tuple

    def __len__(self):
        return len(self.observations)

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def view(self) -> LearnerView:
        return LearnerView(self.observations, self.actions, self.rewards)

    def to_lines(self) -> str:
        return "".join(f"{h},{o},{a},{r!r}\n" for h, (o, a, r) in
                       enumerate(zip(self.observations, self.actions, self.rewards)))


def sample_episode(pomdp: TabularPOMDP, pi: Policy, rng) -> Trajectory:
    """Roll out one episode of ``pi``; an unknown memory state raises ``KeyError``."""
    gen = as_generator(rng)
    pi = pi.for_episode(gen)
    H, O, A = pomdp.horizon, pomdp.num_observations, pomdp.num_actions
    L = pi.memory
    states, obs, acts, rews = [], [], [], []
    s = _draw(pomdp.init, gen)
    z = None
    for h in range(H):
        o = _draw(pomdp.emissions[h, s], gen)
        z = initial_memory(L, o, O, A) if h == 0 else advance_memory(z, acts[-1], o)
        a = pi.act(h, z, gen)
        states.append(s)
        obs.append(o)
        acts.append(a)
        rews.append(float(pomdp.rewards[h, o]))
        if h + 1 < H:
            s = _draw(pomdp.transitions[h, a, s], gen)
    return Trajectory(tuple(states), tuple(obs), tuple(acts), tuple(rews))


def extend_pomdp(pomdp: TabularPOMDP, L: int) -> TabularPOMDP:
    """Prepend ``2L - 2`` dummy steps that emit the dummy observation and reset to ``d0``.

    The dummy observation takes index ``O`` in the extended alphabet and never
    occurs at real steps.  Dummy steps carry zero reward, so every policy keeps
    its value on the real steps.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if L == 1:
        return pomdp
    pre = 2 * L - 2
    H, A, S, O = pomdp.horizon, pomdp.num_actions, pomdp.num_states, pomdp.num_observations
    trans = np.empty((pre + H, A, S, S))
    trans[:pre] = pomdp.init[None, None, None, :]
    trans[pre:] = pomdp.transitions
    emis = np.zeros((pre + H, S, O + 1))
    emis[:pre, :, O] = 1.0
    emis[pre:, :, :O] = pomdp.emissions
    rew = np.zeros((pre + H, O + 1))
    rew[pre:, :O] = pomdp.rewards
    return TabularPOMDP(pomdp.init, trans, emis, rew, prefix_length=pre,
                        name=f"{pomdp.name}+prefix{pre}", meta=dict(pomdp.meta))


def occupancy(pomdp: TabularPOMDP, h: int, action_dists: Sequence[np.ndarray]) -> np.ndarray:
    """State distribution at step ``h`` under state-independent action laws per step."""
    d = pomdp.init.copy()
    for t in range(h):
        d = np.einsum("s,a,ast->t", d, action_dists[t], pomdp.transitions[t])
    return d
