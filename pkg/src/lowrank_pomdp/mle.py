"""Exact maximum-likelihood selection over finite model classes.

Two likelihoods are supported:

``decodable``
    ``P(o_{h+1} | z_h, a_h) = mu_h(o_{h+1}) . phi_h(z_h, a_h)`` with the
    candidate's own window features.
``observable``
    ``P(o_{h+1} | tau_h, a_h) = mu_h(o_{h+1}) . xi_h(tau_h, a_h)`` where
    ``xi = sum_s b(s) psi_h(s, a)`` and ``b`` is the candidate's belief
    filtered along the full stored prefix.

Scores are compared lexicographically: fewer floored probabilities first,
then the correctly rounded sum of log-probabilities; ties go to the lowest id.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .belief import (
    ApproxMDP,
    InconsistentHistoryError,
    approx_belief,
    build_approx_mdp,
    derive_mu as _derive_mu,
    filter_history,
    step_designs,
)
from .core import (
    LearnerView,
    LowRankFactorization,
    MemorySpace,
    TabularPOMDP,
    as_generator,
    window,
)
from .environments import Pocomblock, pocomblock_tables, reachable_pairs

PROB_FLOOR = 1e-12
MODES = ("decodable", "observable")


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown likelihood mode {mode!r}")


# ---------------------------------------------------------------------------
# Candidates


def derive_decodable_features(pomdp: TabularPOMDP, factors: LowRankFactorization, L: int,
                              space: MemorySpace | None = None) -> list[np.ndarray]:
    """Window features ``phi_h(z, a)`` for ``h = 0..H-2``, shape (Z_h, A, d).

    Windows that are reachable under the model and pin down a single latent
    state ``x`` get ``psi_h(x, a)``.  All other windows fall back to the
    approximated-belief average of ``psi_h``, and to a uniform belief when the
    window is impossible under the model.
    """
    if space is None:
        space = MemorySpace.for_pomdp(pomdp, L)
    reach = reachable_pairs(pomdp, L)
    designs = None
    S = pomdp.num_states
    out = []
    for h in range(pomdp.horizon - 1):
        states = space.states(h)
        beliefs = np.empty((len(states), S))
        for i, z in enumerate(states):
            decoded = reach[h].get(z)
            if decoded is not None and len(decoded) == 1:
                beliefs[i] = 0.0
                beliefs[i, next(iter(decoded))] = 1.0
                continue
            if designs is None:
                designs = step_designs(factors)
            try:
                beliefs[i] = approx_belief(pomdp, z, h, designs)
            except InconsistentHistoryError:
                beliefs[i] = 1.0 / S
        out.append(np.einsum("zs,sad->zad", beliefs, factors.psi[h]))
    return out


@dataclass(eq=False)
class ModelCandidate:
    """One hypothesis ``(Obs, omega, psi)`` with cached derived tables."""

    id: int
    pomdp: TabularPOMDP
    factors: LowRankFactorization
    label: str = ""
    _mu: dict = field(default_factory=dict, repr=False)
    _features: dict = field(default_factory=dict, repr=False)
    _approx: dict = field(default_factory=dict, repr=False)
    _beliefs: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.factors.check(self.pomdp, atol=1e-8)

    @property
    def rank(self) -> int:
        return self.factors.rank

    def mu(self, h: int) -> np.ndarray:
        if h not in self._mu:
            self._mu[h] = _derive_mu(self.factors, self.pomdp.emissions, h)
        return self._mu[h]

    def space(self, L: int) -> MemorySpace:
        key = ("space", L)
        if key not in self._features:
            self._features[key] = MemorySpace.for_pomdp(self.pomdp, L)
        return self._features[key]

    def decodable_features(self, L: int) -> list[np.ndarray]:
        if L not in self._features:
            self._features[L] = derive_decodable_features(self.pomdp, self.factors, L, self.space(L))
        return self._features[L]

    def decodable_kernel(self, L: int, h: int) -> np.ndarray:
        key = ("kernel", L, h)
        if key not in self._features:
            k = np.einsum("zad,od->zao", self.decodable_features(L)[h], self.mu(h))
            self._features[key] = np.clip(k, 0.0, None)
        return self._features[key]

    def approx_mdp(self, L: int) -> ApproxMDP:
        if L not in self._approx:
            self._approx[L] = build_approx_mdp(self.pomdp, self.factors, L, self.space(L))
        return self._approx[L]

    def belief(self, observations: tuple, actions: tuple) -> np.ndarray | None:
        """Filtered belief after a full real prefix, or ``None`` if impossible under this model."""
        key = (observations, actions)
        if key not in self._beliefs:
            try:
                self._beliefs[key] = filter_history(self.pomdp, observations, actions)
            except InconsistentHistoryError:
                self._beliefs[key] = None
        return self._beliefs[key]

    def probability(self, sample: "TransitionSample", mode: str, L: int) -> float:
        h, a, o_next = sample.h, sample.action, sample.next_observation
        if mode == "decodable":
            space = self.space(L)
            z = sample.window(L, space.dummy_obs, space.dummy_act)
            return float(self.decodable_kernel(L, h)[space.index(h, z), a, o_next])
        _check_mode(mode)
        b = self.belief(sample.observations[: h + 1], sample.actions[:h])
        if b is None:
            return 0.0
        xi = b @ self.factors.psi[h, :, a]
        return float(self.mu(h)[o_next] @ xi)


def derive_mu(candidate: ModelCandidate, h: int) -> np.ndarray:
    """(O, d) table ``sum_s' omega_h(s') Obs_{h+1}(o|s')`` of a candidate."""
    return candidate.mu(h)


def derive_lstep_features(candidate: ModelCandidate, L: int) -> ApproxMDP:
    """Window features ``(phi, mu)`` of a candidate via the approximated MDP."""
    return candidate.approx_mdp(L)


# ---------------------------------------------------------------------------
# Data


@dataclass(frozen=True)
class TransitionSample:
    """Transition at step ``h`` with its full real prefix.

    ``observations`` is ``o_0..o_{h+1}`` and ``actions`` is ``a_0..a_h``.
    """

    h: int
    observations: tuple
    actions: tuple

    def __post_init__(self):
        if len(self.observations) != self.h + 2 or len(self.actions) != self.h + 1:
            raise ValueError("sample prefix lengths do not match its step")

    @classmethod
    def from_view(cls, view: LearnerView, h: int) -> "TransitionSample":
        if h + 1 >= len(view.observations):
            raise ValueError(f"episode of length {len(view.observations)} has no transition at step {h}")
        return cls(h, tuple(view.observations[: h + 2]), tuple(view.actions[: h + 1]))

    @property
    def action(self) -> int:
        return self.actions[-1]

    @property
    def next_observation(self) -> int:
        return self.observations[-1]

    def window(self, L: int, dummy_obs: int, dummy_act: int):
        return window(self.observations, self.actions, self.h, L, dummy_obs, dummy_act)


class TransitionDataset:
    """Append-only per-step sample lists."""

    def __init__(self, horizon: int):
        self.horizon = horizon
        self._steps = [[] for _ in range(horizon)]

    def add(self, sample: TransitionSample) -> None:
        if not 0 <= sample.h < self.horizon - 1:
            raise ValueError(f"no transitions are recorded at step {sample.h}")
        self._steps[sample.h].append(sample)

    def extend(self, samples) -> None:
        for s in samples:
            self.add(s)

    def samples(self, h: int) -> list[TransitionSample]:
        return self._steps[h]

    def count(self, h: int) -> int:
        return len(self._steps[h])

    def __len__(self):
        return sum(len(s) for s in self._steps)


# ---------------------------------------------------------------------------
# Scoring


@dataclass(frozen=True, order=True)
class Score:
    """Sort key: larger is better."""

    neg_floored: int
    loglik: float

    @property
    def floored(self) -> int:
        return -self.neg_floored


def _log_term(p: float) -> tuple[float, bool]:
    if p < PROB_FLOOR:
        return math.log(PROB_FLOOR), True
    return math.log(p), False


def log_likelihood(candidate: ModelCandidate, dataset: TransitionDataset, h: int, mode: str,
                   L: int = 1) -> float:
    """Sum of ``log max(p, 1e-12)`` over the samples at step ``h``."""
    _check_mode(mode)
    samples = dataset.samples(h)
    if not samples:
        raise ValueError(f"no samples at step {h}")
    return math.fsum(_log_term(candidate.probability(s, mode, L))[0] for s in samples)


def score(candidate: ModelCandidate, samples, mode: str, L: int) -> Score:
    terms, floored = [], 0
    for s in samples:
        t, f = _log_term(candidate.probability(s, mode, L))
        terms.append(t)
        floored += f
    return Score(-floored, math.fsum(terms))


def _argmax(scores: list[Score], ids: list[int]) -> int:
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best] or (scores[i] == scores[best] and ids[i] < ids[best]):
            best = i
    return best


def mle_select(candidates: list[ModelCandidate], dataset: TransitionDataset, h: int, mode: str,
               L: int = 1) -> ModelCandidate:
    """Exact argmax of the step-``h`` likelihood; an empty step selects the lowest id."""
    _check_mode(mode)
    if not candidates:
        raise ValueError("model class is empty")
    samples = dataset.samples(h)
    scores = [score(c, samples, mode, L) for c in candidates]
    return candidates[_argmax(scores, [c.id for c in candidates])]


class LikelihoodTable:
    """Incremental per-candidate, per-step log-likelihoods for a growing dataset."""

    def __init__(self, candidates: list[ModelCandidate], horizon: int, mode: str, L: int):
        _check_mode(mode)
        if not candidates:
            raise ValueError("model class is empty")
        self.candidates = list(candidates)
        self.mode = mode
        self.L = L
        self._terms = [[[] for _ in range(horizon)] for _ in self.candidates]
        self._floored = np.zeros((len(self.candidates), horizon), dtype=np.int64)

    def add(self, sample: TransitionSample) -> None:
        for i, c in enumerate(self.candidates):
            t, f = _log_term(c.probability(sample, self.mode, self.L))
            self._terms[i][sample.h].append(t)
            self._floored[i, sample.h] += f

    def extend(self, samples) -> None:
        """Add many samples; decodable mode looks probabilities up in bulk."""
        samples = list(samples)
        if self.mode != "decodable":
            for s in samples:
                self.add(s)
            return
        by_step: dict[int, list] = {}
        for s in samples:
            by_step.setdefault(s.h, []).append(s)
        for h, group in sorted(by_step.items()):
            acts = np.array([s.action for s in group])
            nxt = np.array([s.next_observation for s in group])
            # Candidates share (O, A, L, H), hence one memory-state indexing.
            space = self.candidates[0].space(self.L)
            idx = np.array([space.index(h, s.window(self.L, space.dummy_obs, space.dummy_act))
                            for s in group])
            for i, c in enumerate(self.candidates):
                p = c.decodable_kernel(self.L, h)[idx, acts, nxt]
                low = p < PROB_FLOOR
                self._terms[i][h].extend(math.log(x) for x in np.where(low, PROB_FLOOR, p).tolist())
                self._floored[i, h] += int(low.sum())

    def scores(self, h: int) -> list[Score]:
        return [Score(-int(self._floored[i, h]), math.fsum(self._terms[i][h]))
                for i in range(len(self.candidates))]

    def select(self, h: int) -> ModelCandidate:
        return self.candidates[_argmax(self.scores(h), [c.id for c in self.candidates])]


# ---------------------------------------------------------------------------
# Model classes


def perturb_model(pomdp: TabularPOMDP, factors: LowRankFactorization, gen: np.random.Generator,
                  radius: float = 0.2) -> tuple[TabularPOMDP, LowRankFactorization]:
    """Mix ``psi`` rows, ``omega`` columns and emission rows with random laws at weight ``radius``."""
    H, S, A, d = factors.psi.shape
    O = pomdp.num_observations
    psi = (1 - radius) * factors.psi + radius * gen.dirichlet(np.ones(d), size=(H, S, A))
    noise_w = np.transpose(gen.dirichlet(np.ones(S), size=(H, d)), (0, 2, 1))
    omega = (1 - radius) * factors.omega + radius * noise_w
    emis = (1 - radius) * pomdp.emissions + radius * gen.dirichlet(np.ones(O), size=(H, S))
    new_factors = LowRankFactorization(omega, psi)
    trans = new_factors.transitions()
    trans = trans / trans.sum(axis=-1, keepdims=True)
    model = TabularPOMDP(pomdp.init, trans, emis, pomdp.rewards, name=f"{pomdp.name}-perturbed",
                         meta=dict(pomdp.meta))
    return model, new_factors


def _assemble(truth: tuple, others: list[tuple], gen: np.random.Generator) -> tuple[list[ModelCandidate], int]:
    n = len(others) + 1
    truth_id = int(gen.integers(n))
    entries = others[:truth_id] + [truth] + others[truth_id:]
    cands = [ModelCandidate(i, p, f, label) for i, (p, f, label) in enumerate(entries)]
    return cands, truth_id


def permuted_secrets(secrets: np.ndarray, num_actions: int, gen: np.random.Generator) -> np.ndarray:
    """Apply a fresh action permutation at every step, forcing a change at every step."""
    out = secrets.copy()
    for h in range(secrets.shape[0]):
        while True:
            perm = gen.permutation(num_actions)
            row = perm[secrets[h]]
            if np.any(row != secrets[h]):
                out[h] = row
                break
    return out


def build_pocomblock_class(instance: Pocomblock, rng, size: int = 16,
                           num_permuted: int = 8, radius: float = 0.2) -> tuple[list[ModelCandidate], int]:
    """Truth plus ``num_permuted`` secret-permuted locks and perturbed copies; returns (class, truth id)."""
    if size < 1 or num_permuted > size - 1:
        raise ValueError("class size must exceed the number of permuted candidates")
    gen = as_generator(rng)
    cfg = instance.config
    truth = (instance.pomdp, instance.factors, "truth")
    others = []
    for j in range(num_permuted):
        secrets = permuted_secrets(instance.secret_actions, cfg.num_actions, gen)
        init, factors, emis, rew = pocomblock_tables(cfg, secrets)
        p = TabularPOMDP(init, factors.transitions(), emis, rew, name="pocomblock", meta=dict(instance.pomdp.meta))
        others.append((p, factors, f"permuted-{j}"))
    for j in range(size - 1 - num_permuted):
        p, f = perturb_model(instance.pomdp, instance.factors, gen, radius)
        others.append((p, f, f"perturbed-{j}"))
    return _assemble(truth, others, gen)


def build_perturbed_class(pomdp: TabularPOMDP, factors: LowRankFactorization, rng, size: int = 16,
                          radius: float = 0.2) -> tuple[list[ModelCandidate], int]:
    """Truth plus ``size - 1`` perturbed copies; returns (class, truth id)."""
    if size < 1:
        raise ValueError("class size must be >= 1")
    gen = as_generator(rng)
    others = []
    for j in range(size - 1):
        p, f = perturb_model(pomdp, factors, gen, radius)
        others.append((p, f, f"perturbed-{j}"))
    return _assemble((pomdp, factors, "truth"), others, gen)
