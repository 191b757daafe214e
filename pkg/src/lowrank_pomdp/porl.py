"""Outer exploration loops for decodable and gamma-observable low-rank POMDPs.

Every iteration collects, for each step ``h``, one episode from
``pi o_L U`` into ``D_h`` and one from ``pi o_{2L} U`` into ``D'_h``, picks a
model per step by maximum likelihood on the pooled samples, builds elliptical
bonuses from the ``D_h`` features, and plans greedily on rewards plus bonus.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    LMemoryPolicy,
    MemorySpace,
    MixturePolicy,
    RandomStream,
    TabularPOMDP,
    rollin_mix,
    sample_episode,
    uniform_mixture,
)
from .belief import estimate_observability
from .evaluation import CurveRow, LearningCurve, lmemory_value, mc_value
from .exploration import CovarianceAccumulator, ScheduleConfig, alpha_lambda_schedule, bonus_table
from .mle import LikelihoodTable, ModelCandidate, TransitionDataset, TransitionSample
from .planner import PlannerInput, lsvi_llr, observation_rewards


def lstep_memory_from_gamma(gamma: float, d: int, eps1: float, c: float = 1.0) -> int:
    """``L = ceil(c * gamma**-4 * log(d / eps1))``, at least 1."""
    if not 0 < gamma <= 1 or not eps1 > 0:
        raise ValueError("need 0 < gamma <= 1 and eps1 > 0")
    return max(1, math.ceil(c * gamma**-4 * math.log(d / eps1)))


@dataclass(frozen=True)
class RunConfig:
    """Driver settings.

    ``L`` may be omitted in observable mode, in which case it is derived from
    ``gamma`` and ``eps1``.  ``support="dataset"`` restricts planning backups
    to next observations seen in the data at that step.
    """

    mode: str = "decodable"
    L: int | None = 2
    K: int = 200
    batch: int = 1
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    support: str = "full"
    eval_episodes: int = 200
    eval_exact: bool = True
    seed: int = 0
    gamma: float | None = None
    eps1: float | None = None
    c_memory: float = 1.0
    gamma_min: float | None = None
    clip: float | None = None
    record_wallclock: bool = False

    def __post_init__(self):
        if self.mode not in ("decodable", "observable"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.K < 1 or self.batch < 1 or self.eval_episodes < 0:
            raise ValueError("need K >= 1, batch >= 1 and eval_episodes >= 0")
        if self.support not in ("full", "dataset"):
            raise ValueError(f"unknown support mode {self.support!r}")
        if self.L is None and (self.mode != "observable" or self.gamma is None or self.eps1 is None):
            raise ValueError("L is required unless observable mode gives gamma and eps1")
        if self.L is not None and self.L < 1:
            raise ValueError("L must be >= 1")

    def memory_length(self, d: int) -> int:
        if self.L is not None:
            return self.L
        return lstep_memory_from_gamma(self.gamma, d, self.eps1, self.c_memory)


@dataclass
class IterationRecord:
    k: int
    dataset_sizes: list
    selected: list
    alpha: float
    ridge: float
    bonus_max: float
    bonus_mean: float
    mc_return: float | None
    ci: tuple | None
    exact_return: float | None
    mixture_exact: float | None
    wallclock_s: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class RunResult:
    policies: list
    mixture: MixturePolicy
    curve: LearningCurve
    records: list
    exact_values: list
    L: int

    @property
    def mixture_value(self) -> float | None:
        """Exact value of the mixture over ``pi^0 .. pi^{K-1}``."""
        vals = self.exact_values[:-1]
        if not vals or any(v is None for v in vals):
            return None
        return math.fsum(vals) / len(vals)


class _StepCovariance:
    """``Sigma_h`` over the executed (z, a) pairs in ``D_h`` under the selected model."""

    def __init__(self):
        self.acc = None
        self.key = None
        self.absorbed = 0

    def update(self, key, ridge: float, phi: np.ndarray, pairs: list) -> CovarianceAccumulator:
        if self.acc is None or key != self.key or ridge != self.acc.ridge:
            self.acc = CovarianceAccumulator(phi.shape[2], ridge)
            self.key = key
            self.absorbed = 0
        for zi, a in pairs[self.absorbed:]:
            self.acc.accumulate(phi[zi, a])
        self.absorbed = len(pairs)
        return self.acc


def _run(env: TabularPOMDP, candidates: list[ModelCandidate], cfg: RunConfig, rng: RandomStream,
         mode: str) -> RunResult:
    if not candidates:
        raise ValueError("model class is empty")
    stream = rng if isinstance(rng, RandomStream) else RandomStream(cfg.seed if rng is None else int(rng))
    data_rs, eval_rs = stream.child(0), stream.child(1)
    d = max(c.rank for c in candidates)
    L = cfg.memory_length(d)
    H, A = env.horizon, env.num_actions
    space = MemorySpace.for_pomdp(env, L)
    base_rewards = observation_rewards(space, env.rewards)
    table = LikelihoodTable(candidates, H, mode, L)
    D, Dp = TransitionDataset(H), TransitionDataset(H)
    pairs = [[] for _ in range(H - 1)]
    seen = [set() for _ in range(H - 1)]
    covs = [_StepCovariance() for _ in range(H - 1)]
    log_class = math.log(len(candidates))
    sched = cfg.schedule

    pi = LMemoryPolicy.uniform(space)
    policies = [pi]
    curve = LearningCurve()
    records = []
    exact_values = []
    t0 = time.perf_counter()

    def evaluate(k, policy):
        mc, ci = None, None
        if cfg.eval_episodes > 0:
            mc, ci = mc_value(env, policy, cfg.eval_episodes, eval_rs.child(k))
        ex = lmemory_value(env, policy) if cfg.eval_exact else None
        exact_values.append(ex)
        return mc, ci, ex

    mc, ci, ex = evaluate(0, pi)
    if mc is not None:
        wall = time.perf_counter() - t0 if cfg.record_wallclock else 0.0
        curve.append(CurveRow(0, mc, ci[0], ci[1], wall))

    for k in range(1, cfg.K + 1):
        new = []
        for h in range(H - 1):
            for b in range(cfg.batch):
                for buf, n, dest in ((0, L, D), (1, 2 * L, Dp)):
                    view = sample_episode(env, rollin_mix(pi, n, h), data_rs.child(k, h, buf, b)).view()
                    s = TransitionSample.from_view(view, h)
                    dest.add(s)
                    new.append(s)
                    seen[h].add(s.next_observation)
                    if buf == 0:
                        z = s.window(L, space.dummy_obs, space.dummy_act)
                        pairs[h].append((space.index(h, z), s.action))
        table.extend(new)
        selected = [table.select(h) for h in range(H - 1)]
        alpha, ridge = alpha_lambda_schedule(k, d, log_class, A, L, sched.delta, sched)

        rewards = [r.copy() for r in base_rewards]
        phis, mus = [], []
        bmax, bsum, bcount = 0.0, 0.0, 0
        for h, cand in enumerate(selected):
            if mode == "decodable":
                phi, mu = cand.decodable_features(L)[h], cand.mu(h)
            else:
                am = cand.approx_mdp(L)
                phi, mu = am.phi[h], am.mu[h]
            phis.append(phi)
            mus.append(mu)
            acc = covs[h].update(cand.id, ridge, phi, pairs[h])
            bon = bonus_table(phi, acc, alpha, sched.cap)
            rewards[h] = rewards[h] + bon
            bmax = max(bmax, float(bon.max()))
            bsum += float(bon.sum())
            bcount += bon.size
        support = None
        if cfg.support == "dataset":
            support = [np.array(sorted(seen[h]), dtype=np.int64) for h in range(H - 1)]
        out = lsvi_llr(PlannerInput(space, rewards, phis, mus, support, cfg.clip))
        pi = out.policy
        policies.append(pi)

        mc, ci, ex = evaluate(k, pi)
        wall = time.perf_counter() - t0 if cfg.record_wallclock else 0.0
        if mc is not None:
            curve.append(CurveRow(k, mc, ci[0], ci[1], wall))
        mix = None
        if cfg.eval_exact:
            mix = math.fsum(exact_values[:k]) / k
        records.append(IterationRecord(
            k=k,
            dataset_sizes=[[D.count(h), Dp.count(h)] for h in range(H - 1)],
            selected=[c.id for c in selected],
            alpha=alpha, ridge=ridge,
            bonus_max=bmax, bonus_mean=bsum / max(bcount, 1),
            mc_return=mc, ci=None if ci is None else tuple(ci),
            exact_return=ex, mixture_exact=mix, wallclock_s=wall,
        ))
    return RunResult(policies, uniform_mixture(policies[:-1]), curve, records, exact_values, L)


def porl_decodable(env: TabularPOMDP, candidates: list[ModelCandidate], cfg: RunConfig, rng=None) -> RunResult:
    """Exploration loop with window-feature likelihoods; ``env`` should be L-step decodable."""
    if cfg.mode != "decodable":
        raise ValueError("porl_decodable needs cfg.mode='decodable'")
    return _run(env, candidates, cfg, rng, "decodable")


def porl_observable(env: TabularPOMDP, candidates: list[ModelCandidate], cfg: RunConfig, rng=None,
                    probes: int = 2000) -> RunResult:
    """Exploration loop with filtered-belief likelihoods and approximated-MDP features."""
    if cfg.mode != "observable":
        raise ValueError("porl_observable needs cfg.mode='observable'")
    if cfg.gamma_min is not None:
        gen = RandomStream(cfg.seed, (7,)).generator
        gamma_hat = min(estimate_observability(env.emissions[h], max(probes, env.num_states**2), gen)
                        for h in range(env.horizon))
        if gamma_hat < cfg.gamma_min:
            raise ValueError(f"observability estimate {gamma_hat:.3f} is below {cfg.gamma_min}")
    return _run(env, candidates, cfg, rng, "observable")
