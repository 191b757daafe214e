"""End-to-end acceptance suite; every test prints one PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from lowrank_pomdp.belief import (
    belief_update,
    build_approx_mdp,
    estimate_observability,
    incorporate_observation,
    one_step_gap,
    predict,
)
from lowrank_pomdp.core import LMemoryPolicy, RandomStream, UniformPolicy, sample_episode
from lowrank_pomdp.environments import (
    PocomblockConfig,
    RichObservationEncoder,
    hadamard,
    make_pocomblock,
    make_random_decodable_pomdp,
    make_random_lowrank_pomdp,
)
from lowrank_pomdp.evaluation import lmemory_value, optimal_lmemory_value
from lowrank_pomdp.exploration import CovarianceAccumulator, bonus_table
from lowrank_pomdp.harness import ExperimentConfig, build_environment, run_experiment
from lowrank_pomdp.mle import (
    LikelihoodTable,
    ModelCandidate,
    TransitionSample,
    build_perturbed_class,
    build_pocomblock_class,
)
from lowrank_pomdp.planner import PlannerInput, lsvi_llr, observation_rewards
from lowrank_pomdp.porl import RunConfig, porl_decodable, porl_observable

ABLATION_SEEDS = (1, 12, 123, 1234, 12345)


def test_a1_belief_suite(report):
    t0 = time.perf_counter()
    worst_sum, worst_split, negative = 0.0, 0.0, False
    for seed in range(1000):
        gen = np.random.default_rng(seed)
        S, A, O = (int(x) for x in gen.integers(2, 7, size=3))
        P = gen.dirichlet(np.ones(S), size=(A, S))
        E = gen.dirichlet(np.ones(O), size=S)
        b = gen.dirichlet(np.ones(S))
        for _ in range(5):
            a = int(gen.integers(A))
            o = int(gen.choice(O, p=predict(b, P[a]) @ E))
            u = belief_update(b, a, o, P, E)
            v = incorporate_observation(predict(b, P[a]), o, E)
            c = incorporate_observation(b, o, E)
            negative |= bool(np.any(u < 0) or np.any(c < 0))
            worst_sum = max(worst_sum, abs(u.sum() - 1), abs(c.sum() - 1))
            worst_split = max(worst_split, float(np.max(np.abs(u - v))))
            b = u
    dt = time.perf_counter() - t0
    ok = report("A1", worst_sum <= 1e-10 and worst_split <= 1e-12 and not negative and dt < 10,
                f"max |sum-1| {worst_sum:.1e}, max |U - B.predict| {worst_split:.1e}, "
                f"negative={negative}, {dt:.1f}s")
    assert ok


def test_a2_planner_matches_oracle(report):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        inst = make_random_decodable_pomdp(3, 2, 3, 4, 2, RandomStream(seed))
        p = inst.pomdp
        c = ModelCandidate(0, p, inst.factors)
        sp = c.space(2)
        out = lsvi_llr(PlannerInput(sp, observation_rewards(sp, p.rewards), c.decodable_features(2)[:3],
                                    [c.mu(h) for h in range(3)]))
        opt = optimal_lmemory_value(p, 2, "enumerate").value
        worst = max(worst, abs(out.initial_value(p.first_observation_dist()) - opt))
    dt = time.perf_counter() - t0
    assert report("A2", worst <= 1e-8 and dt < 60, f"max |V1 - optimum| {worst:.1e} over 20 instances, {dt:.1f}s")


def test_a3_mle_consistency(report):
    t0 = time.perf_counter()
    hits = 0
    for trial in range(20):
        rs = RandomStream(trial)
        inst = make_pocomblock(PocomblockConfig(horizon=4, num_actions=4), rs.child(0))
        cands, truth = build_pocomblock_class(inst, rs.child(1))
        pi = UniformPolicy(4, 2)
        gen = rs.child(2).generator
        samples = []
        for _ in range(5000):
            view = sample_episode(inst.pomdp, pi, gen).view()
            samples.extend(TransitionSample.from_view(view, h) for h in range(3))
        table = LikelihoodTable(cands, 4, "decodable", 2)
        table.extend(samples)
        hits += all(table.select(h).id == truth for h in range(3))
    dt = time.perf_counter() - t0
    assert report("A3", hits >= 19 and dt < 120, f"truth selected at every step in {hits}/20 trials, {dt:.1f}s")


def test_a4_bonus_suite(report):
    t0 = time.perf_counter()
    d, ridge = 8, 1.0
    in_range, monotone, potential = True, True, True
    worst_inv = 0.0
    for seed in range(500):
        gen = np.random.default_rng(seed)
        acc = CovarianceAccumulator(d, ridge)
        probe = gen.normal(size=(4, d))
        prev = bonus_table(probe, acc, 3.0)
        lhs = 0.0
        base = acc.logdet()
        for _ in range(int(gen.integers(5, 40))):
            x = gen.normal(size=d)
            x /= max(1.0, np.linalg.norm(x))
            lhs += acc.quadratic(x)
            acc.accumulate(x)
            cur = bonus_table(probe, acc, 3.0)
            in_range &= bool(np.all((cur >= 0) & (cur <= 2)))
            monotone &= bool(np.all(cur <= prev + 1e-12))
            prev = cur
        potential &= lhs <= 2 * acc.logdet() - 2 * base
        worst_inv = max(worst_inv, float(np.max(np.abs(acc.inverse - np.linalg.inv(acc.sigma)))))
    dt = time.perf_counter() - t0
    ok = in_range and monotone and potential and worst_inv <= 1e-8
    assert report("A4", ok, f"range={in_range}, monotone={monotone}, potential={potential}, "
                            f"max inverse error {worst_inv:.1e}, {dt:.1f}s")


def a5_instance(seed: int):
    return make_random_lowrank_pomdp(3, 2, 4, 4, 2, RandomStream(seed), gamma_target=0.8)


def test_a5_approximated_mdp_fidelity(report):
    t0 = time.perf_counter()
    gammas, monotone, bound_ok, lines = [], True, True, []
    for seed in range(3):
        inst = a5_instance(seed)
        p = inst.pomdp
        gammas.append(min(estimate_observability(p.emissions[h], 2000, RandomStream(seed, (9,)).generator)
                          for h in range(p.horizon)))
        eps = []
        for L in (1, 2, 3):
            m = build_approx_mdp(p, inst.factors, L)
            eps.append(float(one_step_gap(p, m, LMemoryPolicy.uniform(m.space)).max()))
            gen = np.random.default_rng(100 * seed + L)
            for _ in range(10):
                pi = LMemoryPolicy.random_deterministic(m.space, gen)
                e1 = float(one_step_gap(p, m, pi).max())
                gap = abs(lmemory_value(p, pi) - m.policy_value(pi, p.rewards, p.first_observation_dist()))
                bound_ok &= gap <= p.horizon**2 * e1 / 2 + 1e-6
        monotone &= all(b <= a for a, b in zip(eps, eps[1:]))
        lines.append("/".join(f"{e:.1e}" for e in eps))
    dt = time.perf_counter() - t0
    ok = min(gammas) >= 0.8 and monotone and bound_ok and dt < 300
    assert report("A5", ok, f"gamma_hat min {min(gammas):.3f}, eps1(L=1/2/3) {', '.join(lines)}, "
                            f"value bound {'holds' if bound_ok else 'violated'}, {dt:.1f}s")


@pytest.fixture(scope="module")
def a6_run(tmp_path_factory):
    t0 = time.perf_counter()
    out = run_experiment(ExperimentConfig.from_dict({}), tmp_path_factory.mktemp("a6"))
    return out, time.perf_counter() - t0


def test_a6_end_to_end_learning(a6_run, report):
    out, dt = a6_run
    summary = json.loads((out / "summary.json").read_text())
    value = summary["mixture_value"]
    ok = value >= 0.9 and summary["optimal_lmemory_value"] == 1.0 and dt < 300
    assert report("A6", ok, f"mixture return {value:.4f} (optimum {summary['optimal_lmemory_value']}), {dt:.1f}s")


def test_a6_bonus_ablation(report):
    t0 = time.perf_counter()
    values = []
    for seed in ABLATION_SEEDS:
        cfg = ExperimentConfig.from_dict({"sched.beta": 0.0, "harness.seed": seed, "eval.episodes": 0,
                                          "eval.optimal": False})
        stream = RandomStream(seed)
        pomdp, _, cands, _ = build_environment(cfg, stream)
        values.append(porl_decodable(pomdp, cands, cfg.run_config(), stream.child(2)).mixture_value)
    fails = sum(v < 0.9 for v in values)
    dt = time.perf_counter() - t0
    ok = fails >= 4 and dt < 300
    assert report("A6-ablation", ok, f"beta=0 mixture returns {', '.join(f'{v:.3f}' for v in values)}; "
                                     f"{fails}/5 below 0.9 (need >= 4), {dt:.1f}s")


def test_a7_observable_pipeline(report):
    t0 = time.perf_counter()
    gaps = []
    for seed in range(3):
        inst = a5_instance(seed)
        cands, _ = build_perturbed_class(inst.pomdp, inst.factors, RandomStream(seed).child(1))
        cfg = RunConfig(mode="observable", L=2, K=300, eval_episodes=0)
        res = porl_observable(inst.pomdp, cands, cfg, RandomStream(seed).child(2))
        opt = optimal_lmemory_value(inst.pomdp, 2, "enumerate").value
        gaps.append(opt - res.exact_values[-1])
    hits = sum(g <= 0.05 for g in gaps)
    dt = time.perf_counter() - t0
    assert report("A7", hits >= 2 and dt < 600,
                  f"gap to optimal 2-memory value {', '.join(f'{g:.3f}' for g in gaps)}; {hits}/3 within 0.05, "
                  f"{dt:.1f}s")


def test_a8_environment_fidelity(report):
    orth = all(np.array_equal(hadamard(n) @ hadamard(n).T, n * np.eye(n, dtype=int)) for n in (1, 2, 4, 8, 16))
    clean = RichObservationEncoder(horizon=7, noise_std=0.0)
    round_trip = all(clean.decode_argmax(clean.encode(s, h, None)) == (clean.symbol(s, h), h)
                     for h in range(7) for s in range(4))
    enc = RichObservationEncoder(horizon=7, noise_std=0.1)
    gen = np.random.default_rng(0)
    errors = 0
    for i in range(10_000):
        s, h = i % 4, (i // 4) % 7
        errors += enc.decode_nearest(enc.encode(s, h, gen), h) != enc.symbol(s, h)
    rate = errors / 10_000
    assert report("A8", orth and round_trip and rate < 0.01,
                  f"hadamard orthogonal={orth}, noiseless round trip={round_trip}, noisy decode error {rate:.2%}")


def test_a9_determinism(a6_run, tmp_path, report):
    out, _ = a6_run
    manifest = json.loads((out / "manifest.json").read_text())
    again = run_experiment(ExperimentConfig.from_dict(manifest["config"]), tmp_path / "again")
    same = (again / "curve.csv").read_bytes() == (out / "curve.csv").read_bytes()
    assert report("A9", same, f"curve.csv byte-identical on rerun: {same}")
