import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lowrank_pomdp.core import LowRankFactorization, RandomStream, UniformPolicy, sample_episode
from lowrank_pomdp.environments import PocomblockConfig, make_pocomblock, make_random_decodable_pomdp
from lowrank_pomdp.mle import (
    PROB_FLOOR,
    LikelihoodTable,
    ModelCandidate,
    TransitionDataset,
    TransitionSample,
    build_perturbed_class,
    build_pocomblock_class,
    derive_mu,
    log_likelihood,
    mle_select,
    perturb_model,
    score,
)

from helpers import chain_pomdp, random_pomdp


def _samples(pomdp, n, seed, L=1):
    rs = RandomStream(seed)
    out = []
    for i in range(n):
        view = sample_episode(pomdp, UniformPolicy(pomdp.num_actions, L), rs.child(i)).view()
        out.extend(TransitionSample.from_view(view, h) for h in range(pomdp.horizon - 1))
    return out


def _dataset(pomdp, samples):
    ds = TransitionDataset(pomdp.horizon)
    ds.extend(samples)
    return ds


def test_deterministic_truth_has_zero_loglik():
    p = chain_pomdp(3, 4)
    c = ModelCandidate(0, p, LowRankFactorization.trivial(p))
    ds = _dataset(p, _samples(p, 20, 0))
    for mode in ("decodable", "observable"):
        for h in range(3):
            assert log_likelihood(c, ds, h, mode, 1) == 0.0


def test_single_sample_loglik_matches_hand_value():
    gen = np.random.default_rng(1)
    p = random_pomdp(gen, S=2, A=2, O=2, H=2)
    c = ModelCandidate(0, p, LowRankFactorization.trivial(p))
    s = TransitionSample(0, (1, 0), (1,))
    ds = _dataset(p, [s])
    # P(o_1 = 0 | o_0 = 1, a_0 = 1) from Bayes' rule on the raw tables.
    b0 = p.init * p.emissions[0][:, 1]
    b0 /= b0.sum()
    expected = math.log(b0 @ p.transitions[0, 1] @ p.emissions[1][:, 0])
    assert log_likelihood(c, ds, 0, "observable") == pytest.approx(expected, abs=1e-12)
    # With L = 1 the window is the whole prefix, so both modes agree.
    assert log_likelihood(c, ds, 0, "decodable", 1) == pytest.approx(expected, abs=1e-12)


def test_impossible_sample_is_floored():
    p = chain_pomdp(3, 4)
    c = ModelCandidate(0, p, LowRankFactorization.trivial(p))
    s = TransitionSample(0, (0, 2), (0,))
    sc = score(c, [s], "observable", 1)
    assert sc.floored == 1 and sc.loglik == pytest.approx(math.log(PROB_FLOOR))


def test_mle_prefers_truth_over_perturbed():
    for seed in range(3):
        inst = make_random_decodable_pomdp(3, 2, 3, 4, 2, RandomStream(seed))
        cands, truth = build_perturbed_class(inst.pomdp, inst.factors, RandomStream(seed).child(1), size=6)
        ds = _dataset(inst.pomdp, _samples(inst.pomdp, 600, 10 + seed, 2))
        for h in range(3):
            c = mle_select(cands, ds, h, "decodable", 2)
            assert c.id == truth
            assert mle_select(cands, ds, h, "observable").id == truth


def test_average_loglik_gap_tracks_kl():
    """Per-sample truth-minus-candidate gap converges to the conditional KL."""
    gen = np.random.default_rng(3)
    p = random_pomdp(gen, S=2, A=2, O=3, H=2)
    q, qf = perturb_model(p, LowRankFactorization.trivial(p), np.random.default_rng(4), 0.5)
    truth = ModelCandidate(0, p, LowRankFactorization.trivial(p))
    other = ModelCandidate(1, q, qf)
    # Exact expected gap under o_0 ~ p, a_0 uniform.
    kl = 0.0
    for o0, po0 in enumerate(p.first_observation_dist()):
        for a in range(2):
            tp = [truth.probability(TransitionSample(0, (o0, o1), (a,)), "observable", 1) for o1 in range(3)]
            tq = [other.probability(TransitionSample(0, (o0, o1), (a,)), "observable", 1) for o1 in range(3)]
            kl += po0 * 0.5 * sum(x * math.log(x / y) for x, y in zip(tp, tq) if x > 0)
    n = 20_000
    ds = _dataset(p, _samples(p, n, 5))
    gap = (log_likelihood(truth, ds, 0, "observable") - log_likelihood(other, ds, 0, "observable")) / n
    assert gap == pytest.approx(kl, abs=4 * 0.5 / math.sqrt(n) + 0.1 * kl)


def test_empty_and_singleton_classes():
    p = chain_pomdp(3, 4)
    f = LowRankFactorization.trivial(p)
    ds = TransitionDataset(4)
    assert mle_select([ModelCandidate(5, p, f)], ds, 0, "decodable", 1).id == 5
    cands = [ModelCandidate(i, p, f) for i in (3, 1, 2)]
    assert mle_select(cands, ds, 0, "decodable", 1).id == 1
    with pytest.raises(ValueError):
        mle_select([], ds, 0, "decodable", 1)
    with pytest.raises(ValueError):
        log_likelihood(cands[0], ds, 0, "decodable", 1)


def test_ties_go_to_lowest_id():
    p = chain_pomdp(3, 4)
    f = LowRankFactorization.trivial(p)
    cands = [ModelCandidate(i, p, f) for i in (4, 2, 7)]
    ds = _dataset(p, _samples(p, 5, 0))
    assert mle_select(cands, ds, 1, "observable").id == 2
    table = LikelihoodTable(cands, 4, "observable", 1)
    table.extend(ds.samples(1))
    assert table.select(1).id == 2


@given(st.integers(0, 2**16))
def test_selection_ignores_sample_order(seed):
    inst = make_random_decodable_pomdp(3, 2, 3, 3, 1, RandomStream(1))
    cands, _ = build_perturbed_class(inst.pomdp, inst.factors, RandomStream(2), size=4, radius=0.05)
    samples = _samples(inst.pomdp, 30, 3)
    order = np.random.default_rng(seed).permutation(len(samples))
    for h in range(2):
        a = mle_select(cands, _dataset(inst.pomdp, samples), h, "decodable", 1)
        b = mle_select(cands, _dataset(inst.pomdp, [samples[i] for i in order]), h, "decodable", 1)
        assert a.id == b.id


def test_bulk_and_incremental_tables_agree():
    inst = make_random_decodable_pomdp(3, 2, 3, 4, 2, RandomStream(6))
    cands, _ = build_perturbed_class(inst.pomdp, inst.factors, RandomStream(7), size=5)
    samples = _samples(inst.pomdp, 100, 8, 2)
    bulk, inc = LikelihoodTable(cands, 4, "decodable", 2), LikelihoodTable(cands, 4, "decodable", 2)
    bulk.extend(samples)
    for s in samples:
        inc.add(s)
    for h in range(3):
        assert bulk.scores(h) == inc.scores(h)
        assert bulk.scores(h) == [score(c, [s for s in samples if s.h == h], "decodable", 2) for c in cands]


def test_derive_mu_examples():
    p = chain_pomdp(3, 4)
    c = ModelCandidate(0, p, LowRankFactorization.trivial(p))
    # Trivial factors on identity emissions: mu is the identity.
    assert np.array_equal(derive_mu(c, 0), np.eye(3))
    gen = np.random.default_rng(0)
    q = random_pomdp(gen, S=3, A=2, O=4, H=3)
    cq = ModelCandidate(0, q, LowRankFactorization.trivial(q))
    for h in range(2):
        mu = derive_mu(cq, h)
        phi = cq.factors.psi[h]
        assert np.allclose(np.einsum("sad,od->sao", phi, mu),
                           np.einsum("ast,to->sao", q.transitions[h], q.emissions[h + 1]), atol=1e-14)


def test_dataset_rejects_last_step_and_bad_prefix():
    ds = TransitionDataset(3)
    with pytest.raises(ValueError):
        ds.add(TransitionSample(2, (0, 0, 0, 0), (0, 0, 0)))
    with pytest.raises(ValueError):
        TransitionSample(1, (0, 0), (0,))


def test_pocomblock_class_layout():
    inst = make_pocomblock(PocomblockConfig(horizon=4), RandomStream(0))
    cands, truth = build_pocomblock_class(inst, RandomStream(1))
    assert len(cands) == 16 and [c.id for c in cands] == list(range(16))
    assert cands[truth].label == "truth" and cands[truth].pomdp is inst.pomdp
    labels = [c.label for c in cands]
    assert sum(l.startswith("permuted") for l in labels) == 8
    assert sum(l.startswith("perturbed") for l in labels) == 7
    for c in cands:
        if c.label.startswith("permuted"):
            assert not np.allclose(c.pomdp.transitions, inst.pomdp.transitions)
