import numpy as np
import pytest
from hypothesis import given, strategies as st

from lowrank_pomdp.core import (
    CapExceededError,
    _draw,
    LMemoryPolicy,
    LowRankFactorization,
    MemorySpace,
    MemoryState,
    RandomStream,
    TabularPOMDP,
    UniformPolicy,
    advance_memory,
    enumerate_memory_states,
    extend_pomdp,
    initial_memory,
    rollin_mix,
    sample_episode,
    window,
)

from helpers import chain_pomdp, random_pomdp


def test_pomdp_rejects_non_stochastic_rows():
    gen = np.random.default_rng(0)
    p = random_pomdp(gen)
    bad = np.array(p.transitions)
    bad[0, 0, 0, 0] += 1e-9
    with pytest.raises(ValueError, match="sum to 1"):
        TabularPOMDP(p.init, bad, p.emissions, p.rewards)
    with pytest.raises(ValueError, match="rewards"):
        TabularPOMDP(p.init, p.transitions, p.emissions, p.rewards + 1.0)


def test_trivial_factorization_reconstructs_kernel():
    p = random_pomdp(np.random.default_rng(1))
    f = LowRankFactorization.trivial(p)
    f.check(p)
    assert f.rank == p.num_states


def test_advance_memory_slides_window():
    z = MemoryState((1, 2), (0,))
    assert advance_memory(z, 3, 4) == MemoryState((2, 4), (3,))
    assert advance_memory(MemoryState((1,), ()), 1, 2) == MemoryState((2,), ())


def test_advance_memory_leaves_dummy_prefix_with_correct_lengths():
    O, A = 3, 2
    z = initial_memory(3, 1, O, A)
    assert z == MemoryState((O, O, 1), (A, A))
    z = advance_memory(z, 0, 2)
    assert z == MemoryState((O, 1, 2), (A, 0))
    assert len(z.observations) == 3 and len(z.actions) == 2


def test_advance_memory_rejects_out_of_range():
    with pytest.raises(IndexError):
        advance_memory(MemoryState((0, 1), (0,)), 5, 0, num_actions=2, num_observations=2)


def test_enumeration_counts_and_order():
    assert len(enumerate_memory_states(3, 10, 2, 5)) == 90
    assert len(enumerate_memory_states(4, 3, 1, 2)) == 4
    states = enumerate_memory_states(2, 2, 2, 3)
    # Lexicographic in chronological order o, a, o.
    keys = [(z.observations[0], z.actions[0], z.observations[1]) for z in states]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)
    assert states == enumerate_memory_states(2, 2, 2, 3)
    early = enumerate_memory_states(3, 2, 3, 0)
    assert all(z.observations[:2] == (3, 3) for z in early) and len(early) == 3


def test_enumeration_cap():
    with pytest.raises(CapExceededError):
        enumerate_memory_states(10, 10, 4, 5, cap=1000)


@given(st.integers(0, 2**32), st.integers(1, 3))
def test_window_consistency_under_replay(seed, L):
    gen = np.random.default_rng(seed)
    p = random_pomdp(gen, H=5)
    traj = sample_episode(p, UniformPolicy(p.num_actions, L), gen)
    O, A = p.num_observations, p.num_actions
    z = initial_memory(L, traj.observations[0], O, A)
    for h in range(1, p.horizon):
        z = advance_memory(z, traj.actions[h - 1], traj.observations[h])
        assert z == window(traj.observations, traj.actions, h, L, O, A)


def test_deterministic_chain_collects_full_reward():
    p = chain_pomdp(H=5)
    t = sample_episode(p, UniformPolicy(1), RandomStream(3))
    assert t.total_reward == 5.0
    assert t.observations == (0, 1, 2, 0, 1)


def test_seed_replay_is_bit_identical():
    p = random_pomdp(np.random.default_rng(2))
    a = sample_episode(p, UniformPolicy(2, 2), RandomStream(9, (1, 2)))
    b = sample_episode(p, UniformPolicy(2, 2), RandomStream(9).child(1, 2))
    assert a.to_lines() == b.to_lines()


def test_child_streams_depend_only_on_key():
    a = RandomStream(5).child(3).generator.random(4)
    s = RandomStream(5)
    s.child(0).generator.random(100)
    assert np.array_equal(a, s.child(3).generator.random(4))


def test_learner_view_hides_states():
    p = random_pomdp(np.random.default_rng(4))
    view = sample_episode(p, UniformPolicy(2), RandomStream(0)).view()
    assert not hasattr(view, "states")


def test_empirical_transitions_match_kernel():
    gen = np.random.default_rng(7)
    p = random_pomdp(gen, S=3, A=2, O=2, H=3)
    counts = np.zeros((2, 3, 3))
    rs = np.random.default_rng(8)
    for _ in range(100_000):
        t = sample_episode(p, UniformPolicy(2), rs)
        counts[t.actions[0], t.states[0], t.states[1]] += 1
    tot = counts.sum(axis=2, keepdims=True)
    se = np.sqrt(p.transitions[0] * (1 - p.transitions[0]) / tot)
    assert np.all(np.abs(counts / tot - p.transitions[0]) <= 3 * se + 1e-12)


def test_occupancy_matches_forward_dp():
    gen = np.random.default_rng(11)
    p = random_pomdp(gen, S=4, A=3, O=3, H=4)
    rs = np.random.default_rng(12)
    n = 100_000
    counts = np.zeros((4, 3, 4))
    for _ in range(n):
        t = sample_episode(p, UniformPolicy(3), rs)
        counts[t.states[2], t.actions[2], t.states[3]] += 1
    d = p.init
    for h in range(2):
        d = np.einsum("s,ast->t", d, p.transitions[h]) / 3
    exact = d[:, None, None] / 3 * p.transitions[2].transpose(1, 0, 2)
    assert 0.5 * np.abs(counts / n - exact).sum() < 0.02


def test_rollin_mix_switches_to_uniform():
    p = random_pomdp(np.random.default_rng(3), H=5)
    space = MemorySpace.for_pomdp(p, 2)
    pi = LMemoryPolicy(space, [np.ones(space.size(h), dtype=int) for h in range(5)])
    assert all(rollin_mix(pi, 0, 4)._uses_pi(h) for h in range(5))
    mixed = rollin_mix(pi, 2, 4)
    t = sample_episode(p, mixed, RandomStream(21))
    assert t.actions[:3] == (1, 1, 1)
    # Direct two-phase sampler with the same stream: same draws consumed in the same order.
    gen = RandomStream(21).generator
    s = _draw(p.init, gen)
    acts = []
    for h in range(5):
        _draw(p.emissions[h, s], gen)
        a = 1 if h <= 2 else int(gen.integers(2))
        acts.append(a)
        if h < 4:
            s = _draw(p.transitions[h, a, s], gen)
    assert tuple(acts) == t.actions
    full = rollin_mix(pi, 5, 4)
    assert not any(full._uses_pi(h) for h in range(5))


def test_extend_pomdp_prefix():
    p = random_pomdp(np.random.default_rng(5))
    assert extend_pomdp(p, 1) is p
    e = extend_pomdp(p, 2)
    assert e.horizon == p.horizon + 2 and e.prefix_length == 2
    assert e.num_observations == p.num_observations + 1
    assert np.all(e.rewards[:2] == 0)
    rs = np.random.default_rng(6)
    counts = np.zeros(p.num_states)
    n = 100_000
    pi = UniformPolicy(p.num_actions)
    for _ in range(n):
        counts[sample_episode(e, pi, rs).states[2]] += 1
    assert 0.5 * np.abs(counts / n - p.init).sum() < 0.01


def test_extend_pomdp_keeps_policy_values():
    from lowrank_pomdp.evaluation import exact_value

    p = random_pomdp(np.random.default_rng(15), S=2, A=2, O=2, H=3)
    e = extend_pomdp(p, 2)
    assert exact_value(e, UniformPolicy(2)) == pytest.approx(exact_value(p, UniformPolicy(2)), abs=1e-12)


def test_lmemory_policy_validation():
    space = MemorySpace(2, 2, 1, 2)
    with pytest.raises(ValueError):
        LMemoryPolicy(space, [np.array([0, 2]), np.array([0, 0])])
    with pytest.raises(ValueError):
        LMemoryPolicy(space, [np.array([[0.5, 0.6], [1, 0]]), np.array([0, 0])])
