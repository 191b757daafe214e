import numpy as np

from lowrank_pomdp.core import TabularPOMDP


def random_pomdp(gen, S=3, A=2, O=3, H=4, sparse=False):
    trans = gen.dirichlet(np.ones(S), size=(H, A, S))
    emis = gen.dirichlet(np.ones(O), size=(H, S))
    if sparse:
        trans = np.where(trans < 0.15, 0.0, trans)
        trans /= trans.sum(axis=-1, keepdims=True)
    return TabularPOMDP(gen.dirichlet(np.ones(S)), trans, emis, gen.random((H, O)))


def chain_pomdp(S=3, H=4):
    """Deterministic cycle s -> s+1 with identity emissions and unit rewards."""
    trans = np.zeros((H, 1, S, S))
    for s in range(S):
        trans[:, 0, s, (s + 1) % S] = 1.0
    emis = np.broadcast_to(np.eye(S), (H, S, S))
    init = np.zeros(S)
    init[0] = 1.0
    return TabularPOMDP(init, trans, emis, np.ones((H, S)))
