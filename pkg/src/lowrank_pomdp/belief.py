"""Belief filtering, G-optimal design and the memory-window approximation of a POMDP.

Beliefs are plain probability vectors over latent states.  The approximated
MDP replaces the full-history belief by a belief filtered over the last L
steps only, started from a fixed prior built from a G-optimal design over the
transition features ``psi_h(s, a)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_ENUMERATION_CAP,
    LowRankFactorization,
    MemorySpace,
    MemoryState,
    Policy,
    TabularPOMDP,
    as_generator,
    window,
)

BELIEF_ATOL = 1e-10
CLAMP_LIMIT = 1e-8


class InconsistentHistoryError(ValueError):
    """An observation has zero probability under the predicted belief."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class NumericalError(RuntimeError):
    """A numerical tolerance documented by the package was violated."""


def predict(b: np.ndarray, transition: np.ndarray) -> np.ndarray:
    """Push a belief through one action's (S, S) transition matrix."""
    return b @ transition


def incorporate_observation(b: np.ndarray, o: int, emission: np.ndarray) -> np.ndarray:
    """Bayes step ``b'(s) ∝ Obs(o|s) b(s)`` for an (S, O) emission matrix."""
    w = emission[:, o] * b
    z = w.sum()
    if not z > 0:
        raise InconsistentHistoryError(f"observation {o} has zero probability under the belief")
    return w / z


def belief_update(b: np.ndarray, a: int, o: int, transitions: np.ndarray,
                  emission_next: np.ndarray) -> np.ndarray:
    """One filtering step: predict with ``transitions[a]`` (shape (A, S, S)), then observe ``o``."""
    return incorporate_observation(predict(b, transitions[a]), o, emission_next)


def filter_history(pomdp: TabularPOMDP, observations, actions, prior: np.ndarray | None = None,
                   start: int = 0) -> np.ndarray:
    """Belief over ``s_{start+len(observations)-1}`` after the given history.

    ``actions[t]`` is played between ``observations[t]`` and ``observations[t+1]``.
    """
    b = pomdp.init if prior is None else prior
    for t, o in enumerate(observations):
        h = start + t
        try:
            if t == 0:
                b = incorporate_observation(b, o, pomdp.emissions[h])
            else:
                b = belief_update(b, actions[t - 1], o, pomdp.transitions[h - 1], pomdp.emissions[h])
        except InconsistentHistoryError as err:
            raise InconsistentHistoryError(str(err), position=t) from None
    return b


# ---------------------------------------------------------------------------
# G-optimal design


@dataclass(frozen=True, eq=False)
class Design:
    support: np.ndarray
    weights: np.ndarray
    matrix: np.ndarray
    g_value: float
    rank: int
    iterations: int

    def leverages(self, features: np.ndarray) -> np.ndarray:
        return _leverages(features, self.matrix)


def _leverages(X: np.ndarray, M: np.ndarray) -> np.ndarray:
    Minv = np.linalg.pinv(M, hermitian=True)
    return np.einsum("ij,jk,ik->i", X, Minv, X)


def _volumetric_start(Y: np.ndarray) -> list[int]:
    """Greedy pivoted Gram-Schmidt: r points spanning the feature cloud."""
    R = Y.astype(float).copy()
    chosen = []
    for _ in range(Y.shape[1]):
        norms = np.einsum("ij,ij->i", R, R)
        norms[chosen] = -1.0
        k = int(np.argmax(norms))
        chosen.append(k)
        u = R[k] / np.sqrt(norms[k])
        R -= np.outer(R @ u, u)
    return chosen


def g_optimal_design(features: np.ndarray, tol: float = 1e-2, max_iter: int = 10_000) -> Design:
    """Kiefer-Wolfowitz design by Frank-Wolfe with away steps (Wolfe-Atwood).

    Stops once the largest leverage ``x^T M(rho)^+ x`` is at most
    ``r (1 + tol)`` where ``r`` is the rank of the feature cloud; rank-deficient
    clouds are handled in the coordinates of their span.  The support is then
    cut to at most ``r (r + 1) / 2`` points.
    """
    X = np.asarray(features, dtype=float)
    n, d = X.shape
    U, sing, Vt = np.linalg.svd(X, full_matrices=False)
    r = int(np.sum(sing > 1e-10 * max(sing[0], 1e-300))) if sing.size else 0
    if r == 0:
        w = np.zeros(n)
        w[0] = 1.0
        return Design(np.array([0]), np.array([1.0]), np.zeros((d, d)), 0.0, 0, 0)
    Y = X @ Vt[:r].T
    cap = r * (r + 1) // 2
    w = np.zeros(n)
    w[_volumetric_start(Y)] = 1.0 / r
    bound = r * (1 + tol)
    it = 0
    for round_ in range(20):
        while True:
            M = Y.T @ (w[:, None] * Y)
            g = np.einsum("ij,jk,ik->i", Y, np.linalg.inv(M), Y)
            k = int(np.argmax(g))
            if g[k] <= bound:
                break
            if it >= max_iter:
                raise RuntimeError(f"G-optimal design did not reach tolerance in {max_iter} iterations")
            it += 1
            supp = np.flatnonzero(w > 0)
            j = int(supp[np.argmin(g[supp])])
            if r - g[j] > g[k] - r and w[j] < 1.0:
                # Away step; alpha in [-w_j / (1 - w_j), 0).
                alpha = (g[j] / r - 1.0) / (g[j] - 1.0) if g[j] != 1.0 else -np.inf
                lo = -w[j] / (1.0 - w[j])
                alpha = max(alpha, lo)
                w *= 1.0 - alpha
                w[j] += alpha
                if alpha == lo:
                    w[j] = 0.0
            else:
                alpha = (g[k] / r - 1.0) / (g[k] - 1.0)
                w *= 1.0 - alpha
                w[k] += alpha
            w[w < 1e-14] = 0.0
            w /= w.sum()
        supp = np.flatnonzero(w > 0)
        if supp.size <= cap:
            break
        keep = supp[np.argsort(-w[supp], kind="stable")[:cap]]
        trimmed = np.zeros(n)
        trimmed[keep] = w[keep]
        w = trimmed / trimmed.sum()
    supp = np.flatnonzero(w > 0)
    if supp.size > cap:
        raise RuntimeError("could not reduce the design support to r(r+1)/2 points")
    M_red = Y.T @ (w[:, None] * Y)
    g_val = float(np.max(np.einsum("ij,jk,ik->i", Y, np.linalg.inv(M_red), Y)))
    M = X[supp].T @ (w[supp, None] * X[supp])
    return Design(supp, w[supp].copy(), 0.5 * (M + M.T), g_val, r, it)


def initial_prior(pomdp: TabularPOMDP, h: int, design: Design) -> np.ndarray:
    """Design-weighted mixture of next-state laws ``P_h(.|s, a)``; support indexes ``s*A + a``."""
    A = pomdp.num_actions
    b = np.zeros(pomdp.num_states)
    for idx, w in zip(design.support, design.weights):
        s, a = divmod(int(idx), A)
        b += w * pomdp.transitions[h, a, s]
    return b / b.sum()


def step_designs(factors: LowRankFactorization, tol: float = 1e-2) -> list[Design]:
    H, S, A, d = factors.psi.shape
    return [g_optimal_design(factors.psi[h].reshape(S * A, d), tol) for h in range(H)]


def approx_belief(pomdp: TabularPOMDP, z: MemoryState, h: int, designs: list[Design]) -> np.ndarray:
    """Belief at step ``h`` filtered over the window ``z`` only.

    The window's first real observation is folded into ``d0`` when it is the
    episode's first observation, and into the design prior otherwise.
    """
    L = z.memory
    t0 = h - L + 1
    start = max(t0, 0)
    prior = pomdp.init if start == 0 else initial_prior(pomdp, start - 1, designs[start - 1])
    obs = z.observations[start - t0:]
    acts = z.actions[start - t0:]
    try:
        return filter_history(pomdp, obs, acts, prior=prior, start=start)
    except InconsistentHistoryError as err:
        raise InconsistentHistoryError(str(err), position=(start - t0) + (err.position or 0)) from None


# ---------------------------------------------------------------------------
# Approximated memory-state MDP


def derive_mu(factors: LowRankFactorization, emissions: np.ndarray, h: int) -> np.ndarray:
    """(O, d) table ``mu_h(o) = sum_s' omega_h(s') Obs_{h+1}(o|s')``, pairing with features at step ``h``."""
    return emissions[h + 1].T @ factors.omega[h]


@dataclass(eq=False)
class ApproxMDP:
    """``P(o_{h+1} | z_h, a_h) = mu[h](o) . phi[h](z, a)`` over a memory space.

    ``phi[h]`` has shape (Z_h, A, d) and ``mu[h]`` shape (O, d) for
    ``h = 0..H-2``.  ``consistent[h]`` flags windows with positive probability
    under the model; the others get a uniform belief.
    """

    space: MemorySpace
    phi: list
    mu: list
    consistent: list
    clamp: float = 0.0

    def __post_init__(self):
        self._kernels = [None] * len(self.phi)

    @property
    def horizon(self) -> int:
        return self.space.horizon

    def kernel(self, h: int) -> np.ndarray:
        """(Z_h, A, O) next-observation law with negative round-off clamped."""
        if self._kernels[h] is None:
            k = np.einsum("zad,od->zao", self.phi[h], self.mu[h])
            neg = float(-k.min()) if k.min() < 0 else 0.0
            if neg > CLAMP_LIMIT:
                raise NumericalError(f"approximated kernel dips to {-neg:.3e} at step {h}")
            if neg > 0:
                k = np.clip(k, 0.0, None)
                k /= k.sum(axis=-1, keepdims=True)
            self.clamp = max(self.clamp, neg)
            self._kernels[h] = k
        return self._kernels[h]

    def policy_value(self, policy, rewards: np.ndarray, first_obs: np.ndarray) -> float:
        """Exact value of an L-memory policy in this MDP (forward measure over windows)."""
        sp = self.space
        meas = np.zeros(sp.size(0))
        for o, p in enumerate(first_obs):
            meas[sp.index(0, sp.initial(o))] += p
        total = 0.0
        for h in range(sp.horizon):
            total += float(meas @ rewards[h, sp.last_observations(h)])
            if h + 1 == sp.horizon:
                break
            pa = policy.prob_table(h)
            flow = meas[:, None, None] * pa[:, :, None] * self.kernel(h)
            meas = np.bincount(sp.next_index(h).ravel(), weights=flow.ravel(), minlength=sp.size(h + 1))
        return total


def build_approx_mdp(pomdp: TabularPOMDP, factors: LowRankFactorization, L: int,
                     space: MemorySpace | None = None, designs: list[Design] | None = None,
                     cap: int = DEFAULT_ENUMERATION_CAP) -> ApproxMDP:
    """Memory-window MDP of a factored POMDP: ``phi = psi`` averaged under the window belief."""
    factors.check(pomdp, atol=1e-8)
    if space is None:
        space = MemorySpace.for_pomdp(pomdp, L, cap)
    if designs is None:
        designs = step_designs(factors)
    H, S = pomdp.horizon, pomdp.num_states
    uniform = np.full(S, 1.0 / S)
    phis, mus, masks = [], [], []
    for h in range(H - 1):
        states = space.states(h)
        beliefs = np.empty((len(states), S))
        ok = np.ones(len(states), dtype=bool)
        for i, z in enumerate(states):
            try:
                beliefs[i] = approx_belief(pomdp, z, h, designs)
            except InconsistentHistoryError:
                beliefs[i] = uniform
                ok[i] = False
        phis.append(np.einsum("zs,sad->zad", beliefs, factors.psi[h]))
        mus.append(derive_mu(factors, pomdp.emissions, h))
        masks.append(ok)
    return ApproxMDP(space, phis, mus, masks)


def one_step_gap(pomdp: TabularPOMDP, approx: ApproxMDP, policy: Policy) -> np.ndarray:
    """Per step ``h < H-1``: ``E_pi || P_M(.|z_h, a_h) - P(.|history, a_h) ||_1`` by exact enumeration."""
    sp = approx.space
    H, O = pomdp.horizon, pomdp.num_observations
    gaps = np.zeros(H - 1)
    first = pomdp.first_observation_dist()
    frontier = []
    for o in range(O):
        if first[o] > 0:
            frontier.append((first[o], incorporate_observation(pomdp.init, o, pomdp.emissions[0]), (o,), ()))
    for h in range(H - 1):
        kern = approx.kernel(h)
        nxt = []
        for p, b, obs, acts in frontier:
            z = window(obs, acts, h, sp.L, sp.dummy_obs, sp.dummy_act)
            iz = sp.index(h, z)
            pa = policy.action_probs(h, z)
            for a in np.flatnonzero(pa > 0):
                pred = b @ pomdp.transitions[h, a]
                po = pred @ pomdp.emissions[h + 1]
                q = p * pa[a]
                gaps[h] += q * float(np.abs(po - kern[iz, a]).sum())
                for o2 in np.flatnonzero(po > 0):
                    w = pred * pomdp.emissions[h + 1][:, o2]
                    nxt.append((q * po[o2], w / w.sum(), obs + (int(o2),), acts + (int(a),)))
        frontier = nxt
    return gaps


def estimate_observability(emission: np.ndarray, num_probes: int, rng) -> float:
    """Smallest observed ratio ``||Obs^T v||_1 / ||v||_1`` over probe differences ``v``.

    Probes are all point-mass pairs plus random Dirichlet pairs, so the result
    certifies ``gamma <= gamma_hat``; it is reported as an estimate of gamma.
    """
    E = np.asarray(emission, dtype=float)
    S = E.shape[0]
    if S < 2:
        return 1.0
    if num_probes < S * S:
        raise ValueError("num_probes must be at least S**2")
    gen = as_generator(rng)
    i, j = np.triu_indices(S, k=1)
    V = np.zeros((len(i), S))
    V[np.arange(len(i)), i] = 0.5
    V[np.arange(len(i)), j] = -0.5
    m = num_probes - len(i)
    if m > 0:
        V = np.vstack([V, gen.dirichlet(np.ones(S), size=m) - gen.dirichlet(np.ones(S), size=m)])
    norms = np.abs(V).sum(axis=1)
    keep = norms > 1e-12
    ratios = np.abs(V[keep] @ E).sum(axis=1) / norms[keep]
    return float(ratios.min())
