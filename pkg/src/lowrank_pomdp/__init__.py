"""Exploration in low-rank POMDPs through memory-window features, at tabular scale."""

__version__ = "0.1.0"

from .belief import (
    ApproxMDP,
    Design,
    InconsistentHistoryError,
    NumericalError,
    approx_belief,
    belief_update,
    build_approx_mdp,
    estimate_observability,
    filter_history,
    g_optimal_design,
    incorporate_observation,
    initial_prior,
    one_step_gap,
    predict,
)
from .core import (
    CapExceededError,
    LMemoryPolicy,
    LowRankFactorization,
    MemorySpace,
    MemoryState,
    MixturePolicy,
    RandomStream,
    TabularPOMDP,
    Trajectory,
    UniformPolicy,
    advance_memory,
    enumerate_memory_states,
    extend_pomdp,
    rollin_mix,
    sample_episode,
    uniform_mixture,
)
from .environments import (
    PocomblockConfig,
    RichObservationEncoder,
    check_decodable,
    hadamard,
    make_pocomblock,
    make_random_decodable_pomdp,
    make_random_lowrank_pomdp,
    secret_action_policy,
)
from .evaluation import LearningCurve, exact_value, lmemory_value, mc_value, optimal_lmemory_value
from .exploration import CovarianceAccumulator, ScheduleConfig, alpha_lambda_schedule, bonus
from .mle import (
    LikelihoodTable,
    ModelCandidate,
    TransitionDataset,
    TransitionSample,
    build_perturbed_class,
    build_pocomblock_class,
    derive_lstep_features,
    derive_mu,
    log_likelihood,
    mle_select,
)
from .planner import PlannerInput, lsvi_llr, q_backup
from .porl import RunConfig, lstep_memory_from_gamma, porl_decodable, porl_observable
