"""Discrete event decision processes and variational policy iteration."""

from .errors import (
    ConfigError,
    DedpError,
    DivisionDomain,
    DomainViolation,
    LineSearchFailed,
    NegativeReward,
    NonConvergence,
    RateOverflow,
    SpaceTooLarge,
)
from .model import (
    NULL_EVENT,
    Component,
    ComponentReward,
    ConstantMap,
    DedpModel,
    EventSpec,
    Factor,
    IdentityMap,
    LinearMap,
    RewardSpec,
    RoutingMap,
    Trajectory,
    apply_event,
    event_distribution,
    event_rate,
    load_model,
    marginalize_events,
    model_from_dict,
    model_to_dict,
    reward,
    save_model,
    single_component_model,
    trajectory_log_prob,
)
from .policy import (
    FeatureSpec,
    LinearSigmoidPolicy,
    MlpPolicy,
    TabularPolicy,
    init_policy,
    load_policy,
    rate_coefficient_jacobian,
)
from .simulator import RolloutConfig, ValueEstimate, default_horizon, monte_carlo_value, rollout_return, simulate
from .oracle import duality_gap, enumerate_states, exact_mixture, exact_value, shift_rewards
from .vi import (
    ElboReport,
    LengthPrior,
    MessageSet,
    OptimizeSchedule,
    backward_pass,
    forward_pass,
    length_prior,
    optimize,
    policy_evaluation,
    policy_gradient,
    policy_improvement,
    projected_kernel,
)

__version__ = "0.1.0"
