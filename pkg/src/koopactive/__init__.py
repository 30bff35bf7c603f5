"""Active learning of lifted linear (Koopman-operator) models with LQ control."""

__version__ = "0.1.0"

from .active_learning import (
    ActiveLearner,
    HorizonCost,
    HorizonTrajectory,
    InfoWeightSchedule,
    LearnCostConfig,
    compute_active_control,
    delta_information,
    fisher_trace,
    mode_insertion_gradient,
    mu_star_schedule,
    simulate_adjoint,
    simulate_forward,
)
from .koopman import (
    KoopmanEdmd,
    KoopmanModel,
    MomentAccumulator,
    fit_discrete,
    model_from_text,
    model_to_text,
    partition,
    to_continuous,
)
from .lqr import (
    LqPolicy,
    LqWeights,
    PolicyAction,
    care_residual,
    equilibrium_feedforward,
    expand_weights,
    solve_care,
    solve_care_integration,
    synthesize_policy,
    zero_policy,
)
from .metrics import TrackingReport, tracking_metrics
from .nn_dictionary import AdamState, Mlp, NnDictionary, episode_fit, loss_and_grads
from .observables import (
    Dictionary,
    IdentityDictionary,
    PolynomialDictionary,
    QuadcopterDictionary,
    VdpDictionary,
    poly_dictionary,
    sawyer_dictionary,
    sprk_dictionary,
)
from .plants import (
    CartPendulum,
    Plant,
    QuadParams,
    QuadState,
    Quadcopter,
    TwoLinkArm,
    VanDerPol,
)
