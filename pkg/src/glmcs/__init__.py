"""Anytime-valid confidence sequences for generalized linear models."""

from .confsets import (
    BregmanBallSet,
    LikelihoodRatioSet,
    Mode,
    PseudoLabelEllipsoid,
    algorithmic_det_set,
    analytic_adaptive_set,
    ewa_alg_set,
    membership,
    sparse_alg_set,
    sparse_width,
    to_json,
    transductive_set,
    width_report,
)
from .errors import (
    AccuracyError,
    ConfigError,
    ConvergenceError,
    DomainError,
    GlmcsError,
    InvalidArgumentError,
    NumericalError,
    NumericalUnderflowError,
    StrongConvexityUnavailableError,
    UnsupportedDimensionError,
)
from .estimators import SolveReport, constrained_mle, restricted_mle, ridge_mle
from .families import (
    FAMILIES,
    GAUSSIAN,
    LOGISTIC,
    GlmFamily,
    ObservationLog,
    d_psi,
    get_family,
    negloglik,
    negloglik_grad,
    sample_label,
    shifted_loss,
    truncate,
)
from .forecasters import (
    ConjugatePosterior,
    GridPosterior,
    Posterior,
    PosteriorBatch,
    Prior,
    ewa_init,
    ewa_update,
    mix_loss,
    point_mass,
    predictive_loss,
    pseudo_label,
    replay_regret,
    run_chain,
    shifted_mix_loss,
    telescoped_regret,
)
from .infogain import (
    InfoGainReport,
    ewa_regret_bound,
    info_gain_bound,
    info_gain_exact,
    info_gain_report,
    logdet_rank_bound,
    logdet_worst_case,
    restricted_info_gain,
    sparse_regret_bound,
)

__version__ = "0.1.0"
