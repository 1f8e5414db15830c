"""Mini-batch SGD under batch-size and learning-rate schedules, with convergence bounds."""

from .bounds import (
    BoundReport,
    ProblemConstants,
    bound_B,
    bound_report,
    bound_V,
    convex_rhs,
    exact_B,
    exact_V,
    stationarity_rhs,
    limsup_asymptote,
)
from .engine import RunConfig, Trace, enumerate_batch_moments, mc_variance, sgd_run
from .harness import Experiment, Measure, aggregate, rate_fit, verify_convex, verify_stationarity
from .problems import certify_constants, make_logistic, make_quadratic, make_sine_quadratic
from .schedules import (
    BsSchedule,
    CaseTag,
    LrSchedule,
    SchedulerPlan,
    bs_at,
    build_structure,
    lr_at,
    make_plan,
    validate_plan,
)

__version__ = "0.1.0"
