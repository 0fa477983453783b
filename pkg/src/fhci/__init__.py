"""Empirical Bayes confidence intervals for small-area means under the
Fay-Herriot model: adjusted-REML variance estimation, Cox-type and
parametric-bootstrap intervals, second-order MSE machinery and a
reproducible Monte Carlo harness.

Hot numerical kernels run in the compiled extension ``fhci._core`` when
available, otherwise in the pure-Python twin ``fhci._pykernel``; see
:func:`backend_name`.
"""

from ._backend import backend_name
from .coverage import CoverageExpansion, a_term, b_term, defining_residual, expansion
from .errors import *  # noqa: F401,F403
from .intervals import (
    IntervalResult,
    bootstrap_interval,
    cox_interval,
    cox_intervals_all_areas,
    direct_interval,
)
from .model import (
    EbPointEstimate,
    FayHerriotDataset,
    RegressionFit,
    VarianceProfile,
    eb_estimate,
    fit_regression,
    leverage,
    load_csv,
    load_dataset,
    posterior_sd,
    shrinkage,
)
from .mse import MseBreakdown, mse_approx, mse_estimate
from .simulation import (
    ALL_METHODS,
    SimulationDesign,
    SimulationReport,
    design_from_pattern,
    generate_replicate,
    leverage_design,
    pattern_design,
    run_simulation,
)
from .variance import (
    AdjustmentFactor,
    VarianceEstimate,
    adjusted_score,
    anova_estimate,
    balanced_quadratic_root,
    estimate_variance,
    log_adjustment,
    log_adjustment_derivative,
    reml_log_likelihood,
    reml_score,
    uniqueness_condition_holds,
)

__version__ = "0.1.0"
