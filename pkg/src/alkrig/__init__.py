"""Active-learning Kriging estimation of rare transient-instability probabilities.

A Kriging surrogate over an uncertain-input space is iteratively enriched at
the stability boundary (smallest ``|mean|/std`` over a large candidate pool)
and combined with surrogate-based Monte Carlo counting to estimate small
probabilities of transient instability from a few hundred expensive margin
evaluations.  The expensive evaluator is pluggable: a built-in classical
swing-equation simulator computing critical-clearing-time margins, or
analytic benchmark limit states.
"""

from . import evaluation, kriging, powersim, sampling
from .active_learning import ALConfig, ALState, check_stop, estimate_pf, run_al, u_value
from .evaluation import (
    AnalyticEvaluator,
    PfReport,
    analytic_case,
    analytic_suite,
    baseline_kriging,
    confusion,
    cov_pf,
    direct_mcs,
)
from .kriging import FitConfig, KrigingModel, fit, matern52
from .powersim import Contingency, GridCase, SwingMarginEvaluator, builtin_case
from .sampling import (
    Marginal,
    SampleSet,
    UncertaintySpec,
    WindTurbineCurve,
    lhs_sample,
    load_empirical,
    mc_sample,
    wind_power,
)
from .seeds import derive_seed

__version__ = "0.1.0"
