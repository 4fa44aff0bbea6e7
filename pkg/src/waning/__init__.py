"""Sharp bounds on vaccine challenge effects from randomized trial data."""

__version__ = "0.1.0"

from .bounds import (
    bounds_from_hazards,
    bounds_from_incidences,
    bounds_from_lambdas,
    k_interval_bounds,
    psi_obs,
)
from .hazard import (
    cumulative_incidence,
    fit_cox,
    fit_logistic_hazards,
    product_cumulative_incidence,
    rate_hazards,
    tabulate_cohort,
)
from .inference import (
    BootstrapConfig,
    CiPolicy,
    WaningTestResult,
    bootstrap_cis,
    delta_method_cis,
    subgroup_hazard_ci,
    subinterval_ve_ci,
    waning_test,
)
from .model import (
    Cohort,
    CumulativeHazards,
    Estimate,
    IntervalSpec,
    KBoundsEstimate,
    SummaryCell,
    SummaryTable,
    WaningEstimate,
    validate_interval_spec,
    validate_summary_table,
)
