"""Optimal percentile mechanisms for facility location with scarce capacity."""

from .distributions import (
    ClassTag,
    Distribution,
    DistributionError,
    DistributionSpec,
    Instance,
    beta,
    build,
    mix_family,
    piecewise_linear,
    sample,
    uniform,
)
from .optimizer import (
    FeasibilityVerdict,
    Method,
    OneFacilitySolution,
    TwoFacilitySolution,
    best_es_two,
    es_optimal_feasible,
    optimize_one,
    unconstrained_two_minimizers,
)
from .radius import (
    DegenerateDensityError,
    FixedPointError,
    NumericalError,
    RadiusResult,
    Regime,
    TwoFacilityServing,
    radius_derivative,
    two_facility_serving,
)
from .simulator import (
    ExperimentConfig,
    RatioEstimate,
    convergence_curve,
    estimate_ratio,
    instance_opt_one,
    instance_opt_two,
    run_mechanism,
)
from .welfare import WelfareEval, empirical_sw, w_one, w_one_derivative, w_two, wasserstein_to_dirac

__version__ = "0.1.0"
