"""Monotone function estimation via greatest convex minorants of generalized cusum diagrams."""

from .asymptotics import (
    ChernoffTable,
    ScaleReport,
    TrueModel,
    chernoff_oracle,
    naive_limit_curve,
    tau_density,
    tau_hazard,
    tau_regression,
)
from .estimators import (
    NuisancePair,
    censored_density,
    default_nuisances,
    grenander_density,
    hazard_identity,
    isotonic_regression,
    marginalized_regression,
    monotone_density_adjusted,
    monotone_hazard,
    onestep_gamma_density,
)
from .gcm import (
    ConvexMinorant,
    CusumDiagram,
    MonotoneEstimate,
    StepFunction,
    gcm,
    generalized_inverse,
    grenander_type,
    iso,
    left_derivative,
)
from .simulation import SETTINGS, RunManifest, generate, run_study, true_marginals
from .survival import SurvivalSample, cox_fit, ecdf, kaplan_meier, restricted_mean_transform

__version__ = "0.1.0"
