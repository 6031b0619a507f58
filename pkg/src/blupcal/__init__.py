"""Two-stage BLUP correction for replicate exposure measurement error.

Library surface: compound-symmetry covariance algebra and domain types
(``model_core``), stage-1 mixed-model fitting and BLUPs (``lme``),
stage-2 outcome models (``glm``), the composed estimators
(``two_stage``), the Monte Carlo harness (``sim_engine``), analytic
large-sample limits (``analytic_oracle``), and device-agreement
diagnostics (``agreement``).  The ``blupcal`` CLI wraps the simulation,
analysis, comparison, and oracle workflows.
"""

from .agreement import AgreementReport, DeviceSummary, compare_devices
from .analytic_oracle import (
    PopulationMoments,
    blup_slope_limit,
    brute_force_fit,
    brute_force_limit,
    naive_slope_limit,
    population_moments,
)
from .errors import (
    BlupcalError,
    ConfigError,
    DataError,
    IdentifiabilityError,
    RankDeficientError,
)
from .glm import GlmFit, Z_95, fit_linear_ols, fit_logistic_irls, normal_quantile, wald_interval
from .lme import (
    BlupVector,
    LmeFit,
    blup_empirical,
    blup_oracle,
    fit_balanced_anova,
    fit_reml_profiled,
    restricted_loglik,
)
from .model_core import (
    McSummary,
    OutcomePanel,
    ParamSummary,
    ReplicatePanel,
    Scenario,
    TwoStageFit,
    VarianceComponents,
    build_marginal_cov,
    build_sigma_u,
)
from .sim_engine import (
    GeneratedDataset,
    generate_dataset,
    replication_rng,
    run_monte_carlo,
    scenario_grid,
)
from .two_stage import PipelineSpec, XcMoments, estimate, make_design, spec_for_scenario

__version__ = "0.1.0"

__all__ = [
    "AgreementReport",
    "BlupVector",
    "BlupcalError",
    "ConfigError",
    "DataError",
    "DeviceSummary",
    "GeneratedDataset",
    "GlmFit",
    "IdentifiabilityError",
    "LmeFit",
    "McSummary",
    "OutcomePanel",
    "ParamSummary",
    "PipelineSpec",
    "PopulationMoments",
    "RankDeficientError",
    "ReplicatePanel",
    "Scenario",
    "TwoStageFit",
    "VarianceComponents",
    "XcMoments",
    "Z_95",
    "blup_empirical",
    "blup_oracle",
    "blup_slope_limit",
    "brute_force_fit",
    "brute_force_limit",
    "build_marginal_cov",
    "build_sigma_u",
    "compare_devices",
    "estimate",
    "fit_balanced_anova",
    "fit_linear_ols",
    "fit_logistic_irls",
    "fit_reml_profiled",
    "generate_dataset",
    "make_design",
    "naive_slope_limit",
    "normal_quantile",
    "population_moments",
    "replication_rng",
    "restricted_loglik",
    "run_monte_carlo",
    "scenario_grid",
    "spec_for_scenario",
    "wald_interval",
]
