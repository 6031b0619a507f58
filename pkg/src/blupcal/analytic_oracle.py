"""Closed-form and brute-force large-sample limits for the estimators.

These limits are computed from exact population second moments (no
simulation), so every Monte Carlo result can be validated against an
independent target.  ``brute_force_fit`` complements the closed forms
with a single huge-n replication, which is also the only route for the
logistic family.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model_core import Scenario, TwoStageFit
from .sim_engine import generate_dataset
from .two_stage import PipelineSpec, estimate

BLUP_SOURCES = ("oracle", "empirical")


@dataclass(frozen=True)
class PopulationMoments:
    """Second moments needed for population least squares on (proxy, C)."""

    var_proxy: float
    cov_proxy_x: float
    cov_proxy_c: float
    var_c: float
    cov_y_proxy: float
    cov_y_c: float

    def __post_init__(self):
        det = self.var_proxy * self.var_c - self.cov_proxy_c**2
        if not (self.var_proxy > 0 and det > 0):
            raise ValueError("implied proxy/covariate Gram matrix is not positive definite")


def wbar_variance(scenario: Scenario) -> float:
    """Variance of a subject's observed replicate mean (complete data)."""
    noise = scenario.sigma_u**2 * (1.0 + (scenario.J - 1) * scenario.rho) / scenario.J
    return scenario.gamma1**2 * scenario.sigma_x**2 + noise


def oracle_shrinkage(scenario: Scenario) -> float:
    """Shrinkage applied to the centered mean under true variance components."""
    return scenario.gamma1**2 * scenario.sigma_x**2 / wbar_variance(scenario)


def empirical_shrinkage_limit(scenario: Scenario) -> float:
    """Probability limit of the REML-based shrinkage.

    The between-subject variance estimate converges to v_b, which absorbs
    the correlated error share rho*sigma_u2 on top of the signal variance.
    """
    vc = scenario.variance_components()
    return vc.v_b / wbar_variance(scenario)


def population_moments(scenario: Scenario, method: str) -> PopulationMoments:
    """Exact second moments of (Y, proxy, C) for one estimator's proxy."""
    cov_xc = scenario.rho_xc * scenario.sigma_x * scenario.sigma_c
    if method == "naive":
        scale = 1.0
    elif method == "blup_oracle":
        scale = oracle_shrinkage(scenario) / scenario.gamma1
    elif method == "blup_empirical":
        scale = empirical_shrinkage_limit(scenario) / scenario.gamma1
    else:
        raise ValueError(f"unknown method {method!r}")
    cov_proxy_x = scale * scenario.gamma1 * scenario.sigma_x**2
    cov_proxy_c = scale * scenario.gamma1 * cov_xc
    return PopulationMoments(
        var_proxy=scale**2 * wbar_variance(scenario),
        cov_proxy_x=cov_proxy_x,
        cov_proxy_c=cov_proxy_c,
        var_c=scenario.sigma_c**2,
        cov_y_proxy=scenario.beta_x * cov_proxy_x + scenario.beta_c * cov_proxy_c,
        cov_y_c=scenario.beta_x * cov_xc + scenario.beta_c * scenario.sigma_c**2,
    )


def _population_slopes(m: PopulationMoments) -> tuple[float, float]:
    det = m.var_proxy * m.var_c - m.cov_proxy_c**2
    bx = (m.cov_y_proxy * m.var_c - m.cov_proxy_c * m.cov_y_c) / det
    bc = (m.var_proxy * m.cov_y_c - m.cov_proxy_c * m.cov_y_proxy) / det
    return bx, bc


def naive_slope_limit(scenario: Scenario) -> float:
    """Large-sample exposure slope of the naive plug-in estimator.

    With an uncorrelated covariate this is the textbook attenuation::

        beta_x * gamma1*sigma_x^2 / (gamma1^2*sigma_x^2 + sigma_u^2*(1+(J-1)*rho)/J)

    otherwise the 2x2 population normal equations are solved.
    """
    if scenario.family != "linear":
        raise ValueError("closed-form limits cover the linear family; use brute_force_limit")
    if scenario.rho_xc == 0:
        return scenario.beta_x * scenario.gamma1 * scenario.sigma_x**2 / wbar_variance(scenario)
    bx, _ = _population_slopes(population_moments(scenario, "naive"))
    return bx


def blup_slope_limit(scenario: Scenario, source: str = "oracle") -> tuple[float, float]:
    """Large-sample (exposure, covariate) slopes of a BLUP-corrected fit.

    With source="oracle" and an uncorrelated covariate the limits are the
    generating coefficients exactly; otherwise the population normal
    equations are solved with the appropriate shrinkage.
    """
    if scenario.family != "linear":
        raise ValueError("closed-form limits cover the linear family; use brute_force_limit")
    if source not in BLUP_SOURCES:
        raise ValueError(f"source must be one of {BLUP_SOURCES}, got {source!r}")
    if source == "oracle" and scenario.rho_xc == 0:
        return scenario.beta_x, scenario.beta_c
    method = "blup_oracle" if source == "oracle" else "blup_empirical"
    return _population_slopes(population_moments(scenario, method))


def brute_force_fit(
    scenario: Scenario,
    spec: PipelineSpec,
    n_override: int = 1_000_000,
    rep_index: int = 0,
) -> TwoStageFit:
    """Single huge-n replication of the full pipeline (empirical plim)."""
    big = replace(scenario, n=n_override, n_reps=1, scenario_id="")
    ds = generate_dataset(big, rep_index)
    return estimate(ds.panel, ds.outcomes, spec)


def brute_force_limit(
    scenario: Scenario,
    spec: PipelineSpec,
    n_override: int = 1_000_000,
    rep_index: int = 0,
) -> np.ndarray:
    """Stage-2 coefficients from one huge-n replication."""
    return brute_force_fit(scenario, spec, n_override=n_override, rep_index=rep_index).coefficients
