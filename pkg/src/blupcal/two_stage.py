"""Two-stage estimators: BLUP-corrected and naive plug-in pipelines.

Stage 1 turns replicate measurements into one exposure proxy per subject
(the observed mean for the naive arm, a shrunken BLUP for the corrected
arms); stage 2 regresses the outcome on (1, proxy, covariates).  Reported
standard errors are the stage-2 asymptotic ones; stage-1 estimation noise
is not propagated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import glm, lme
from .model_core import OutcomePanel, ReplicatePanel, Scenario, TwoStageFit, VarianceComponents

METHODS = ("blup_oracle", "blup_empirical", "naive")


@dataclass(frozen=True)
class XcMoments:
    """Joint moments of the latent exposure and the outcome covariate.

    Needed only by the ``condition_on_c`` variant, which conditions the
    stage-1 predictor on the covariate as well.
    """

    mu_x: float
    mu_c: float
    var_c: float
    cov_xc: float


@dataclass(frozen=True)
class PipelineSpec:
    """Configuration of one estimation pipeline.

    ``vc_override`` supplies the variance components for ``blup_oracle``;
    ``gamma1`` is the measurement scale used to rescale BLUPs (the naive
    arm ignores it — the naive analyst is assumed ignorant of the scale).
    ``condition_on_c`` switches the oracle predictor to condition on the
    outcome covariate too (regression-calibration style); it is a probing
    tool, off by default, and requires ``xc_moments``.
    """

    method: str
    family: str
    gamma1: float = 1.0
    vc_override: VarianceComponents | None = None
    condition_on_c: bool = False
    xc_moments: XcMoments | None = None
    label: str = ""

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.family not in ("linear", "logistic"):
            raise ValueError(f"family must be 'linear' or 'logistic', got {self.family!r}")
        if self.gamma1 == 0:
            raise ValueError("gamma1 must be nonzero")
        if self.method == "blup_oracle" and self.vc_override is None:
            raise ValueError("blup_oracle requires vc_override")
        if self.condition_on_c:
            if self.method != "blup_oracle":
                raise ValueError("condition_on_c is only available with blup_oracle")
            if self.xc_moments is None:
                raise ValueError("condition_on_c requires xc_moments")
        if not self.label:
            object.__setattr__(self, "label", self.method)


def spec_for_scenario(scenario: Scenario, method: str, condition_on_c: bool = False) -> PipelineSpec:
    """Build the pipeline spec for one simulation method from scenario truth."""
    vc = scenario.variance_components() if method == "blup_oracle" else None
    xc = None
    if condition_on_c:
        xc = XcMoments(
            mu_x=scenario.mu_x,
            mu_c=scenario.mu_c,
            var_c=scenario.sigma_c**2,
            cov_xc=scenario.rho_xc * scenario.sigma_x * scenario.sigma_c,
        )
    return PipelineSpec(
        method=method,
        family=scenario.family,
        gamma1=scenario.gamma1 if method != "naive" else 1.0,
        vc_override=vc,
        condition_on_c=condition_on_c,
        xc_moments=xc,
    )


def make_design(x_hat_or_wbar: np.ndarray, covariates: np.ndarray) -> np.ndarray:
    """Stack (1, exposure proxy, covariates) columnwise."""
    x = np.asarray(x_hat_or_wbar, dtype=float)
    C = np.asarray(covariates, dtype=float)
    if C.ndim == 1:
        C = C[:, None]
    if x.ndim != 1 or C.shape[0] != x.shape[0]:
        raise ValueError(f"exposure proxy of length {x.shape} does not align with covariates {C.shape}")
    return np.column_stack([np.ones(x.shape[0]), x, C])


def _conditioned_oracle_proxy(panel: ReplicatePanel, spec: PipelineSpec, covariates: np.ndarray) -> np.ndarray:
    """Oracle predictor conditioning on the covariate as well as the replicates.

    Per-subject 2x2 solve of E[X | Wbar, C]; supports a single covariate.
    """
    vc = spec.vc_override
    xc = spec.xc_moments
    if covariates.shape[1] != 1:
        raise ValueError("condition_on_c supports exactly one outcome covariate")
    counts = panel.observed_counts().astype(float)
    var_wbar = vc.v_b + vc.v_w / counts
    cov_wc = vc.gamma1 * xc.cov_xc
    dz_w = panel.observed_means() - vc.gamma0 - vc.gamma1 * xc.mu_x
    dz_c = covariates[:, 0] - xc.mu_c
    det = var_wbar * xc.var_c - cov_wc**2
    # row of Cov(X, (Wbar, C)) * inv([[var_wbar, cov_wc], [cov_wc, var_c]])
    a = (vc.gamma1 * vc.sigma_x2 * xc.var_c - xc.cov_xc * cov_wc) / det
    b = (xc.cov_xc * var_wbar - vc.gamma1 * vc.sigma_x2 * cov_wc) / det
    return xc.mu_x + a * dz_w + b * dz_c


def exposure_proxy(
    panel: ReplicatePanel,
    spec: PipelineSpec,
    covariates: np.ndarray | None = None,
    stage1_fit: lme.LmeFit | None = None,
):
    """Stage-1 exposure proxy for one pipeline.

    Returns ``(proxy, stage1_fit)``.  The fit is None for the naive and
    oracle arms; for the empirical arm it is the REML/ANOVA fit used, and
    ``proxy`` is None when that fit did not converge.
    """
    if spec.method == "naive":
        return panel.observed_means(), None
    if spec.method == "blup_oracle":
        if spec.condition_on_c:
            if covariates is None:
                raise ValueError("condition_on_c requires the outcome covariates")
            return _conditioned_oracle_proxy(panel, spec, np.asarray(covariates, dtype=float)), None
        return lme.blup_oracle(panel, spec.vc_override).x_hat, None
    fit = stage1_fit
    if fit is None:
        if panel.is_balanced and (
            panel.stage1_covariates is None or panel.stage1_covariates.shape[1] == 1
        ):
            fit = lme.fit_balanced_anova(panel)
        else:
            fit = lme.fit_reml_profiled(panel)
    if not fit.converged:
        return None, fit
    return lme.blup_empirical(panel, fit, spec.gamma1).x_hat, fit


def estimate(
    panel: ReplicatePanel,
    outcomes: OutcomePanel,
    spec: PipelineSpec,
    stage1_fit: lme.LmeFit | None = None,
) -> TwoStageFit:
    """Run one full two-stage estimation.

    Subjects missing the outcome or any covariate are dropped listwise;
    ``n_used`` reports how many were retained.  Stage-1 or stage-2
    non-convergence is reported through ``converged`` with NaN estimates;
    structural problems (misalignment, rank deficiency, a single-class
    logistic outcome) raise.
    """
    if panel.subject_ids != outcomes.subject_ids:
        raise ValueError("replicate and outcome panels are not aligned on subject ids")
    keep = np.isfinite(outcomes.y) & np.all(np.isfinite(outcomes.covariates), axis=1)
    if not keep.all():
        idx = np.flatnonzero(keep)
        panel = panel.take(idx)
        outcomes = outcomes.take(idx)
    n_used = panel.n_subjects
    q = 2 + outcomes.n_covariates

    proxy, s1 = exposure_proxy(panel, spec, covariates=outcomes.covariates, stage1_fit=stage1_fit)
    if proxy is None:
        nan = np.full(q, np.nan)
        return TwoStageFit(
            method=spec.label,
            coefficients=nan,
            asymptotic_se=nan,
            ci_lower=nan,
            ci_upper=nan,
            converged=False,
            n_used=n_used,
            stage1_fit=s1,
        )
    design = make_design(proxy, outcomes.covariates)
    if spec.family == "linear":
        fit = glm.fit_linear_ols(design, outcomes.y)
    else:
        fit = glm.fit_logistic_irls(design, outcomes.y)
    se = np.sqrt(np.clip(np.diag(fit.covariance), 0.0, None))
    if fit.converged:
        lower, upper = glm.wald_interval(fit, 0.95)
    else:
        lower = np.full(q, np.nan)
        upper = np.full(q, np.nan)
    return TwoStageFit(
        method=spec.label,
        coefficients=fit.coefficients,
        asymptotic_se=se,
        ci_lower=lower,
        ci_upper=upper,
        converged=fit.converged,
        n_used=n_used,
        stage1_fit=s1,
    )
