"""Stage-1 measurement-model fitting and per-subject BLUPs.

The measurement model is a random-intercept linear mixed model on the
replicate measurements: subject-level fixed effects (an intercept by
default), a between-subject variance ``tau2`` and a within-subject
variance ``sigma2``.  Two fitters are provided:

* ``fit_balanced_anova`` — closed-form between/within mean squares for
  fully observed panels with a common J; equals the REML optimum there.
* ``fit_reml_profiled`` — profiled restricted likelihood for arbitrary
  missingness patterns, reduced to a bracketed scalar search over
  ``log(tau2/sigma2)``.

BLUPs come in two flavours.  ``blup_oracle`` shrinks with externally
supplied variance components (e.g. the generating truth in simulations);
``blup_empirical`` shrinks with the REML estimates.  Both return corrected
exposures on the scale of the latent variable, i.e. divided by the scale
factor ``gamma1`` of the measurement model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DataError, IdentifiabilityError
from .model_core import ReplicatePanel, VarianceComponents

_LOG_RATIO_BOUNDS = (-30.0, 30.0)
_RATIO_TOL = 1e-10
_MAX_ITER = 200


@dataclass(frozen=True)
class LmeFit:
    """Random-intercept fit of the measurement model.

    ``fixed_effects`` holds the subject-level fixed-effect estimates in
    column order of the panel's stage-1 covariates (a single intercept
    when none are supplied); ``gamma0_hat`` is its first entry.
    """

    gamma0_hat: float
    fixed_effects: np.ndarray
    tau2_hat: float
    sigma2_hat: float
    log_restricted_likelihood: float
    converged: bool
    n_iterations: int

    def __post_init__(self):
        if self.tau2_hat < 0:
            raise ValueError(f"tau2_hat must be >= 0, got {self.tau2_hat}")
        if not self.sigma2_hat > 0:
            raise ValueError(f"sigma2_hat must be > 0, got {self.sigma2_hat}")


@dataclass(frozen=True)
class BlupVector:
    """Corrected exposures and the shrinkage applied to each subject.

    ``shrinkage[i]`` in [0, 1] multiplies subject i's centered observed
    mean before the 1/gamma1 rescale, so ``|x_hat|`` never exceeds the
    rescaled mean deviation.
    """

    x_hat: np.ndarray
    shrinkage: np.ndarray
    source: str


def _design(panel: ReplicatePanel) -> np.ndarray:
    if panel.stage1_covariates is not None:
        return panel.stage1_covariates
    return np.ones((panel.n_subjects, 1))


def _suffstats(panel: ReplicatePanel):
    counts = panel.observed_counts().astype(float)
    means = panel.observed_means()
    ssw = panel.within_sumsq()
    return counts, means, ssw


def _gls_profile(ratio: float, counts, means, ssw, A):
    """GLS fixed effects and residual quadratic form at tau2/sigma2 = ratio.

    With subject-level fixed effects the per-subject contribution collapses
    to scalar weights u_i = J_i / (1 + ratio*J_i) on the observed means.
    Returns (theta, Q, M) with Q the REML residual sum of squares and M the
    weighted normal-equation matrix.
    """
    u = counts / (1.0 + ratio * counts)
    M = A.T @ (A * u[:, None])
    theta = np.linalg.solve(M, A.T @ (u * means))
    resid = means - A @ theta
    Q = ssw + float(np.sum(u * resid * resid))
    return theta, Q, M


def _neg2_profiled_reml(ratio: float, counts, means, ssw, A) -> float:
    N = counts.sum()
    m = A.shape[1]
    _, Q, M = _gls_profile(ratio, counts, means, ssw, A)
    if Q <= 0.0:
        return np.inf
    sign, logdet_M = np.linalg.slogdet(M)
    if sign <= 0:
        return np.inf
    return (N - m) * np.log(Q) + float(np.sum(np.log1p(ratio * counts))) + logdet_M


def restricted_loglik(panel: ReplicatePanel, tau2: float, sigma2: float) -> float:
    """Restricted log-likelihood of the random-intercept model at (tau2, sigma2).

    Uses the GLS fixed effects implied by the variance components.  Exposed
    so callers can probe the surface that ``fit_reml_profiled`` maximizes.
    """
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    if tau2 < 0:
        raise ValueError(f"tau2 must be >= 0, got {tau2}")
    counts, means, ssw = _suffstats(panel)
    A = _design(panel)
    N = counts.sum()
    m = A.shape[1]
    ratio = tau2 / sigma2
    _, Q, M = _gls_profile(ratio, counts, means, ssw, A)
    sign, logdet_M = np.linalg.slogdet(M)
    if sign <= 0:
        return -np.inf
    neg2 = (
        (N - m) * np.log(sigma2)
        + float(np.sum(np.log1p(ratio * counts)))
        + logdet_M
        + Q / sigma2
        + (N - m) * np.log(2.0 * np.pi)
    )
    return -0.5 * neg2


def _finalize(panel, counts, means, ssw, A, ratio, converged, n_iter) -> LmeFit:
    N = counts.sum()
    m = A.shape[1]
    theta, Q, _ = _gls_profile(ratio, counts, means, ssw, A)
    sigma2 = Q / (N - m)
    if sigma2 <= 0:
        raise DataError("degenerate panel: within-subject variance is zero")
    tau2 = ratio * sigma2
    return LmeFit(
        gamma0_hat=float(theta[0]),
        fixed_effects=theta,
        tau2_hat=float(tau2),
        sigma2_hat=float(sigma2),
        log_restricted_likelihood=restricted_loglik(panel, float(tau2), float(sigma2)),
        converged=converged,
        n_iterations=n_iter,
    )


def fit_balanced_anova(panel: ReplicatePanel) -> LmeFit:
    """One-way random-effects fit via between/within mean squares.

    Requires a fully observed panel with J >= 2 replicates for every
    subject and no stage-1 covariates beyond an intercept.  The estimates
    (grand mean, MSW, (MSB - MSW)/J) equal the REML optimum for this
    balanced model whenever MSB >= MSW.  When the between-subject variance
    truncates to zero the constrained REML optimum pools all variation, so
    sigma2 becomes the total sum of squares over N - 1 rather than MSW.
    """
    if not panel.is_balanced:
        raise DataError("panel is unbalanced; use fit_reml_profiled")
    if panel.stage1_covariates is not None and panel.stage1_covariates.shape[1] > 1:
        raise DataError("fit_balanced_anova supports an intercept only; use fit_reml_profiled")
    n, J = panel.values.shape
    if n < 2 or J < 2:
        raise DataError(f"need n >= 2 subjects and J >= 2 replicates, got {n}x{J}")
    grand = float(panel.values.mean())
    means = panel.values.mean(axis=1)
    msb = J * float(np.sum((means - grand) ** 2)) / (n - 1)
    msw = float(np.sum((panel.values - means[:, None]) ** 2)) / (n * (J - 1))
    if msw <= 0.0:
        raise DataError("degenerate panel: within-subject variance is zero")
    if msb >= msw:
        tau2 = (msb - msw) / J
    else:
        tau2 = 0.0
        msw = float(np.sum((panel.values - grand) ** 2)) / (n * J - 1)
    return LmeFit(
        gamma0_hat=grand,
        fixed_effects=np.array([grand]),
        tau2_hat=tau2,
        sigma2_hat=msw,
        log_restricted_likelihood=restricted_loglik(panel, tau2, msw),
        converged=True,
        n_iterations=0,
    )


def fit_reml_profiled(panel: ReplicatePanel) -> LmeFit:
    """Profiled REML fit of the random-intercept model.

    Fixed effects and sigma2 are profiled out in closed form, leaving a
    one-dimensional restricted-likelihood criterion in log(tau2/sigma2)
    that is minimized by bounded derivative-free search over [-30, 30].
    Agrees with ``fit_balanced_anova`` on balanced panels.

    Non-convergence of the search is reported via ``converged``, not an
    exception; panels where every subject has a single replicate raise
    ``IdentifiabilityError`` (sigma2 is not identified).
    """
    counts, means, ssw = _suffstats(panel)
    A = _design(panel)
    n = panel.n_subjects
    m = A.shape[1]
    if not np.any(counts >= 2):
        raise IdentifiabilityError(
            "every subject has a single replicate; within-subject variance is unidentifiable"
        )
    if n <= m:
        raise IdentifiabilityError(f"{n} subjects cannot identify {m} fixed effects plus tau2")
    if ssw <= 0.0:
        raise DataError("degenerate panel: within-subject variance is zero")

    def objective(t: float) -> float:
        return _neg2_profiled_reml(np.exp(t), counts, means, ssw, A)

    res = minimize_scalar(
        objective,
        bounds=_LOG_RATIO_BOUNDS,
        method="bounded",
        options={"xatol": _RATIO_TOL, "maxiter": _MAX_ITER},
    )
    t_opt = float(res.x)
    n_iter = int(res.nfev)
    converged = bool(res.success)
    ratio = float(np.exp(t_opt))
    # Lower bound means tau2 is at (numerically) zero; treat as a boundary
    # solution rather than a failure.
    if t_opt <= _LOG_RATIO_BOUNDS[0] + 1e-6 or objective(_LOG_RATIO_BOUNDS[0]) <= res.fun:
        ratio = 0.0
        converged = True
    return _finalize(panel, counts, means, ssw, A, ratio, converged, n_iter)


def blup_oracle(panel: ReplicatePanel, vc: VarianceComponents) -> BlupVector:
    """BLUP-corrected exposures using externally supplied variance components.

    For subject i with J_i observed replicates and observed mean Wbar_i the
    predictor of the scaled latent exposure is::

        gamma1^2*sigma_x2 * J_i * (Wbar_i - gamma0) / (v_w + J_i*v_b)

    which is then divided by gamma1.  This scalar form equals the matrix
    form ``gamma1^2*sigma_x2 * 1^T V_i^{-1} (W_i - gamma0*1)`` with V_i the
    marginal covariance restricted to the observed replicates.
    """
    if vc.gamma1 == 0:
        raise ValueError("gamma1 = 0 leaves the exposure unidentified")
    counts = panel.observed_counts().astype(float)
    means = panel.observed_means()
    signal = vc.gamma1**2 * vc.sigma_x2
    shrink = signal * counts / (vc.v_w + counts * vc.v_b)
    x_hat = shrink * (means - vc.gamma0) / vc.gamma1
    return BlupVector(x_hat=x_hat, shrinkage=shrink, source="oracle")


def blup_empirical(panel: ReplicatePanel, fit: LmeFit, gamma1: float = 1.0) -> BlupVector:
    """BLUP-corrected exposures using the stage-1 REML/ANOVA estimates.

    Shrinks the subject-mean residual from the fixed-effect fit by
    ``lambda_i = tau2 / (tau2 + sigma2/J_i)`` and rescales by 1/gamma1.
    The between-subject variance estimate absorbs any correlated error
    share (rho*sigma_u2), so with correlated replicate errors this differs
    from ``blup_oracle`` by design.
    """
    if gamma1 == 0:
        raise ValueError("gamma1 = 0 leaves the exposure unidentified")
    if not fit.converged:
        raise ValueError("stage-1 fit did not converge; refusing to construct BLUPs")
    counts = panel.observed_counts().astype(float)
    resid = panel.observed_means() - _design(panel) @ fit.fixed_effects
    lam = fit.tau2_hat * counts / (fit.tau2_hat * counts + fit.sigma2_hat)
    x_hat = lam * resid / gamma1
    return BlupVector(x_hat=x_hat, shrinkage=lam, source="empirical")
