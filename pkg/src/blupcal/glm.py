"""Stage-2 outcome-model fitting: OLS and IRLS with Wald intervals.

Normal equations are solved through a pivoted QR factorization rather
than explicit inversion; rank deficiency is reported with the offending
column.  The 95% normal quantile is the fixed constant 1.959964; other
levels use a rational approximation of the normal quantile so interval
construction carries no special-functions dependency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import qr as _qr, solve_triangular

from .errors import DataError, RankDeficientError

Z_95 = 1.959964

_IRLS_MAX_ITER = 50
_IRLS_COEF_TOL = 1e-8
_IRLS_DEV_TOL = 1e-10
_DIVERGENCE_NORM = 1e3


@dataclass(frozen=True)
class GlmFit:
    """Fitted outcome model with asymptotic covariance.

    ``dispersion`` is the residual variance estimate for the linear family
    and 1.0 for logistic.
    """

    coefficients: np.ndarray
    covariance: np.ndarray
    family: str
    converged: bool
    n_iterations: int
    dispersion: float


def _check_design(design: np.ndarray, y: np.ndarray):
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2:
        raise ValueError(f"design must be 2-D, got shape {design.shape}")
    n, q = design.shape
    if y.shape != (n,):
        raise ValueError(f"y shape {y.shape} incompatible with design {design.shape}")
    if n <= q:
        raise ValueError(f"need more observations than columns, got n={n}, q={q}")
    return design, y


def _pivoted_qr_full_rank(design: np.ndarray):
    """QR with column pivoting; raises RankDeficientError naming the column."""
    n, q = design.shape
    Q, R, piv = _qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, q) * np.finfo(float).eps * (diag[0] if diag[0] > 0 else 1.0)
    deficient = np.flatnonzero(diag <= tol)
    if diag[0] == 0.0 or deficient.size:
        k = 0 if diag[0] == 0.0 else int(deficient[0])
        raise RankDeficientError(column=int(piv[k]))
    return Q, R, piv


def _solve_via_qr(design: np.ndarray, target: np.ndarray):
    """Least-squares solve and (D^T D)^{-1}, both from one pivoted QR."""
    Q, R, piv = _pivoted_qr_full_rank(design)
    q = design.shape[1]
    beta_piv = solve_triangular(R, Q.T @ target, lower=False)
    Rinv = solve_triangular(R, np.eye(q), lower=False)
    xtx_inv_piv = Rinv @ Rinv.T
    inv_piv = np.empty_like(piv)
    inv_piv[piv] = np.arange(q)
    beta = beta_piv[inv_piv]
    xtx_inv = xtx_inv_piv[np.ix_(inv_piv, inv_piv)]
    return beta, xtx_inv


def fit_linear_ols(design: np.ndarray, y: np.ndarray) -> GlmFit:
    """Ordinary least squares with covariance dispersion*(D^T D)^{-1}.

    ``dispersion`` is RSS/(n - q).
    """
    design, y = _check_design(design, y)
    n, q = design.shape
    beta, xtx_inv = _solve_via_qr(design, y)
    resid = y - design @ beta
    dispersion = float(resid @ resid) / (n - q)
    return GlmFit(
        coefficients=beta,
        covariance=dispersion * xtx_inv,
        family="linear",
        converged=True,
        n_iterations=0,
        dispersion=dispersion,
    )


def _deviance(y: np.ndarray, p: np.ndarray) -> float:
    eps = 1e-12
    p = np.clip(p, eps, 1.0 - eps)
    return -2.0 * float(np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def fit_logistic_irls(design: np.ndarray, y: np.ndarray) -> GlmFit:
    """Bernoulli maximum likelihood under the logit link via Newton steps.

    Stops when the max absolute coefficient change drops below 1e-8 or the
    relative deviance change below 1e-10.  Separation is detected as a
    diverging coefficient norm (> 1e3) or failure to converge within 50
    iterations and reported through ``converged`` rather than an exception.
    """
    design, y = _check_design(design, y)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("logistic outcome must be coded 0/1")
    if y.min() == y.max():
        raise DataError("logistic outcome has a single class; coefficients are unidentifiable")
    _pivoted_qr_full_rank(design)  # fail fast with the offending column

    q = design.shape[1]
    beta = np.zeros(q)
    eta = design @ beta
    p = 1.0 / (1.0 + np.exp(-eta))
    dev = _deviance(y, p)
    converged = False
    it = 0
    for it in range(1, _IRLS_MAX_ITER + 1):
        w = np.clip(p * (1.0 - p), 1e-10, None)
        info = design.T @ (design * w[:, None])
        try:
            step = np.linalg.solve(info, design.T @ (y - p))
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        if np.max(np.abs(beta)) > _DIVERGENCE_NORM:
            break
        eta = design @ beta
        p = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
        new_dev = _deviance(y, p)
        # A vanishing deviance change only signals an optimum while the fitted
        # logits are finite; under separation the deviance flattens at 0 while
        # the coefficients still diverge.
        dev_flat = abs(dev - new_dev) < _IRLS_DEV_TOL * (abs(dev) + 1.0) and np.max(np.abs(eta)) < 30.0
        if np.max(np.abs(step)) < _IRLS_COEF_TOL or dev_flat:
            dev = new_dev
            converged = True
            break
        dev = new_dev
    w = np.clip(p * (1.0 - p), 1e-10, None)
    info = design.T @ (design * w[:, None])
    try:
        covariance = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        covariance = np.full((q, q), np.nan)
        converged = False
    return GlmFit(
        coefficients=beta,
        covariance=covariance,
        family="logistic",
        converged=converged,
        n_iterations=it,
        dispersion=1.0,
    )


def normal_quantile(p: float) -> float:
    """Standard normal quantile by rational approximation (AS 241, PPND16).

    Absolute error is far below the 1e-9 required of interval construction.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r
                    + 6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r
                  + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r
                + 1.3314166789178437745e2) * r + 3.3871328727963666080e0)
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r
                    + 3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r
                  + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r
                + 4.2313330701600911252e1) * r + 1.0)
        return q * num / den
    r = p if q < 0 else 1.0 - p
    r = np.sqrt(-np.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
                    + 2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r
                  + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r
                + 4.63033784615654529590e0) * r + 1.42343711074968357734e0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
                    + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
                  + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r
                + 2.05319162663775882187e0) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
                  + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r
                + 5.46378491116411436990e0) * r + 6.65790464350110377720e0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
                    + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
                  + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
                + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    return -val if q < 0 else val


def wald_interval(fit: GlmFit, level: float = 0.95):
    """Per-coefficient Wald bounds: estimate +/- z * SE.

    The 0.95 multiplier is the fixed constant 1.959964.
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if not fit.converged:
        raise ValueError("cannot build Wald intervals from a non-converged fit")
    z = Z_95 if level == 0.95 else normal_quantile(0.5 * (1.0 + level))
    se = np.sqrt(np.clip(np.diag(fit.covariance), 0.0, None))
    half = z * se
    return fit.coefficients - half, fit.coefficients + half
