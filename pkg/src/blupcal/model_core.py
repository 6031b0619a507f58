"""Domain types and compound-symmetry covariance algebra.

Everything downstream (stage-1 mixed-model fitting, BLUP construction,
the simulation harness) works in terms of the types defined here:

* ``Scenario`` — full parameterization of one simulation cell.
* ``VarianceComponents`` — measurement-model variance parameters and their
  identifiable reductions ``v_b`` (between-subject) and ``v_w``
  (within-subject).
* ``ReplicatePanel`` / ``OutcomePanel`` — subject-by-replicate exposure
  measurements with a missingness mask, and the aligned outcome data.
* ``TwoStageFit`` / ``McSummary`` — estimation and Monte Carlo results.

All types are immutable after construction and safe to share across
threads without synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("linear", "logistic")


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class VarianceComponents:
    """Measurement-model variance parameters.

    The replicate error vector for one subject has an exchangeable
    covariance: common variance ``sigma_u2`` and common correlation ``rho``
    for every pair of replicates.  Together with the latent-exposure scale
    ``gamma1**2 * sigma_x2`` this determines the two identifiable pieces of
    the marginal covariance of the observed replicates:

    * ``v_b = gamma1**2 * sigma_x2 + rho * sigma_u2`` (between-subject),
    * ``v_w = (1 - rho) * sigma_u2`` (within-subject).
    """

    gamma0: float
    gamma1: float
    sigma_x2: float
    sigma_u2: float
    rho: float

    def __post_init__(self):
        if not self.sigma_x2 >= 0:
            raise ValueError(f"sigma_x2 must be >= 0, got {self.sigma_x2}")
        if not self.sigma_u2 > 0:
            raise ValueError(f"sigma_u2 must be > 0, got {self.sigma_u2}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")

    @property
    def v_b(self) -> float:
        return self.gamma1**2 * self.sigma_x2 + self.rho * self.sigma_u2

    @property
    def v_w(self) -> float:
        return (1.0 - self.rho) * self.sigma_u2


@dataclass(frozen=True)
class Scenario:
    """Parameterization of one simulation cell.

    SDs are taken as inputs (``sigma_x``, ``sigma_c``, ``sigma_u``,
    ``sigma_eps``); variances are derived internally.  ``sigma_eps`` is
    used by the linear family only.  ``scenario_id`` is derived from the
    design factors when left empty.
    """

    family: str
    n: int
    J: int = 7
    gamma0: float = 1.0
    gamma1: float = 1.0
    mu_x: float = 0.0
    sigma_x: float = 2.0
    mu_c: float = 1.0
    sigma_c: float = 1.0
    sigma_u: float = 1.0
    rho: float = 0.1
    rho_xc: float = 0.0
    beta0: float = 10.0
    beta_x: float = 2.95
    beta_c: float = 3.0
    sigma_eps: float = 1.0
    p_miss: float = 0.0
    n_reps: int = 1000
    seed: int = 0
    scenario_id: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.n < 3:
            raise ValueError(f"n must be >= 3, got {self.n}")
        if self.J < 1:
            raise ValueError(f"J must be >= 1, got {self.J}")
        for name in ("sigma_x", "sigma_c", "sigma_u"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.family == "linear" and not self.sigma_eps > 0:
            raise ValueError(f"sigma_eps must be > 0 for the linear family, got {self.sigma_eps}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if not abs(self.rho_xc) < 1.0:
            raise ValueError(f"rho_xc must be in (-1, 1), got {self.rho_xc}")
        if not 0.0 <= self.p_miss < 1.0:
            raise ValueError(f"p_miss must be in [0, 1), got {self.p_miss}")
        if self.n_reps < 1:
            raise ValueError(f"n_reps must be >= 1, got {self.n_reps}")
        if not self.scenario_id:
            object.__setattr__(self, "scenario_id", self._derive_id())

    def _derive_id(self) -> str:
        parts = [
            self.family,
            f"n={self.n}",
            f"J={self.J}",
            f"g1={self.gamma1:g}",
            f"rho={self.rho:g}",
            f"rxc={self.rho_xc:g}",
        ]
        if self.p_miss > 0:
            parts.append(f"pm={self.p_miss:g}")
        return ";".join(parts)

    def variance_components(self) -> VarianceComponents:
        return VarianceComponents(
            gamma0=self.gamma0,
            gamma1=self.gamma1,
            sigma_x2=self.sigma_x**2,
            sigma_u2=self.sigma_u**2,
            rho=self.rho,
        )

    def true_coefficients(self) -> np.ndarray:
        """Outcome-model truth in design order (intercept, exposure, covariate)."""
        return np.array([self.beta0, self.beta_x, self.beta_c])


@dataclass(frozen=True)
class ReplicatePanel:
    """n-subject by J-replicate exposure measurements with missingness mask.

    ``values[i, j]`` is subject i's j-th replicate (e.g. minutes/day of a
    daily summary); entries where ``observed`` is False are ignored by all
    consumers.  Optional ``stage1_covariates`` hold subject-level fixed
    effects for the measurement model (constant within subject, first
    column identically 1).
    """

    subject_ids: tuple
    values: np.ndarray
    observed: np.ndarray
    stage1_covariates: np.ndarray | None = None

    def __post_init__(self):
        values = _readonly(np.asarray(self.values, dtype=float))
        observed = _readonly(np.asarray(self.observed, dtype=bool))
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "observed", observed)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        if observed.shape != values.shape:
            raise ValueError(f"observed mask shape {observed.shape} != values shape {values.shape}")
        if len(self.subject_ids) != values.shape[0]:
            raise ValueError(
                f"{len(self.subject_ids)} subject ids for {values.shape[0]} rows"
            )
        counts = observed.sum(axis=1)
        if np.any(counts == 0):
            bad = [self.subject_ids[i] for i in np.flatnonzero(counts == 0)[:5]]
            raise ValueError(f"subjects with zero observed replicates: {bad}")
        if self.stage1_covariates is not None:
            cov = _readonly(np.asarray(self.stage1_covariates, dtype=float))
            object.__setattr__(self, "stage1_covariates", cov)
            if cov.ndim != 2 or cov.shape[0] != values.shape[0]:
                raise ValueError(
                    f"stage1_covariates shape {cov.shape} incompatible with {values.shape[0]} subjects"
                )
            if not np.all(cov[:, 0] == 1.0):
                raise ValueError("first column of stage1_covariates must be identically 1")

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def n_replicates(self) -> int:
        return self.values.shape[1]

    @property
    def is_balanced(self) -> bool:
        """True when every replicate slot is observed (identical J for all)."""
        return bool(self.observed.all())

    def observed_counts(self) -> np.ndarray:
        return self.observed.sum(axis=1)

    def observed_means(self) -> np.ndarray:
        filled = np.where(self.observed, self.values, 0.0)
        return filled.sum(axis=1) / self.observed_counts()

    def within_sumsq(self) -> float:
        """Total sum of squared deviations from each subject's observed mean."""
        dev = np.where(self.observed, self.values - self.observed_means()[:, None], 0.0)
        return float(np.sum(dev * dev))

    def take(self, indices) -> "ReplicatePanel":
        """Subset subjects by position, preserving replicate layout."""
        idx = np.asarray(indices)
        return ReplicatePanel(
            subject_ids=tuple(self.subject_ids[i] for i in idx),
            values=self.values[idx],
            observed=self.observed[idx],
            stage1_covariates=None if self.stage1_covariates is None else self.stage1_covariates[idx],
        )


@dataclass(frozen=True)
class OutcomePanel:
    """Outcome vector and error-free covariates, aligned with a ReplicatePanel."""

    subject_ids: tuple
    y: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = _readonly(np.asarray(self.y, dtype=float))
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        cov = _readonly(cov)
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariates", cov)
        if y.ndim != 1 or len(self.subject_ids) != y.shape[0]:
            raise ValueError(f"y must be 1-D with one entry per subject, got shape {y.shape}")
        if cov.shape[0] != y.shape[0]:
            raise ValueError(f"covariates rows {cov.shape[0]} != n subjects {y.shape[0]}")
        names = self.covariate_names or tuple(f"c{k + 1}" for k in range(cov.shape[1]))
        if len(names) != cov.shape[1]:
            raise ValueError(f"{len(names)} covariate names for {cov.shape[1]} columns")
        object.__setattr__(self, "covariate_names", tuple(names))

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def validate_binary(self):
        finite = self.y[np.isfinite(self.y)]
        if not np.all(np.isin(finite, (0.0, 1.0))):
            raise ValueError("logistic outcome must be coded 0/1")

    def take(self, indices) -> "OutcomePanel":
        idx = np.asarray(indices)
        return OutcomePanel(
            subject_ids=tuple(self.subject_ids[i] for i in idx),
            y=self.y[idx],
            covariates=self.covariates[idx],
            covariate_names=self.covariate_names,
        )


@dataclass(frozen=True)
class TwoStageFit:
    """Result of one two-stage estimation run."""

    method: str
    coefficients: np.ndarray
    asymptotic_se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    converged: bool
    n_used: int
    stage1_fit: object | None = None  # LmeFit when an empirical stage-1 fit was run

    def __post_init__(self):
        for name in ("coefficients", "asymptotic_se", "ci_lower", "ci_upper"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=float)))


@dataclass(frozen=True)
class ParamSummary:
    """Monte Carlo metrics for a single outcome-model parameter."""

    parameter: str
    true_value: float
    mean_estimate: float
    mean_asymptotic_se: float
    empirical_se: float
    relative_bias_pct: float
    coverage_pct: float


@dataclass(frozen=True)
class McSummary:
    """Per-method Monte Carlo summary over all replications of one scenario."""

    scenario_id: str
    method: str
    params: tuple[ParamSummary, ...]
    n_reps: int
    n_converged: int


def build_sigma_u(vc: VarianceComponents, J: int) -> np.ndarray:
    """Exchangeable replicate-error covariance: sigma_u2 on the diagonal,
    rho*sigma_u2 everywhere off it.

    Positive definite for every J >= 1 given rho in [0, 1).
    """
    if J < 1:
        raise ValueError(f"J must be >= 1, got {J}")
    off = vc.rho * vc.sigma_u2
    out = np.full((J, J), off)
    np.fill_diagonal(out, vc.sigma_u2)
    return out


def build_marginal_cov(vc: VarianceComponents, J: int) -> np.ndarray:
    """Marginal covariance of one subject's replicate vector.

    Equals ``v_w * I + v_b * 11^T``: diagonal ``gamma1^2*sigma_x2 + sigma_u2``,
    off-diagonal ``gamma1^2*sigma_x2 + rho*sigma_u2``.
    """
    if J < 1:
        raise ValueError(f"J must be >= 1, got {J}")
    out = np.full((J, J), vc.v_b)
    np.fill_diagonal(out, vc.v_b + vc.v_w)
    return out
