"""Between-device agreement diagnostics.

Works on subject-level means of the replicate measurements: per-device
distribution summaries, Pearson correlation over the overlapping
subjects, and Bland-Altman limits of agreement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DataError
from .glm import Z_95
from .model_core import ReplicatePanel


@dataclass(frozen=True)
class DeviceSummary:
    """Distribution of one device's subject-level daily means."""

    n_subjects: int
    minimum: float
    median: float
    mean: float
    sd: float
    maximum: float


@dataclass(frozen=True)
class AgreementReport:
    """Agreement between two devices' subject-level means (a minus b)."""

    device_a: DeviceSummary
    device_b: DeviceSummary
    n_overlap: int
    pearson_r: float
    pearson_p: float
    mean_difference: float
    sd_difference: float
    loa_lower: float
    loa_upper: float


def _summarize(panel: ReplicatePanel) -> DeviceSummary:
    means = panel.observed_means()
    return DeviceSummary(
        n_subjects=panel.n_subjects,
        minimum=float(means.min()),
        median=float(np.median(means)),
        mean=float(means.mean()),
        sd=float(means.std(ddof=1)) if means.size > 1 else 0.0,
        maximum=float(means.max()),
    )


def compare_devices(panel_a: ReplicatePanel, panel_b: ReplicatePanel) -> AgreementReport:
    """Agreement report over the subjects present in both panels.

    Device summaries cover each panel's full subject set; correlation and
    Bland-Altman statistics use the overlap only.  Limits of agreement are
    mean difference +/- 1.959964 * SD of the differences.
    """
    means_a = dict(zip(panel_a.subject_ids, panel_a.observed_means()))
    means_b = dict(zip(panel_b.subject_ids, panel_b.observed_means()))
    overlap = sorted(set(means_a) & set(means_b), key=str)
    if not overlap:
        raise DataError("no overlapping subjects between the two devices")
    a = np.array([means_a[s] for s in overlap])
    b = np.array([means_b[s] for s in overlap])
    if len(overlap) >= 3 and a.std() > 0 and b.std() > 0:
        r, p = stats.pearsonr(a, b)
    else:
        r, p = np.nan, np.nan
    diff = a - b
    md = float(diff.mean())
    sd = float(diff.std(ddof=1)) if diff.size > 1 else 0.0
    return AgreementReport(
        device_a=_summarize(panel_a),
        device_b=_summarize(panel_b),
        n_overlap=len(overlap),
        pearson_r=float(r),
        pearson_p=float(p),
        mean_difference=md,
        sd_difference=sd,
        loa_lower=md - Z_95 * sd,
        loa_upper=md + Z_95 * sd,
    )


def report_as_dict(report: AgreementReport) -> dict:
    """JSON-ready representation of an agreement report."""

    def device(d: DeviceSummary) -> dict:
        return {
            "n_subjects": d.n_subjects,
            "min": d.minimum,
            "median": d.median,
            "mean": d.mean,
            "sd": d.sd,
            "max": d.maximum,
        }

    return {
        "device_a": device(report.device_a),
        "device_b": device(report.device_b),
        "n_overlap": report.n_overlap,
        "pearson_r": report.pearson_r,
        "pearson_p": report.pearson_p,
        "bland_altman": {
            "mean_difference": report.mean_difference,
            "sd_difference": report.sd_difference,
            "loa_lower": report.loa_lower,
            "loa_upper": report.loa_upper,
        },
    }
