"""CSV ingestion and emission.

Replicate files are long format (``subject_id,replicate_index,value``),
one row per observed day; absent rows are missing days.  All numeric
output is serialized with 17 significant digits so values round-trip
bit-exactly and reruns are byte-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import DataError
from .model_core import OutcomePanel, ReplicatePanel

REPLICATES_HEADER = ("subject_id", "replicate_index", "value")

SUMMARY_COLUMNS = (
    "scenario_id",
    "family",
    "n",
    "J",
    "gamma1",
    "rho",
    "rho_xc",
    "p_miss",
    "method",
    "parameter",
    "true_value",
    "mean_estimate",
    "mean_asymptotic_se",
    "empirical_se",
    "relative_bias_pct",
    "coverage_pct",
    "n_reps",
    "n_converged",
)

FIGDATA_KEYS = ("family", "rho", "rho_xc", "gamma1", "n", "method", "parameter")


def format_value(v) -> str:
    """Deterministic cell formatting: ints verbatim, floats to 17 sig digits."""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def read_replicates_csv(path) -> ReplicatePanel:
    """Read a long-format replicates file into a rectangular masked panel.

    Subjects are ordered by id (string order) and each subject's values by
    replicate index, packed into the leading columns of its row.  Rows with
    an empty value field count as missing days; a subject whose rows are
    all empty is rejected.
    """
    path = Path(path)
    per_subject: dict[str, dict[int, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != REPLICATES_HEADER:
            raise DataError(
                f"{path.name}: header must be {','.join(REPLICATES_HEADER)}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DataError(f"{path.name}:{lineno}: expected 3 fields, got {len(row)}")
            sid = row[0].strip()
            if not sid:
                raise DataError(f"{path.name}:{lineno}: empty subject_id")
            try:
                rep = int(row[1])
            except ValueError:
                raise DataError(f"{path.name}:{lineno}: replicate_index {row[1]!r} is not an integer")
            slots = per_subject.setdefault(sid, {})
            if rep in slots:
                raise DataError(f"{path.name}:{lineno}: duplicate (subject, replicate) key ({sid}, {rep})")
            raw = row[2].strip()
            if raw == "":
                slots[rep] = np.nan
                continue
            try:
                slots[rep] = float(raw)
            except ValueError:
                raise DataError(f"{path.name}:{lineno}: value {row[2]!r} is not numeric")
    if not per_subject:
        raise DataError(f"{path.name}: no replicate rows")

    ids = sorted(per_subject)
    usable = {sid: [v for _, v in sorted(per_subject[sid].items()) if np.isfinite(v)] for sid in ids}
    empty = [sid for sid in ids if not usable[sid]]
    if empty:
        raise DataError(f"{path.name}: subjects with zero usable replicate values: {empty[:5]}")
    J = max(len(v) for v in usable.values())
    values = np.zeros((len(ids), J))
    observed = np.zeros((len(ids), J), dtype=bool)
    for i, sid in enumerate(ids):
        vals = usable[sid]
        values[i, : len(vals)] = vals
        observed[i, : len(vals)] = True
    return ReplicatePanel(subject_ids=tuple(ids), values=values, observed=observed)


def write_replicates_csv(path, panel: ReplicatePanel) -> None:
    """Write a panel back to long format (observed slots only)."""
    lines = [",".join(REPLICATES_HEADER)]
    for i, sid in enumerate(panel.subject_ids):
        for j in range(panel.n_replicates):
            if panel.observed[i, j]:
                lines.append(f"{sid},{j + 1},{format_value(panel.values[i, j])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_outcomes_csv(path, outcome: str, covariates: list[str]) -> dict[str, tuple[float, list[float]]]:
    """Read the outcomes file, returning subject_id -> (y, covariate values).

    Unknown outcome/covariate column names and duplicate subject ids are
    rejected; empty numeric fields become NaN (dropped listwise later).
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "subject_id" not in cols:
            raise DataError(f"{path.name}: missing required column 'subject_id' (has: {cols})")
        for name in [outcome, *covariates]:
            if name not in cols:
                raise DataError(f"{path.name}: unknown column {name!r} (has: {cols})")
        out: dict[str, tuple[float, list[float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            sid = (row["subject_id"] or "").strip()
            if not sid:
                raise DataError(f"{path.name}:{lineno}: empty subject_id")
            if sid in out:
                raise DataError(f"{path.name}:{lineno}: duplicate subject_id {sid!r}")

            def parse(name: str) -> float:
                raw = (row[name] or "").strip()
                if raw == "":
                    return np.nan
                try:
                    return float(raw)
                except ValueError:
                    raise DataError(f"{path.name}:{lineno}: column {name!r} value {raw!r} is not numeric")

            out[sid] = (parse(outcome), [parse(c) for c in covariates])
    if not out:
        raise DataError(f"{path.name}: no outcome rows")
    return out


def align_outcomes(
    panel: ReplicatePanel,
    outcome_map: dict[str, tuple[float, list[float]]],
    covariate_names: list[str],
) -> tuple[ReplicatePanel, OutcomePanel]:
    """Restrict to subjects present in both files, in panel (sorted) order."""
    pos = {sid: i for i, sid in enumerate(panel.subject_ids)}
    ids = [sid for sid in panel.subject_ids if sid in outcome_map]
    if not ids:
        raise DataError("no subjects appear in both the replicates and outcomes files")
    idx = [pos[sid] for sid in ids]
    sub = panel.take(idx)
    y = np.array([outcome_map[sid][0] for sid in ids])
    C = np.array([outcome_map[sid][1] for sid in ids]) if covariate_names else np.empty((len(ids), 0))
    outcomes = OutcomePanel(
        subject_ids=tuple(ids),
        y=y,
        covariates=C,
        covariate_names=tuple(covariate_names),
    )
    return sub, outcomes


def write_csv(path, columns: tuple[str, ...], rows: list[dict]) -> None:
    """Write rows under a fixed column order with deterministic formatting."""
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_value(row[c]) for c in columns))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
