import numpy as np

from blupcal import Scenario, generate_dataset
from blupcal.data_io import write_replicates_csv


def write_study_fixture(tmp_path, scenario: Scenario, rep_index: int = 0, outcome: str = "bmi"):
    """Materialize one generated dataset as replicates + outcomes CSV files."""
    ds = generate_dataset(scenario, rep_index)
    ids = [f"s{i:05d}" for i in range(scenario.n)]
    reps_path = tmp_path / "replicates.csv"
    lines = ["subject_id,replicate_index,value"]
    for i, sid in enumerate(ids):
        for j in range(scenario.J):
            if ds.panel.observed[i, j]:
                lines.append(f"{sid},{j + 1},{float(ds.panel.values[i, j])!r}")
    reps_path.write_text("\n".join(lines) + "\n")

    outc_path = tmp_path / "outcomes.csv"
    lines = [f"subject_id,{outcome},age"]
    for i, sid in enumerate(ids):
        lines.append(f"{sid},{float(ds.outcomes.y[i])!r},{float(ds.outcomes.covariates[i, 0])!r}")
    outc_path.write_text("\n".join(lines) + "\n")
    return reps_path, outc_path


def write_device_pair(tmp_path, n=2000, target_r=0.64, seed=42):
    """Two single-replicate device files with a planted correlation."""
    rng = np.random.default_rng(seed)
    shared = 2.0 * rng.standard_normal(n)
    noise_var = 4.0 / target_r - 4.0
    a = 598.6 + shared + np.sqrt(noise_var) * rng.standard_normal(n)
    b = 654.9 + shared + np.sqrt(noise_var) * rng.standard_normal(n)
    paths = []
    for name, v in (("device_a.csv", a), ("device_b.csv", b)):
        path = tmp_path / name
        lines = ["subject_id,replicate_index,value"]
        for i in range(n):
            lines.append(f"p{i:05d},1,{float(v[i])!r}")
        path.write_text("\n".join(lines) + "\n")
        paths.append(path)
    return tuple(paths)


__all__ = ["write_study_fixture", "write_device_pair", "write_replicates_csv"]
