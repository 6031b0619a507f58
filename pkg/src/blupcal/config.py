"""Simulation configuration: flat TOML with an optional [grid] table.

Scalar keys are Scenario fields; the [grid] table maps Scenario fields to
lists of levels that are crossed into the scenario list.  ``methods``
names the pipelines to run.  Two study configurations ship with the
package (``paper_continuous``, ``paper_binary``) and can be referenced by
name instead of a path.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .model_core import Scenario
from .sim_engine import scenario_grid
from .two_stage import METHODS

_SCENARIO_KEYS = tuple(f.name for f in fields(Scenario) if f.name != "scenario_id")


@dataclass(frozen=True)
class SimulationConfig:
    """Validated simulation configuration."""

    scalars: dict
    grid: dict
    methods: tuple[str, ...]
    source: str

    def scenarios(self) -> list[Scenario]:
        try:
            base = Scenario(**self.scalars, **{k: v[0] for k, v in self.grid.items()})
            return scenario_grid(base, self.grid)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{self.source}: {exc}") from exc


def bundled_config_path(name: str) -> Path:
    """Filesystem path of a configuration shipped with the package."""
    ref = resources.files("blupcal").joinpath(f"configs/{name}.toml")
    with resources.as_file(ref) as p:
        return Path(p)


def _resolve(path_or_name: str) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    if "/" not in str(path_or_name) and not str(path_or_name).endswith(".toml"):
        ref = resources.files("blupcal").joinpath(f"configs/{path_or_name}.toml")
        if ref.is_file():
            return bundled_config_path(str(path_or_name))
    raise ConfigError(f"config file not found: {path_or_name}")


def load_simulation_config(path_or_name) -> SimulationConfig:
    """Load and validate a simulation config from a path or bundled name."""
    path = _resolve(str(path_or_name))
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path.name}: invalid TOML: {exc}") from exc

    scalars: dict = {}
    grid: dict = {}
    methods: tuple[str, ...] | None = None
    for key, value in doc.items():
        if key == "methods":
            if not isinstance(value, list) or not value:
                raise ConfigError(f"{path.name}: methods: must be a nonempty list")
            bad = [m for m in value if m not in METHODS]
            if bad:
                raise ConfigError(f"{path.name}: methods: unknown method(s) {bad}; valid: {list(METHODS)}")
            if len(set(value)) != len(value):
                raise ConfigError(f"{path.name}: methods: duplicate entries in {value}")
            methods = tuple(value)
        elif key == "grid":
            if not isinstance(value, dict):
                raise ConfigError(f"{path.name}: grid: must be a table of lists")
            for axis, levels in value.items():
                if axis not in _SCENARIO_KEYS:
                    raise ConfigError(f"{path.name}: grid.{axis}: unknown scenario field")
                if not isinstance(levels, list) or not levels:
                    raise ConfigError(f"{path.name}: grid.{axis}: must be a nonempty list of levels")
                grid[axis] = list(levels)
        elif key in _SCENARIO_KEYS:
            if isinstance(value, (dict, list)):
                raise ConfigError(f"{path.name}: {key}: expected a scalar (grids go under [grid])")
            scalars[key] = value
        else:
            raise ConfigError(f"{path.name}: {key}: unknown configuration key")
    if methods is None:
        raise ConfigError(f"{path.name}: methods: required key is missing")
    dup = set(scalars) & set(grid)
    if dup:
        raise ConfigError(f"{path.name}: {sorted(dup)}: given both as scalar and grid axis")

    cfg = SimulationConfig(scalars=scalars, grid=grid, methods=methods, source=path.name)
    cfg.scenarios()  # validate eagerly so errors surface at load time
    return cfg
