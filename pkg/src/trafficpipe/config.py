"""Run configuration: a ``key = value`` text file with command-line overrides.

Example::

    # paths are relative to the working directory
    nodes = data/nodes.csv
    edges = data/edges.csv
    out_dir = out/
    seed = 7
    workers = 4
    alpha = 0.15
    dt = 0.5
    car_a_max = 1.4

Unknown keys are rejected so typos do not go unnoticed.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

_VEHICLE_FIELDS = ("a_max", "b_comf", "T", "s0", "length", "speed_factor")


@dataclass
class RunConfig:
    # inputs
    nodes: Path | None = None
    edges: Path | None = None
    zones: Path | None = None
    trips: Path | None = None
    demand: Path | None = None
    departures: Path | None = None
    controls: Path | None = None
    vehicles: Path | None = None
    edge_series: Path | None = None
    # outputs
    out_dir: Path | None = None
    graphml: bool = False
    # edge attributes
    alpha: float = 0.15
    beta: float = 4.0
    # assignment
    max_iterations: int = 200
    gap_tolerance: float = 1e-4
    line_search_tolerance: float = 1e-10
    demand_unit: str = "vps"
    # microsim
    dt: float = 0.5
    n_iter: int = 4
    lc_scale_m: float = 300.0
    lc_gain_m: float = 10.0
    phase_duration: float = 10.0
    truck_share: float = 0.1
    max_time: float | None = None
    check_atlas: bool = False
    vehicle_overrides: dict = dataclasses.field(default_factory=dict)  # "car_a_max" -> 1.4
    # report
    bins: int = 30
    # common
    seed: int | None = None
    workers: int = 1

    def validate(self, required=(), need_seed: bool = False) -> RunConfig:
        """Check values and that the listed input paths exist."""
        for name in required:
            if getattr(self, name) is None:
                raise ConfigError(f"missing required setting {name!r}")
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Path) and f.name != "out_dir" and not value.is_file():
                raise ConfigError(f"{f.name}: file not found: {value}")
        if self.out_dir is not None and self.out_dir.exists() and not self.out_dir.is_dir():
            raise ConfigError(f"out_dir exists and is not a directory: {self.out_dir}")
        if need_seed and self.seed is None:
            raise ConfigError("a seed is required for simulation runs")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.demand_unit not in ("vps", "vph"):
            raise ConfigError("demand_unit must be vps or vph")
        if not self.alpha >= 0 or not self.beta >= 1:
            raise ConfigError("alpha must be >= 0 and beta >= 1")
        if self.n_iter < 1 or self.bins < 1:
            raise ConfigError("n_iter and bins must be positive")
        return self


def _convert(name: str, raw: str, kind):
    text = raw.strip()
    kind = str(kind)
    try:
        if "Path" in kind:
            return Path(text) if text else None
        if kind == "bool":
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "int" in kind and "float" not in kind:
            return None if text == "" and "None" in kind else int(text)
        if "float" in kind:
            return None if text == "" and "None" in kind else float(text)
        return text
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into typed :class:`RunConfig` field values."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    kinds = {f.name: f.type for f in fields(RunConfig)}
    out: dict = {}
    overrides: dict = {}
    for key, raw in parser["run"].items():
        cls, _, attr = key.partition("_")
        if cls in ("car", "truck") and attr in _VEHICLE_FIELDS:
            overrides[key] = _convert(key, raw, "float")
        elif key in kinds and key != "vehicle_overrides":
            out[key] = _convert(key, raw, kinds[key])
        else:
            raise ConfigError(f"{source}: unknown setting {key!r}")
    if overrides:
        out["vehicle_overrides"] = overrides
    return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Settings from ``path`` (if any), then non-``None`` ``overrides`` on top."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text(), str(path)))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "vehicle_overrides":
            values.setdefault("vehicle_overrides", {}).update(value)
        else:
            values[key] = value
    return RunConfig(**values)


def vehicle_params(cfg: RunConfig):
    """Car and truck parameters with config overrides applied."""
    from .microsim.vehicles import CAR, TRUCK

    out = []
    for base in (CAR, TRUCK):
        changes = {attr: cfg.vehicle_overrides[f"{base.cls}_{attr}"]
                   for attr in _VEHICLE_FIELDS if f"{base.cls}_{attr}" in cfg.vehicle_overrides}
        try:
            out.append(dataclasses.replace(base, **changes))
        except ValueError as exc:
            raise ConfigError(f"{base.cls} parameters: {exc}") from None
    return tuple(out)
