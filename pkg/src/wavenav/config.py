"""Scenario configuration: nested dataclasses backed by a YAML file.

Every section is a dataclass; unknown keys and mistyped values raise
:class:`ConfigError` carrying the dotted key and, when parsed from a file,
the line number. ``--set a.b=value`` style overrides are applied on top of a
loaded tree with the same checks.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from typing import Any, Optional, Union

import numpy as np
import yaml

from .navfilter import AuvState, MotionModel, NoiseModel, SooTrack
from .rangerate import RangeRateConfig
from .sigproc import DftConfig
from .waveguide import Environment, Halfspace
from .wiranging import WiConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key, self.line = key, line
        where = []
        if key:
            where.append(f"key '{key}'")
        if line:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


@dataclass
class HalfspaceSection:
    sound_speed_mps: float = 1600.0
    density_ratio: float = 1.8


@dataclass
class EnvironmentSection:
    water_depth_m: float = 198.0
    # scalar speed or a list of [depth_m, speed_mps] pairs
    sound_speed_mps: Union[float, list] = 1500.0
    bottom_type: str = "pekeris_halfspace"
    halfspace: Optional[HalfspaceSection] = field(default_factory=HalfspaceSection)
    max_grazing_deg: Optional[float] = None

    def build(self) -> Environment:
        c = self.sound_speed_mps
        if isinstance(c, list):
            c = tuple(tuple(p) for p in c)
        hs = None
        if self.bottom_type == "pekeris_halfspace" and self.halfspace is not None:
            hs = Halfspace(self.halfspace.sound_speed_mps, self.halfspace.density_ratio)
        return Environment(self.water_depth_m, c, self.bottom_type, hs, self.max_grazing_deg)


@dataclass
class GeometrySection:
    source_depth_m: float = 9.0
    receiver_depth_m: float = 150.0


@dataclass
class AuvSection:
    # [x_m, y_m, vx_mps, vy_mps, heading_deg]
    initial_state: list = field(default_factory=lambda: [0.0, 0.0, 1.1, 1.1, 45.0])
    driving_noise: bool = True

    def build(self) -> AuvState:
        if len(self.initial_state) != 5:
            raise ConfigError("initial_state needs 5 entries", "auv.initial_state")
        return AuvState(*self.initial_state)


@dataclass
class SooSection:
    position0: list = field(default_factory=lambda: [2000.0, 0.0])
    velocity: list = field(default_factory=lambda: [0.0, 5.14])

    def build(self) -> SooTrack:
        return SooTrack(tuple(self.position0), tuple(self.velocity))


@dataclass
class DftSection:
    sample_rate_hz: float = 3276.8
    n_dft: int = 3276
    overlap: float = 0.5
    window: str = "hann"

    def build(self) -> DftConfig:
        return DftConfig(self.sample_rate_hz, self.n_dft, self.overlap, self.window)


@dataclass
class RangeRateSection:
    # full segment length; the half length L is segment_s / (2 t_delta)
    segment_s: float = 240.0
    zero_pad_factor: int = 16
    search_band_mps: list = field(default_factory=lambda: [0.0, 10.0])
    refine: bool = True
    # "modal" (excitation-weighted phase speed), "water" or a number in m/s
    phase_speed: Union[float, str] = "modal"
    phase_compensation: str = "none"


@dataclass
class WiSection:
    window_s: float = 600.0
    # null calibrates the invariant at a known range on a noiseless run
    beta: Optional[float] = None
    beta_grid: list = field(default_factory=lambda: [0.8, 1.5, 0.005])
    range_grid: list = field(default_factory=lambda: [500.0, 10000.0, 10.0])
    min_overlap: float = 0.25
    log_intensity: bool = False
    fix_interval_s: float = 10.0


@dataclass
class NoiseSection:
    range_std_m: float = 150.0
    velocity_std_mps: float = 0.02
    heading_std_deg: float = 0.5

    def build(self) -> NoiseModel:
        return NoiseModel(self.range_std_m, self.velocity_std_mps, self.heading_std_deg)


@dataclass
class MotionSection:
    accel_std: float = 0.02
    turn_rate_std_deg: float = 0.5


@dataclass
class PriorSection:
    position_std_m: float = 500.0
    velocity_std_mps: float = 0.1
    heading_std_deg: float = 2.0


@dataclass
class FilterSection:
    n_particles: int = 20000
    ess_threshold: float = 0.5
    roughen_std_m: float = 10.0
    # resample only velocity and heading while no range fix has entered the weights
    keep_uninformed_positions: bool = True
    # acoustic: ranges from the WI pipeline; truth: exact ranges; none: dead reckoning
    range_source: str = "acoustic"


@dataclass
class ScenarioConfig:
    environment: EnvironmentSection = field(default_factory=EnvironmentSection)
    geometry: GeometrySection = field(default_factory=GeometrySection)
    auv: AuvSection = field(default_factory=AuvSection)
    soo: SooSection = field(default_factory=SooSection)
    duration_s: float = 1200.0
    tones_hz: list = field(default_factory=lambda: [109.0, 127.0, 145.0, 163.0])
    dft: DftSection = field(default_factory=DftSection)
    rangerate: RangeRateSection = field(default_factory=RangeRateSection)
    wi: WiSection = field(default_factory=WiSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    motion: MotionSection = field(default_factory=MotionSection)
    prior: PriorSection = field(default_factory=PriorSection)
    filter: FilterSection = field(default_factory=FilterSection)
    snr_db: float = 12.0
    seed: int = 0
    trials: int = 20
    metrics_interval_s: float = 30.0

    # derived quantities -------------------------------------------------
    @property
    def snapshot_interval_s(self) -> float:
        return self.dft.build().snapshot_interval_s

    @property
    def n_snapshots(self) -> int:
        return int(np.floor(self.duration_s / self.snapshot_interval_s + 1e-9)) + 1

    @property
    def segment_half_len(self) -> int:
        return int(round(self.rangerate.segment_s / (2 * self.snapshot_interval_s)))

    @property
    def window_len(self) -> int:
        return int(round(self.wi.window_s / self.snapshot_interval_s))

    def first_fix_index(self) -> int:
        return self.segment_half_len + self.window_len

    def environment_model(self) -> Environment:
        return self.environment.build()

    def motion_model(self) -> MotionModel:
        return MotionModel(self.snapshot_interval_s, self.motion.accel_std,
                           self.motion.turn_rate_std_deg)

    def rangerate_config(self, sound_speed_mps: float) -> RangeRateConfig:
        rr = self.rangerate
        return RangeRateConfig(self.segment_half_len, float(self.tones_hz[0]), sound_speed_mps,
                               rr.zero_pad_factor, tuple(rr.search_band_mps), rr.refine,
                               rr.phase_compensation)

    def wi_config(self) -> WiConfig:
        w = self.wi
        return WiConfig(tuple(self.tones_hz), self.window_len, tuple(w.beta_grid),
                        tuple(w.range_grid), w.min_overlap, w.log_intensity)

    def validate(self) -> "ScenarioConfig":
        """Build every sub-model once so invalid values surface as ConfigError."""
        checks = [
            ("environment", self.environment_model),
            ("auv", self.auv.build),
            ("soo", self.soo.build),
            ("dft", self.dft.build),
            ("noise", self.noise.build),
            ("motion", self.motion_model),
            ("rangerate", lambda: self.rangerate_config(1500.0)),
            ("wi", self.wi_config),
        ]
        for key, fn in checks:
            try:
                fn()
            except ConfigError:
                raise
            except (ValueError, TypeError) as exc:
                raise ConfigError(str(exc), key) from None
        if not self.duration_s > 0:
            raise ConfigError("duration must be positive", "duration_s")
        if self.filter.range_source not in ("acoustic", "truth", "none"):
            raise ConfigError("must be acoustic, truth or none", "filter.range_source")
        if self.filter.n_particles < 1:
            raise ConfigError("need at least one particle", "filter.n_particles")
        if self.trials < 1:
            raise ConfigError("need at least one trial", "trials")
        ps = self.rangerate.phase_speed
        if isinstance(ps, str) and ps not in ("modal", "water"):
            raise ConfigError("must be 'modal', 'water' or a number", "rangerate.phase_speed")
        if not self.metrics_interval_s > 0 or not self.wi.fix_interval_s > 0:
            raise ConfigError("intervals must be positive")
        return self


def default_paper_scenario() -> ScenarioConfig:
    """Two-body scenario with the published sensor and filter hyperparameters."""
    return ScenarioConfig()


# --- conversion ------------------------------------------------------------

def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value, tp, key, lines):
    line = lines.get(key)
    origin = typing.get_origin(tp)
    if origin is Union:
        args = typing.get_args(tp)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError("value may not be null", key, line)
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, key, lines)
            except ConfigError as exc:
                errors.append(exc)
        raise ConfigError(f"expected one of {[_type_name(a) for a in args if a is not type(None)]},"
                          f" got {value!r}", key, line)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError("expected a mapping", key, line)
        return _from_mapping(tp, value, key, lines)
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key, line)
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key, line)
        return int(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key, line)
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key, line)
        return value
    if tp is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", key, line)
        return [_coerce_number_tree(v, key, line) for v in value]
    raise ConfigError(f"unsupported type {tp}", key, line)


def _coerce_number_tree(v, key, line):
    if isinstance(v, (list, tuple)):
        return [_coerce_number_tree(x, key, line) for x in v]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"list entries must be numbers, got {v!r}", key, line)
    return float(v)


def _from_mapping(cls, data: dict, prefix: str, lines: dict):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in data.items():
        key = f"{prefix}.{k}" if prefix else str(k)
        if k not in names:
            raise ConfigError("unknown key", key, lines.get(key))
        kwargs[k] = _coerce(v, hints[k], key, lines)
    return cls(**kwargs)


def _line_map(text: str) -> dict:
    """Dotted key -> 1-based line number for every mapping key in ``text``."""
    out = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{prefix}.{k.value}" if prefix else str(k.value)
                out[key] = k.start_mark.line + 1
                walk(v, key)

    if root is not None:
        walk(root, "")
    return out


def from_dict(data: dict, lines: Optional[dict] = None) -> ScenarioConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping")
    return _from_mapping(ScenarioConfig, data, "", lines or {}).validate()


def loads(text: str) -> ScenarioConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    return from_dict(data, _line_map(text))


def load(path) -> ScenarioConfig:
    with open(path) as fh:
        return loads(fh.read())


def dumps(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


def dump(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(cfg))


def apply_overrides(cfg: ScenarioConfig, overrides) -> ScenarioConfig:
    """Apply ``dotted.key=value`` strings; values are parsed as YAML scalars."""
    data = to_dict(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"cannot parse value {raw!r}", key) from None
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError("unknown key", key)
            if node[p] is None:
                node[p] = {}
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError("unknown key", key)
        node[parts[-1]] = value
    return from_dict(data)


def as_plain(value: Any):
    """JSON-friendly copy of numpy scalars and arrays."""
    if isinstance(value, dict):
        return {k: as_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [as_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return as_plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value
