"""
Scenario configuration: dataclass tree, YAML loading and environment overrides.

A config file is YAML with a `schema_version` field. Values missing from the
file fall back to the desk-scale defaults below. `QUIDS_SEED` in the
environment (or a .env file) overrides the configured seed.
"""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace

import yaml
from dotenv import load_dotenv

from errors import ConfigurationError
from incentive import IncentiveParams
from metrics import AsqConfig
from truth_discovery import InferenceConfig

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SEED_ENV = "QUIDS_SEED"
LOG_LEVEL_ENV = "QUIDS_LOG_LEVEL"

GROUND_TRUTH_KINDS = ("constant", "bumps", "value-noise")

# sweep dimension -> dotted config path
SWEEP_DIMENSIONS = {
    "budget": "incentive.budget",
    "acceptance_rate": "acceptance_rate",
    "sensing_error_level": "sensors.noise_scale",
    "prediction_error_level": "prediction_error",
    "beta": "asq.beta",
}


def _tupled(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tupled(v) for v in value)
    return value


@dataclass(frozen=True)
class GridConfig:
    """
    Args:
        width (int): Cells along x
        height (int): Cells along y
        slot_minutes (float): Minutes per time slot
        excluded (tuple, optional): Explicit excluded (x, y) cells
        excluded_count (int): Number of seeded excluded cells when `excluded` is not given
    """
    width: int = 15
    height: int = 8
    slot_minutes: float = 2.0
    excluded: tuple = None
    excluded_count: int = 4

    def __post_init__(self):
        if self.width < 1:
            raise ConfigurationError("must be >= 1", "grid.width")
        if self.height < 1:
            raise ConfigurationError("must be >= 1", "grid.height")
        if not self.slot_minutes > 0:
            raise ConfigurationError("must be > 0", "grid.slot_minutes")
        if self.excluded is not None:
            cells = _tupled(self.excluded)
            for cell in cells:
                if len(cell) != 2 or not (1 <= cell[0] <= self.width and 1 <= cell[1] <= self.height):
                    raise ConfigurationError(f"cell {list(cell)} is outside the grid", "grid.excluded")
            object.__setattr__(self, "excluded", cells)
        if not 0 <= self.excluded_count < self.width * self.height:
            raise ConfigurationError("must lie in [0, width * height)", "grid.excluded_count")


@dataclass(frozen=True)
class WindowConfig:
    """
    Args:
        period (int): Slots per actuation window
        warmup (int): Leading windows without actuation
        dispatch (int): Windows in which the dispatcher acts
    """
    period: int = 5
    warmup: int = 1
    dispatch: int = 1

    def __post_init__(self):
        if self.period < 1:
            raise ConfigurationError("must be >= 1", "windows.period")
        if self.warmup < 0:
            raise ConfigurationError("must be >= 0", "windows.warmup")
        if self.dispatch < 1:
            raise ConfigurationError("must be >= 1", "windows.dispatch")

    @property
    def total(self):
        return self.warmup + self.dispatch


@dataclass(frozen=True)
class FleetConfig:
    """
    Args:
        size (int): Number of vehicles C
        candidates (int): Alternate trajectories K per vehicle
        demand_bias (float): Pull of the original walk toward high-demand cells
        detour_bias (float): Pull of the alternates toward sparsely occupied cells
    """
    size: int = 20
    candidates: int = 4
    demand_bias: float = 3.0
    detour_bias: float = 2.0

    def __post_init__(self):
        if self.size < 1:
            raise ConfigurationError("must be >= 1", "fleet.size")
        if self.candidates < 0:
            raise ConfigurationError("must be >= 0", "fleet.candidates")
        if self.demand_bias < 0:
            raise ConfigurationError("must be >= 0", "fleet.demand_bias")
        if self.detour_bias < 0:
            raise ConfigurationError("must be >= 0", "fleet.detour_bias")


@dataclass(frozen=True)
class SensorConfig:
    """
    Per-sensor noise sigma ~ U[sigma_min, sigma_max] * noise_scale and
    bias ~ U[bias_min, bias_max], in field units.
    """
    sigma_min: float = 1.0
    sigma_max: float = 10.0
    bias_min: float = -10.0
    bias_max: float = 10.0
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.sigma_min < 0:
            raise ConfigurationError("must be >= 0", "sensors.sigma_min")
        if self.sigma_max < self.sigma_min:
            raise ConfigurationError("must be >= sigma_min", "sensors.sigma_max")
        if self.bias_max < self.bias_min:
            raise ConfigurationError("must be >= bias_min", "sensors.bias_max")
        if self.noise_scale < 0:
            raise ConfigurationError("must be >= 0", "sensors.noise_scale")


@dataclass(frozen=True)
class GroundTruthConfig:
    """
    Args:
        kind (str): 'constant', 'bumps' or 'value-noise'
        level (float): Base field level
        amplitude (float): Max-min spread of the non-constant generators
        bumps (int): Gaussian bumps in the mixture
        length_scale (float): Bump width / noise smoothing in cells
        drift (float): Cells a bump centre moves per slot
    """
    kind: str = "bumps"
    level: float = 50.0
    amplitude: float = 40.0
    bumps: int = 3
    length_scale: float = 3.0
    drift: float = 0.2

    def __post_init__(self):
        if self.kind not in GROUND_TRUTH_KINDS:
            raise ConfigurationError(f"must be one of {GROUND_TRUTH_KINDS}", "ground_truth.kind")
        if self.amplitude < 0:
            raise ConfigurationError("must be >= 0", "ground_truth.amplitude")
        if self.bumps < 1:
            raise ConfigurationError("must be >= 1", "ground_truth.bumps")
        if not self.length_scale > 0:
            raise ConfigurationError("must be > 0", "ground_truth.length_scale")


@dataclass(frozen=True)
class DemandConfig:
    """
    Args:
        hotspots (tuple): (x, y) centres of ride-request hotspots
        radius (float): Hotspot radius in cells
        intensity (float): Mean requests per cell and slot at a hotspot centre
        background (float): Fraction of the peak intensity present everywhere
    """
    hotspots: tuple = ((12, 6),)
    radius: float = 2.5
    intensity: float = 3.0
    background: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "hotspots", _tupled(self.hotspots))
        for centre in self.hotspots:
            if len(centre) != 2:
                raise ConfigurationError(f"hotspot {list(centre)} is not an (x, y) pair", "demand.hotspots")
        if not self.radius > 0:
            raise ConfigurationError("must be > 0", "demand.radius")
        if self.intensity < 0:
            raise ConfigurationError("must be >= 0", "demand.intensity")
        if not 0 <= self.background <= 1:
            raise ConfigurationError("must lie in [0, 1]", "demand.background")


@dataclass(frozen=True)
class IncentiveConfig:
    budget: float = 400.0
    r_min: float = 2.0
    r_max: float = 20.0
    utility_rate: float = None
    fixed_incentive: float = None

    def params(self, horizon):
        """IncentiveParams for a window of `horizon` slots"""
        return IncentiveParams(
            self.r_min, self.r_max, self.budget, horizon, self.utility_rate, self.fixed_incentive,
        )


@dataclass(frozen=True)
class ReconstructionConfig:
    idw_power: float = 2.0
    length_scale: float = 2.0
    noise: float = 1e-2

    def __post_init__(self):
        if not self.idw_power > 0:
            raise ConfigurationError("must be > 0", "reconstruction.idw_power")
        if not self.length_scale > 0:
            raise ConfigurationError("must be > 0", "reconstruction.length_scale")
        if self.noise < 0:
            raise ConfigurationError("must be >= 0", "reconstruction.noise")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    grid: GridConfig = field(default_factory=GridConfig)
    windows: WindowConfig = field(default_factory=WindowConfig)
    fleet: FleetConfig = field(default_factory=FleetConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    ground_truth: GroundTruthConfig = field(default_factory=GroundTruthConfig)
    demand: DemandConfig = field(default_factory=DemandConfig)
    incentive: IncentiveConfig = field(default_factory=IncentiveConfig)
    asq: AsqConfig = field(default_factory=AsqConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    reconstruction: ReconstructionConfig = field(default_factory=ReconstructionConfig)
    prediction_error: float = 0.0
    acceptance_rate: float = 1.0

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported version (expected {SCHEMA_VERSION})", "schema_version")
        if self.prediction_error < 0:
            raise ConfigurationError("must be >= 0", "prediction_error")
        if not 0 <= self.acceptance_rate <= 1:
            raise ConfigurationError("must lie in [0, 1]", "acceptance_rate")
        self.incentive.params(self.windows.period)

    @property
    def horizon(self):
        """Total simulated slots"""
        return self.windows.period * self.windows.total


_SECTIONS = {
    "grid": GridConfig,
    "windows": WindowConfig,
    "fleet": FleetConfig,
    "sensors": SensorConfig,
    "ground_truth": GroundTruthConfig,
    "demand": DemandConfig,
    "incentive": IncentiveConfig,
    "asq": AsqConfig,
    "inference": InferenceConfig,
    "reconstruction": ReconstructionConfig,
}
_NOT_CONFIGURABLE = {"warm_start"}


def _field_names(cls):
    return [f.name for f in fields(cls) if f.name not in _NOT_CONFIGURABLE]


def _build(cls, data, prefix=""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("must be a mapping", prefix.rstrip(".") or None)

    allowed = _field_names(cls)
    for key in data:
        if key not in allowed:
            raise ConfigurationError("unknown key", f"{prefix}{key}")

    kwargs = {}
    for key, value in data.items():
        if cls is ScenarioConfig and key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, f"{key}.")
        else:
            kwargs[key] = _tupled(value)
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigurationError(str(e), prefix.rstrip(".") or None) from e


def config_from_dict(data, apply_env=True):
    """
    Build a ScenarioConfig from parsed YAML.

    Args:
        data (dict): Parsed config mapping
        apply_env (bool): Apply the QUIDS_SEED override

    Returns:
        ScenarioConfig: Validated configuration
    """
    config = _build(ScenarioConfig, data)
    if apply_env:
        config = apply_seed_override(config)
    return config


def load_config(path, apply_env=True):
    """
    Load a YAML scenario config.

    Raises:
        ConfigurationError: On unreadable files, unknown keys or invalid values
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle)
    except OSError as e:
        raise ConfigurationError(f"cannot read config file: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"invalid YAML: {e}") from e
    return config_from_dict(data or {}, apply_env)


def apply_seed_override(config, seed=None):
    """
    Replace the config seed with `seed`, else with QUIDS_SEED when set.
    """
    if seed is None:
        raw = os.environ.get(SEED_ENV)
        if raw is None or raw.strip() == "":
            return config
        try:
            seed = int(raw)
        except ValueError as e:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got '{raw}'", "seed") from e
    return replace(config, seed=int(seed))


def config_to_dict(config):
    data = asdict(config)
    data["inference"].pop("warm_start", None)
    return json.loads(json.dumps(data))


def save_config(config, path):
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(config_to_dict(config), handle, sort_keys=False)


def config_hash(config):
    """SHA-256 of the canonical JSON form of the config"""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_override(config, dimension, value):
    """
    Apply one sweep delta.

    Args:
        config (ScenarioConfig): Base configuration
        dimension (str): Key of SWEEP_DIMENSIONS, or a dotted config path
        value: New value

    Returns:
        ScenarioConfig: Modified copy
    """
    path = SWEEP_DIMENSIONS.get(dimension, dimension)
    parts = path.split(".")
    if len(parts) == 1:
        if parts[0] not in _field_names(ScenarioConfig):
            raise ConfigurationError("unknown sweep dimension", dimension)
        return replace(config, **{parts[0]: value})
    if len(parts) != 2 or parts[0] not in _SECTIONS or parts[1] not in _field_names(_SECTIONS[parts[0]]):
        raise ConfigurationError("unknown sweep dimension", dimension)
    section = getattr(config, parts[0])
    return replace(config, **{parts[0]: replace(section, **{parts[1]: _tupled(value)})})
