"""
Synthetic world generation and real-data ingestion.

Everything here is a pure function of a ScenarioConfig and a seed: ground
truth fields, excluded cells, per-sensor error models, candidate fleets,
prediction error and ride-request demand.
"""

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.ndimage import gaussian_filter

from config import GroundTruthConfig
from dispatch import CandidateSet
from errors import ConfigurationError, TrajectoryParseError, TrajectoryValidationError
from gridworld import TRAJECTORY_CSV_HEADER, CellIndex, GridSpec, Trajectory, ensure_valid, occupancy_counts, validate_trajectory
from incentive import demand_probability
from truth_discovery import SensorReading

logger = logging.getLogger(__name__)

# independent random streams derived from one scenario seed
TRUTH_STREAM = 1
SENSOR_STREAM = 2
EXCLUDED_STREAM = 3
FLEET_STREAM = 4
DEMAND_STREAM = 5
PREDICTION_STREAM = 6
READING_STREAM = 7
ACCEPTANCE_STREAM = 8

MAX_SHIFT_ATTEMPTS = 64


def stream_seed(seed, stream, window=0):
    """
    Derive a reproducible sub-seed for one random stream and window.

    Returns:
        int: Seed suitable for numpy.random.default_rng
    """
    return int(np.random.SeedSequence([int(seed), int(stream), int(window)]).generate_state(1)[0])


def _rescaled(values, level, amplitude):
    spread = float(np.ptp(values))
    if spread == 0:
        return np.full(values.shape, float(level))
    return level + amplitude * (values - values.min()) / spread


@dataclass(frozen=True)
class GroundTruthField:
    """
    True field value g(x, y, t) per cell.

    Args:
        values (np.ndarray): (M, N, T) finite array
        grid (GridSpec): Grid of the field
    """
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ConfigurationError(f"ground truth shape {values.shape} does not match grid {self.grid.shape}")
        if not np.isfinite(values).all():
            raise ConfigurationError("ground truth must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def at(self, x, y, t):
        return float(self.values[x - 1, y - 1, t - 1])

    def to_frame(self):
        rows = [
            (t, x, y, float(self.values[x - 1, y - 1, t - 1]))
            for t in range(1, self.grid.horizon + 1)
            for x, y in self.grid.open_cells()
        ]
        return pd.DataFrame(rows, columns=["t", "x", "y", "value"])


def generate_ground_truth(grid, seed, kind=None, config=None):
    """
    Generate a ground truth field.

    Args:
        grid (GridSpec): Target grid
        seed (int): RNG seed
        kind (str, optional): 'constant', 'bumps' or 'value-noise'; overrides config.kind
        config (GroundTruthConfig, optional): Generator parameters

    Returns:
        GroundTruthField: Deterministic field for (grid, seed, kind)
    """
    config = config or GroundTruthConfig()
    kind = kind or config.kind
    rng = np.random.default_rng(seed)
    M, N, T = grid.shape

    if kind == "constant":
        return GroundTruthField(np.full(grid.shape, float(config.level)), grid)

    if kind == "bumps":
        xs, ys = np.meshgrid(np.arange(1, M + 1), np.arange(1, N + 1), indexing="ij")
        centres = rng.uniform([1, 1], [M, N], size=(config.bumps, 2))
        headings = rng.uniform(0, 2 * math.pi, size=config.bumps)
        velocity = config.drift * np.stack([np.cos(headings), np.sin(headings)], axis=1)
        heights = rng.uniform(0.5, 1.0, size=config.bumps)
        raw = np.zeros(grid.shape)
        for t in range(T):
            for centre, step, height in zip(centres, velocity, heights):
                cx, cy = centre + step * t
                d2 = (xs - cx) ** 2 + (ys - cy) ** 2
                raw[:, :, t] += height * np.exp(-d2 / (2 * config.length_scale ** 2))
        return GroundTruthField(_rescaled(raw, config.level, config.amplitude), grid)

    if kind == "value-noise":
        noise = rng.standard_normal(grid.shape)
        smooth = gaussian_filter(noise, sigma=(config.length_scale, config.length_scale, 1.0), mode="reflect")
        return GroundTruthField(_rescaled(smooth, config.level, config.amplitude), grid)

    raise ConfigurationError(f"unknown generator '{kind}'", "ground_truth.kind")


@dataclass(frozen=True)
class SensorErrorModel:
    """
    Per-sensor Gaussian noise and constant bias, drawn once per scenario.

    Args:
        sigmas (dict): {sensor: noise standard deviation}
        biases (dict): {sensor: constant bias}
    """
    sigmas: dict
    biases: dict

    def __post_init__(self):
        for sensor, sigma in self.sigmas.items():
            if sigma < 0:
                raise ConfigurationError(f"sensor {sensor} has negative noise", "sensors.sigma_min")

    @classmethod
    def draw(cls, sensors, config, seed):
        """
        Sample sigma ~ U[sigma_min, sigma_max] * noise_scale and bias ~ U[bias_min, bias_max].

        Args:
            sensors (iterable): Sensor ids
            config (SensorConfig): Distribution parameters
            seed (int): RNG seed
        """
        sensors = sorted(sensors)
        rng = np.random.default_rng(seed)
        sigmas = rng.uniform(config.sigma_min, config.sigma_max, size=len(sensors)) * config.noise_scale
        biases = rng.uniform(config.bias_min, config.bias_max, size=len(sensors))
        return cls(
            {c: float(s) for c, s in zip(sensors, sigmas)},
            {c: float(b) for c, b in zip(sensors, biases)},
        )

    def recentered_biases(self):
        """Biases shifted to sum to zero, the gauge truth discovery estimates in"""
        if not self.biases:
            return {}
        mean = sum(self.biases.values()) / len(self.biases)
        return {c: b - mean for c, b in self.biases.items()}


def sample_readings(truth, trajectories, error_model, seed):
    """
    One reading per occupied slot: m = g + bias + N(0, sigma^2).

    Args:
        truth (GroundTruthField): True field
        trajectories (iterable): Realized trajectories, slots on the truth grid
        error_model (SensorErrorModel): Per-sensor noise and bias
        seed (int): RNG seed

    Returns:
        list: SensorReading values in vehicle then time order
    """
    rng = np.random.default_rng(seed)
    readings = []
    for traj in sorted(trajectories, key=lambda tr: tr.vehicle):
        if not len(traj):
            continue
        sigma = error_model.sigmas[traj.vehicle]
        bias = error_model.biases[traj.vehicle]
        noise = rng.normal(0.0, sigma, size=len(traj))
        xs, ys, ts = traj.index_arrays()
        values = truth.values[xs, ys, ts] + bias + noise
        for cell, value in zip(traj.cells, values):
            readings.append(SensorReading(traj.vehicle, cell.x, cell.y, cell.t, float(value)))
    return readings


def hotspot_intensity(grid, demand_config):
    """
    Peak-normalized request intensity per (x, y), background floor included.

    Returns:
        np.ndarray: (M, N) array in [background, 1], 0 on excluded cells
    """
    xs, ys = np.meshgrid(np.arange(1, grid.width + 1), np.arange(1, grid.height + 1), indexing="ij")
    bump = np.zeros((grid.width, grid.height))
    for cx, cy in demand_config.hotspots:
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        bump = np.maximum(bump, np.exp(-d2 / (2 * demand_config.radius ** 2)))
    intensity = demand_config.background + (1 - demand_config.background) * bump
    return intensity * grid.open_mask()


def sample_excluded(grid_config, demand_config, seed):
    """
    Seeded excluded cells; hotspot centres are never excluded.

    Returns:
        frozenset: (x, y) cells
    """
    if grid_config.excluded is not None:
        return frozenset(tuple(cell) for cell in grid_config.excluded)
    protected = {tuple(int(round(v)) for v in centre) for centre in demand_config.hotspots}
    cells = [
        (x, y)
        for x in range(1, grid_config.width + 1)
        for y in range(1, grid_config.height + 1)
        if (x, y) not in protected
    ]
    count = min(grid_config.excluded_count, len(cells) - 1)
    if count <= 0:
        return frozenset()
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(cells), size=count, replace=False)
    return frozenset(cells[i] for i in sorted(picks))


def build_grid(config, horizon=None):
    """
    The scenario's global grid.

    Args:
        config (ScenarioConfig): Scenario
        horizon (int, optional): Defaults to every window of the run

    Returns:
        GridSpec: Grid with the scenario's excluded cells
    """
    excluded = sample_excluded(config.grid, config.demand, stream_seed(config.seed, EXCLUDED_STREAM))
    return GridSpec(
        config.grid.width, config.grid.height, horizon or config.horizon,
        config.grid.slot_minutes, excluded,
    )


def _walk(rng, grid, origin, length, preference, step_first):
    x, y = origin
    cells = []
    for t in range(1, length + 1):
        if t > 1 or step_first:
            options = grid.neighbors(x, y)
            scores = np.array([preference[ox - 1, oy - 1] for ox, oy in options])
            weights = np.exp(scores - scores.max())
            x, y = options[rng.choice(len(options), p=weights / weights.sum())]
        cells.append(CellIndex(x, y, t))
    return tuple(cells)


def synthesize_fleet(config, grid, seed, origins=None):
    """
    Generate each vehicle's original trajectory and K alternates.

    The original is a random walk pulled toward high-demand cells; the
    alternates start from the same origin and are pulled toward the cells the
    originals leave empty.

    Args:
        config (ScenarioConfig): Scenario
        grid (GridSpec): Window grid; its horizon is the trajectory length
        seed (int): RNG seed
        origins (dict, optional): {vehicle: (x, y)} positions before the
            window; every trajectory then takes one step first. When omitted,
            starting cells are drawn in proportion to the demand intensity.

    Returns:
        list: CandidateSet per vehicle, ordered by vehicle id

    Raises:
        ConfigurationError: If the grid has fewer open cells than vehicles
    """
    fleet = config.fleet
    open_cells = grid.open_cells()
    if len(open_cells) < fleet.size:
        raise ConfigurationError(
            f"grid has {len(open_cells)} open cells for {fleet.size} vehicles", "fleet.size"
        )

    rng = np.random.default_rng(seed)
    intensity = hotspot_intensity(grid, config.demand)
    vehicles = list(range(1, fleet.size + 1))

    if origins is None:
        weights = np.array([intensity[x - 1, y - 1] for x, y in open_cells])
        picks = rng.choice(len(open_cells), size=fleet.size, p=weights / weights.sum())
        origins = {c: open_cells[i] for c, i in zip(vehicles, picks)}
        step_first = False
    else:
        missing = [c for c in vehicles if c not in origins]
        if missing:
            raise ConfigurationError(f"no origin for vehicles {missing}", "fleet.size")
        step_first = True

    attraction = fleet.demand_bias * intensity / max(float(intensity.max()), 1e-12)
    originals = {
        c: Trajectory(c, 0, _walk(rng, grid, origins[c], grid.horizon, attraction, step_first), grid)
        for c in vehicles
    }

    crowd = occupancy_counts(originals.values(), grid).sum(axis=2).astype(float)
    repulsion = -fleet.detour_bias * crowd / max(float(crowd.max()), 1.0)

    candidate_sets = []
    for c in vehicles:
        candidates = [originals[c]]
        for k in range(1, fleet.candidates + 1):
            cells = _walk(rng, grid, origins[c], grid.horizon, repulsion, step_first)
            candidates.append(Trajectory(c, k, cells, grid))
        for traj in candidates:
            ensure_valid(traj, grid)
        candidate_sets.append(CandidateSet(c, tuple(candidates)))

    logger.debug("synthesized %d vehicles with %d alternates each", fleet.size, fleet.candidates)
    return candidate_sets


def _offsets_by_length(level):
    reach = int(math.ceil(level)) + 2
    by_length = defaultdict(list)
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            if dx or dy:
                by_length[round(math.hypot(dx, dy), 9)].append((dx, dy))
    return dict(sorted(by_length.items()))


def _length_mixture(level, lengths):
    below = [d for d in lengths if d <= level]
    above = [d for d in lengths if d >= level]
    if not below:
        return [(above[0], level / above[0])], True
    lo, hi = below[-1], above[0]
    if hi == lo:
        return [(lo, 1.0)], False
    p_hi = (level - lo) / (hi - lo)
    return [(lo, 1.0 - p_hi), (hi, p_hi)], False


def _shift_trajectory(traj, offset, grid):
    dx, dy = offset
    cells = tuple(CellIndex(c.x + dx, c.y + dy, c.t) for c in traj.cells)
    shifted = Trajectory(traj.vehicle, traj.candidate, cells, grid)
    return shifted if not validate_trajectory(shifted, grid) else None


def inject_prediction_error(candidate_sets, level, seed, grid=None):
    """
    Displace every predicted trajectory by a whole-grid offset.

    Offsets are integer (dx, dy) moves; their Euclidean length is drawn from
    the two attainable lengths around `level` so the expected displacement is
    `level`. Offsets that would leave the grid or touch an excluded cell are
    re-drawn.

    Args:
        candidate_sets (list): CandidateSet per vehicle
        level (float): Mean displacement in cells
        seed (int): RNG seed
        grid (GridSpec, optional): Defaults to the trajectories' grid

    Returns:
        list: Perturbed CandidateSets; the input is returned as-is when level is 0
    """
    if level < 0:
        raise ConfigurationError("must be >= 0", "prediction_error")
    if level == 0 or not candidate_sets:
        return list(candidate_sets)

    rng = np.random.default_rng(seed)
    by_length = _offsets_by_length(level)
    mixture, below_one = _length_mixture(level, list(by_length))

    perturbed = []
    stuck = 0
    for cs in candidate_sets:
        candidates = []
        for traj in cs.candidates:
            target = grid or traj.grid
            if below_one and rng.random() >= mixture[0][1]:
                candidates.append(traj)
                continue
            choice = 0 if len(mixture) == 1 else int(rng.random() < mixture[1][1])
            lengths = [mixture[choice][0]] + [d for d, _ in mixture if d != mixture[choice][0]]
            moved = None
            for length in lengths:
                options = by_length[length]
                for i in rng.permutation(len(options))[:MAX_SHIFT_ATTEMPTS]:
                    moved = _shift_trajectory(traj, options[i], target)
                    if moved is not None:
                        break
                if moved is not None:
                    break
            if moved is None:
                logger.debug("no feasible offset for vehicle %s candidate %s", traj.vehicle, traj.candidate)
                stuck += 1
                moved = traj
            candidates.append(moved)
        perturbed.append(CandidateSet(cs.vehicle, tuple(candidates)))
    if stuck:
        total = sum(len(cs.candidates) for cs in candidate_sets)
        logger.warning(
            "prediction error %.2f: %d of %d trajectories had no feasible offset and were left in place",
            level, stuck, total,
        )
    return perturbed


def displacement(predicted, actual):
    """Mean Euclidean distance between the cells two trajectories hold at the same slots"""
    distances = []
    for cell in actual.cells:
        other = predicted.at(cell.t)
        if other is not None:
            distances.append(math.hypot(other[0] - cell.x, other[1] - cell.y))
    return float(np.mean(distances)) if distances else 0.0


def sample_requests(grid, demand_config, seed):
    """
    Poisson ride-request counts around the hotspot mixture.

    Returns:
        np.ndarray: (M, N, T) integer counts, 0 on excluded cells
    """
    rng = np.random.default_rng(seed)
    rate = demand_config.intensity * hotspot_intensity(grid, demand_config)
    return rng.poisson(np.repeat(rate[:, :, None], grid.horizon, axis=2))


def generate_demand(grid, demand_config, seed, idle_counts):
    """
    Request probability field from sampled requests and the fleet's idle counts.

    Args:
        grid (GridSpec): Window grid
        demand_config (DemandConfig): Hotspot parameters
        seed (int): RNG seed
        idle_counts (np.ndarray): (M, N, T) idle vehicles per cell

    Returns:
        DemandField: Q = min(1, requests / idle), 0 on excluded cells
    """
    requests = sample_requests(grid, demand_config, seed)
    return demand_probability(requests, idle_counts, grid)


def ingest_trajectory_csv(path, grid):
    """
    Read a vehicle_id,candidate_k,t,x,y CSV into candidate sets.

    Real GPS traces carry only k = 0; exported candidate sets round-trip with
    all their alternates.

    Args:
        path (str): CSV file
        grid (GridSpec): Grid the rows must lie on

    Returns:
        list: CandidateSet per vehicle, ordered by vehicle id

    Raises:
        TrajectoryParseError: On a missing header or malformed row
        TrajectoryValidationError: On a row breaking a trajectory invariant
    """
    rows = defaultdict(list)
    lines = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRAJECTORY_CSV_HEADER:
            raise TrajectoryParseError(f"expected header {','.join(TRAJECTORY_CSV_HEADER)}", 1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(TRAJECTORY_CSV_HEADER):
                raise TrajectoryParseError(f"expected 5 fields, got {len(row)}", line)
            try:
                vehicle, k, t, x, y = (int(v) for v in row)
            except ValueError as e:
                raise TrajectoryParseError(str(e), line) from e
            rows[(vehicle, k)].append(CellIndex(x, y, t))
            lines[(vehicle, k, t)].append(line)

    by_vehicle = defaultdict(list)
    for (vehicle, k), cells in sorted(rows.items()):
        traj = Trajectory(vehicle, k, tuple(cells), grid)
        violations = validate_trajectory(traj, grid)
        if violations:
            first = violations[0]
            slot_lines = lines.get((vehicle, k, first['t'])) or [None]
            # a duplicate is reported at the row that repeats the slot
            line = slot_lines[-1] if first['kind'] == 'duplicate-slot' else slot_lines[0]
            raise TrajectoryValidationError(
                f"vehicle {vehicle} candidate {k}: {first['reason']}", violations, line,
            )
        by_vehicle[vehicle].append(traj)

    return [CandidateSet(vehicle, tuple(trajs)) for vehicle, trajs in sorted(by_vehicle.items())]


def write_ground_truth_csv(path, truth):
    truth.to_frame().to_csv(path, index=False)


@dataclass(frozen=True)
class Scenario:
    """
    A generated world: grid, ground truth, sensors and the first window's fleet.
    """
    config: object
    grid: GridSpec
    truth: GroundTruthField
    error_model: SensorErrorModel
    fleet: list

    @property
    def window_grid(self):
        return self.grid.window(self.config.windows.period)


def build_scenario(config):
    """
    Generate the full scenario for a config.

    Args:
        config (ScenarioConfig): Validated configuration

    Returns:
        Scenario: Deterministic in (config, config.seed)
    """
    grid = build_grid(config)
    truth = generate_ground_truth(grid, stream_seed(config.seed, TRUTH_STREAM), config=config.ground_truth)
    error_model = SensorErrorModel.draw(
        range(1, config.fleet.size + 1), config.sensors, stream_seed(config.seed, SENSOR_STREAM),
    )
    fleet = synthesize_fleet(
        config, grid.window(config.windows.period), stream_seed(config.seed, FLEET_STREAM, 0),
    )
    logger.info(
        "scenario seed=%s grid=%dx%dx%d excluded=%d vehicles=%d",
        config.seed, grid.width, grid.height, grid.horizon, len(grid.excluded), config.fleet.size,
    )
    return Scenario(config, grid, truth, error_model, fleet)
