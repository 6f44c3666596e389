"""
Bias-aware truth discovery.

Jointly estimates a per-cell truth m*, a per-sensor reliability weight w_c and
a constant bias b_c by block-coordinate descent on

    f = sum_cells sum_c w_c (m* - m_c + b_c)^2
    s.t. sum_c exp(-w_c) = 1, sum_c b_c = 0

Each sweep updates w, then b, then m* over the whole reading set.
"""

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from errors import ConfigurationError, DegenerateWeightsError, TrajectoryParseError
from gridworld import CellIndex, overlap_count

logger = logging.getLogger(__name__)

READINGS_CSV_HEADER = ["sensor_id", "t", "x", "y", "value"]
SHARE_FLOOR = 1e-12


class SensorReading(NamedTuple):
    sensor: int
    x: int
    y: int
    t: int
    value: float

    @property
    def cell(self):
        return CellIndex(self.x, self.y, self.t)


@dataclass
class ReliabilityState:
    """
    Per-sensor reliability weight, constant bias and overlap belief.

    Args:
        weights (dict): {sensor: w_c}
        biases (dict): {sensor: b_c}
        beliefs (dict): {sensor: epsilon_c}
    """
    weights: dict
    biases: dict
    beliefs: dict = field(default_factory=dict)

    @classmethod
    def uniform(cls, sensors):
        """w_c = ln C and b_c = 0 for every sensor; satisfies both constraints"""
        sensors = sorted(sensors)
        weight = math.log(len(sensors)) if sensors else 0.0
        return cls({c: weight for c in sensors}, {c: 0.0 for c in sensors})

    def weight_constraint_gap(self):
        """|sum exp(-w) - 1|"""
        return abs(sum(math.exp(-w) for w in self.weights.values()) - 1.0)

    def bias_constraint_gap(self):
        """|sum b|"""
        return abs(sum(self.biases.values()))


@dataclass(frozen=True)
class TruthField:
    """Inferred truth m* on every cell with at least one reading"""
    values: dict

    def __contains__(self, cell):
        return cell in self.values

    def __getitem__(self, cell):
        return self.values[cell]

    def __len__(self):
        return len(self.values)

    def cells(self):
        return sorted(self.values)

    def to_array(self, grid, offset=0):
        """
        Dense (M, N, T) array, NaN on unsensed cells.

        Args:
            grid (GridSpec): Target grid
            offset (int): Slots subtracted from each cell's t before placement

        Returns:
            np.ndarray: Field values
        """
        dense = np.full(grid.shape, np.nan)
        for cell, value in self.values.items():
            t = cell.t - offset
            if grid.in_bounds(cell.x, cell.y, t):
                dense[cell.x - 1, cell.y - 1, t - 1] = value
        return dense


@dataclass(frozen=True)
class InferenceConfig:
    """
    Args:
        error_bound (float): Stop once max cell-wise |delta m*| <= error_bound
        max_iterations (int): Upper bound on sweeps
        warm_start (InferenceResult, optional): Previous output to start from
    """
    error_bound: float = 1e-6
    max_iterations: int = 100
    warm_start: Optional["InferenceResult"] = None

    def __post_init__(self):
        if not self.error_bound > 0:
            raise ConfigurationError("must be > 0", "inference.error_bound")
        if self.max_iterations < 1:
            raise ConfigurationError("must be >= 1", "inference.max_iterations")


@dataclass
class InferenceResult:
    truth: TruthField
    state: ReliabilityState
    iterations: int
    converged: bool
    degenerate: bool = False
    objective_trace: list = field(default_factory=list)
    lagrangian_trace: list = field(default_factory=list)

    def to_dict(self):
        return {
            'w': {str(c): w for c, w in sorted(self.state.weights.items())},
            'b': {str(c): b for c, b in sorted(self.state.biases.items())},
            'iterations': self.iterations,
            'converged': self.converged,
            'degenerate': self.degenerate,
            'objective_trace': list(self.objective_trace),
        }


class _ReadingTable:
    """Readings flattened into index arrays for vectorized sweeps"""

    def __init__(self, readings):
        readings = list(readings)
        if not readings:
            raise ConfigurationError("at least one reading is required")
        self.sensors = sorted({r.sensor for r in readings})
        self.cells = sorted({r.cell for r in readings})
        sensor_pos = {c: i for i, c in enumerate(self.sensors)}
        cell_pos = {cell: i for i, cell in enumerate(self.cells)}

        for r in readings:
            if not math.isfinite(r.value):
                raise ConfigurationError(f"reading of sensor {r.sensor} at {tuple(r.cell)} is not finite")

        self.sensor_idx = np.array([sensor_pos[r.sensor] for r in readings], dtype=int)
        self.cell_idx = np.array([cell_pos[r.cell] for r in readings], dtype=int)
        self.values = np.array([r.value for r in readings], dtype=float)

    @property
    def n_sensors(self):
        return len(self.sensors)

    @property
    def n_cells(self):
        return len(self.cells)

    def vector(self, mapping, default=None, name="value"):
        out = np.empty(self.n_sensors)
        for i, c in enumerate(self.sensors):
            if c in mapping:
                out[i] = mapping[c]
            elif default is not None:
                out[i] = default
            else:
                raise ConfigurationError(f"no {name} for sensor {c}")
        return out

    def truth_vector(self, truth):
        out = np.empty(self.n_cells)
        for i, cell in enumerate(self.cells):
            if cell not in truth:
                raise ConfigurationError(f"truth is undefined on read cell {tuple(cell)}")
            out[i] = truth[cell]
        return out

    def to_truth(self, vector):
        return TruthField({cell: float(v) for cell, v in zip(self.cells, vector)})

    def to_mapping(self, vector):
        return {c: float(v) for c, v in zip(self.sensors, vector)}

    def mean_per_cell(self, biases=None):
        adjusted = self.values if biases is None else self.values - biases[self.sensor_idx]
        sums = np.bincount(self.cell_idx, weights=adjusted, minlength=self.n_cells)
        counts = np.bincount(self.cell_idx, minlength=self.n_cells)
        return sums / counts


def _aggregate(table, w, b):
    numerator = np.bincount(
        table.cell_idx, weights=w[table.sensor_idx] * (table.values - b[table.sensor_idx]),
        minlength=table.n_cells,
    )
    denominator = np.bincount(table.cell_idx, weights=w[table.sensor_idx], minlength=table.n_cells)
    degenerate = np.flatnonzero(denominator <= 0)
    if degenerate.size:
        cell = table.cells[degenerate[0]]
        raise DegenerateWeightsError(f"all weights contributing to cell {tuple(cell)} are zero")
    return numerator / denominator


def _weights(table, truth, b):
    residual = truth[table.cell_idx] - table.values + b[table.sensor_idx]
    per_sensor = np.bincount(table.sensor_idx, weights=residual ** 2, minlength=table.n_sensors)
    total = per_sensor.sum()
    if not total > 0:
        return np.full(table.n_sensors, math.log(table.n_sensors))
    shares = np.maximum(per_sensor / total, SHARE_FLOOR)
    shares = shares / shares.sum()
    return -np.log(shares)


def _biases(table, truth, previous, recenter=True):
    diffs = table.values - truth[table.cell_idx]
    sums = np.bincount(table.sensor_idx, weights=diffs, minlength=table.n_sensors)
    counts = np.bincount(table.sensor_idx, minlength=table.n_sensors)
    b = np.where(counts > 0, sums / np.maximum(counts, 1), previous)
    if recenter:
        b = b - b.mean()
    return b


def _objective(table, truth, w, b):
    residual = truth[table.cell_idx] - table.values + b[table.sensor_idx]
    return float(np.sum(w[table.sensor_idx] * residual ** 2))


def aggregate_truth(readings, state):
    """
    m* = sum_c w_c (m_c - b_c) / sum_c w_c over the sensors reading each cell.

    Args:
        readings (iterable): SensorReading objects
        state (ReliabilityState): Weights and biases to aggregate with

    Returns:
        TruthField: Truth on every read cell

    Raises:
        DegenerateWeightsError: If a cell's contributing weights sum to zero
    """
    table = _ReadingTable(readings)
    w = table.vector(state.weights, name="weight")
    b = table.vector(state.biases, default=0.0)
    return table.to_truth(_aggregate(table, w, b))


def update_weights(readings, truth, biases):
    """
    w_c = -ln(sum ||m* - m_c + b_c||^2 / sum over all sensors of the same).

    Args:
        readings (iterable): SensorReading objects
        truth (TruthField): Current truth, defined on every read cell
        biases (dict): {sensor: b_c}

    Returns:
        dict: {sensor: w_c}; uniform ln C when every residual is zero
    """
    table = _ReadingTable(readings)
    b = table.vector(biases, default=0.0)
    return table.to_mapping(_weights(table, table.truth_vector(truth), b))


def update_bias(readings, truth, previous=None, recenter=True):
    """
    b_c = mean over visited cells of (m_c - m*), re-centred so sum b_c = 0.

    Args:
        readings (iterable): SensorReading objects
        truth (TruthField): Current truth
        previous (dict, optional): Biases carried over for sensors without readings
        recenter (bool): Project onto sum b = 0

    Returns:
        dict: {sensor: b_c} for sensors in readings and in `previous`
    """
    table = _ReadingTable(readings)
    previous = dict(previous or {})
    prior = table.vector(previous, default=0.0)
    b = _biases(table, table.truth_vector(truth), prior, recenter=False)
    result = dict(previous)
    result.update(table.to_mapping(b))
    if recenter and result:
        mean = sum(result.values()) / len(result)
        result = {c: v - mean for c, v in result.items()}
    return result


def infer(readings, config=None):
    """
    Run truth discovery to convergence.

    Args:
        readings (iterable): SensorReading objects
        config (InferenceConfig, optional): Error bound, iteration cap, warm start

    Returns:
        InferenceResult: Truth, reliability state and convergence diagnostics
    """
    config = config or InferenceConfig()
    table = _ReadingTable(readings)

    if table.n_sensors == 1:
        sensor = table.sensors[0]
        logger.warning("truth discovery with a single sensor (%s); weights are degenerate", sensor)
        truth = table.to_truth(table.mean_per_cell())
        state = ReliabilityState({sensor: 0.0}, {sensor: 0.0})
        return InferenceResult(truth, state, iterations=0, converged=True, degenerate=True)

    if config.warm_start is not None:
        previous = config.warm_start
        w = table.vector(previous.state.weights, default=math.log(table.n_sensors))
        b = table.vector(previous.state.biases, default=0.0)
        fallback = table.mean_per_cell(b)
        truth = np.array([
            previous.truth.values.get(cell, fallback[i]) for i, cell in enumerate(table.cells)
        ])
    else:
        w = np.full(table.n_sensors, math.log(table.n_sensors))
        b = np.zeros(table.n_sensors)
        truth = table.mean_per_cell()

    objective_trace = []
    lagrangian_trace = []
    lagrangian = 0.0
    converged = False
    iterations = 0

    for iterations in range(1, config.max_iterations + 1):
        lagrangian += float(np.sum((truth[table.cell_idx] - table.values) ** 2))
        lagrangian_trace.append(lagrangian)

        w = _weights(table, truth, b)
        b = _biases(table, truth, b)
        updated = _aggregate(table, w, b)

        objective = _objective(table, updated, w, b)
        if objective_trace and objective > objective_trace[-1] * (1 + 1e-9) + 1e-12:
            logger.warning(
                "truth discovery objective increased at sweep %d: %.6g -> %.6g",
                iterations, objective_trace[-1], objective,
            )
        objective_trace.append(objective)
        logger.debug("sweep %d objective %.6g lagrangian %.6g", iterations, objective, lagrangian)

        delta = float(np.max(np.abs(updated - truth)))
        truth = updated
        if delta <= config.error_bound:
            converged = True
            break

    if not converged:
        logger.warning("truth discovery did not converge within %d sweeps", config.max_iterations)

    state = ReliabilityState(table.to_mapping(w), table.to_mapping(b))
    return InferenceResult(
        table.to_truth(truth), state, iterations, converged,
        objective_trace=objective_trace, lagrangian_trace=lagrangian_trace,
    )


def belief(vehicle, trajectories):
    """
    epsilon_c = ln(sum_{i != c} overlap(c, i)), or 0 when there is no overlap.

    Args:
        vehicle (int): Vehicle c
        trajectories (iterable): Currently chosen Trajectory of every vehicle

    Returns:
        float: Belief in nats
    """
    trajectories = list(trajectories)
    own = [traj for traj in trajectories if traj.vehicle == vehicle]
    if not own:
        raise ConfigurationError(f"no trajectory for vehicle {vehicle}")
    total = sum(overlap_count(own[0], other) for other in trajectories if other.vehicle != vehicle)
    return math.log(total) if total > 0 else 0.0


def beliefs(trajectories):
    """
    Belief of every vehicle in one pass.

    Args:
        trajectories (iterable): One chosen Trajectory per vehicle

    Returns:
        dict: {vehicle: epsilon_c}
    """
    trajectories = list(trajectories)
    counts = Counter(cell for traj in trajectories for cell in traj.cell_set)
    result = {}
    for traj in trajectories:
        total = sum(counts[cell] - 1 for cell in traj.cell_set)
        result[traj.vehicle] = math.log(total) if total > 0 else 0.0
    return result


def iter_readings_csv(path):
    """
    Yield (line, SensorReading) pairs from a sensor_id,t,x,y,value CSV.

    Line numbers are 1-based file lines, header included, so blank rows do not shift them.

    Raises:
        TrajectoryParseError: On a missing header or malformed row
    """
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != READINGS_CSV_HEADER:
            raise TrajectoryParseError(f"expected header {','.join(READINGS_CSV_HEADER)}", 1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(READINGS_CSV_HEADER):
                raise TrajectoryParseError(f"expected 5 fields, got {len(row)}", line)
            try:
                sensor, t, x, y = (int(v) for v in row[:4])
                value = float(row[4])
            except ValueError as e:
                raise TrajectoryParseError(str(e), line) from e
            if not math.isfinite(value):
                raise TrajectoryParseError("value is not finite", line)
            yield line, SensorReading(sensor, x, y, t, value)


def read_readings_csv(path):
    """
    Parse a sensor_id,t,x,y,value CSV.

    Raises:
        TrajectoryParseError: On a missing header or malformed row
    """
    return [reading for _, reading in iter_readings_csv(path)]


def write_readings_csv(path, readings):
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(READINGS_CSV_HEADER)
        for r in readings:
            writer.writerow([r.sensor, r.t, r.x, r.y, repr(float(r.value))])


def write_inference_json(path, result):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(result.to_dict(), handle, indent=2, sort_keys=True)
