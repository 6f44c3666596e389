"""
Field reconstruction from aggregated readings.

Both reconstructors work per time slice in the (x, y) plane: inverse
distance weighting and squared-exponential kernel regression.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist

from errors import ConfigurationError, EvaluationError
from gridworld import GridSpec
from metrics import r_rmse, s_mae

logger = logging.getLogger(__name__)

MAX_REGULARIZATION_STEPS = 12
MIN_JITTER = 1e-10


@dataclass(frozen=True)
class ReconstructionInput:
    """
    Aggregated values m* on the sensed cells of a grid.

    Args:
        values (np.ndarray): (M, N, T) array, NaN where nothing was sensed
        grid (GridSpec): Grid of the field
    """
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ConfigurationError(f"input shape {values.shape} does not match grid {self.grid.shape}")
        values[~self.grid.evaluable_mask()] = np.nan
        if not np.isfinite(values).any():
            raise EvaluationError("no sensed cell to reconstruct from")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_truth(cls, truth, grid, offset=0):
        """
        Args:
            truth (TruthField): Inferred per-cell values
            grid (GridSpec): Target grid
            offset (int): Slots subtracted from each cell's t
        """
        return cls(truth.to_array(grid, offset), grid)

    @property
    def mask(self):
        return np.isfinite(self.values)

    def global_mean(self):
        return float(self.values[self.mask].mean())

    def slice_points(self, t):
        """
        Sensed cells of slot t (1-based).

        Returns:
            tuple: ((k, 2) float coordinates, (k,) values)
        """
        layer = self.values[:, :, t - 1]
        xs, ys = np.nonzero(np.isfinite(layer))
        coords = np.column_stack([xs + 1, ys + 1]).astype(float)
        return coords, layer[xs, ys]


@dataclass(frozen=True)
class ReconstructedField:
    values: np.ndarray
    algorithm: str
    grid: GridSpec
    metadata: dict = field(default_factory=dict)

    def to_frame(self):
        """Long-format table t, x, y, value, algorithm over the non-excluded cells"""
        rows = [
            (t, x, y, float(self.values[x - 1, y - 1, t - 1]), self.algorithm)
            for t in range(1, self.grid.horizon + 1)
            for x, y in self.grid.open_cells()
        ]
        return pd.DataFrame(rows, columns=["t", "x", "y", "value", "algorithm"])


def _query_points(grid):
    cells = grid.open_cells()
    return cells, np.asarray(cells, dtype=float)


def _fill(cells, t, estimates, out):
    for (x, y), value in zip(cells, estimates):
        out[x - 1, y - 1, t - 1] = value


def interpolate_linear(inputs, power=2.0):
    """
    Inverse-distance-weighted interpolation per time slice.

    Sensed cells keep their value. A slice with no sensed cell takes the
    mean of every sensed value.

    Args:
        inputs (ReconstructionInput): Sensed values
        power (float): Distance exponent

    Returns:
        ReconstructedField: Tagged 'linear'
    """
    grid = inputs.grid
    cells, queries = _query_points(grid)
    out = np.full(grid.shape, np.nan)
    fallback = inputs.global_mean()
    empty_slices = []

    for t in range(1, grid.horizon + 1):
        coords, values = inputs.slice_points(t)
        if not len(values):
            _fill(cells, t, np.full(len(cells), fallback), out)
            empty_slices.append(t)
            continue

        distances = cdist(queries, coords)
        exact = distances == 0
        with np.errstate(divide="ignore"):
            weights = 1.0 / distances ** power
        weights[exact] = 0.0
        estimates = weights @ values / np.where(weights.sum(axis=1) > 0, weights.sum(axis=1), 1.0)
        hit_rows, hit_cols = np.nonzero(exact)
        estimates[hit_rows] = values[hit_cols]
        _fill(cells, t, estimates, out)

    return ReconstructedField(out, "linear", grid, {'power': power, 'empty_slices': empty_slices})


def _factor(gram, noise):
    jitter = noise
    for attempt in range(MAX_REGULARIZATION_STEPS + 1):
        try:
            factor = cho_factor(gram + jitter * np.eye(len(gram)), lower=True)
            return factor, jitter, attempt > 0
        except LinAlgError:
            jitter = max(jitter * 10.0, MIN_JITTER)
    raise EvaluationError(f"kernel system stays singular at noise {jitter:g}")


def interpolate_kernel(inputs, length_scale=2.0, noise=1e-2):
    """
    Squared-exponential kernel regression per time slice, mean prediction only.

    The prior mean of each slice is the mean of its sensed values. If the
    kernel system cannot be factored, the noise term is grown tenfold until it
    can, and the field is flagged `ill_conditioned`.

    Args:
        inputs (ReconstructionInput): Sensed values
        length_scale (float): Kernel length scale in cells
        noise (float): Diagonal regularization

    Returns:
        ReconstructedField: Tagged 'kernel'
    """
    if not length_scale > 0:
        raise ConfigurationError("must be > 0", "reconstruction.length_scale")
    if noise < 0:
        raise ConfigurationError("must be >= 0", "reconstruction.noise")

    grid = inputs.grid
    cells, queries = _query_points(grid)
    out = np.full(grid.shape, np.nan)
    fallback = inputs.global_mean()
    ill_conditioned = False
    used_noise = noise
    empty_slices = []

    for t in range(1, grid.horizon + 1):
        coords, values = inputs.slice_points(t)
        if not len(values):
            _fill(cells, t, np.full(len(cells), fallback), out)
            empty_slices.append(t)
            continue

        prior = float(values.mean())
        gram = np.exp(-cdist(coords, coords, "sqeuclidean") / (2 * length_scale ** 2))
        factor, jitter, grown = _factor(gram, noise)
        if grown:
            logger.warning("slot %d: kernel system regularized to noise %g", t, jitter)
            ill_conditioned = True
            used_noise = max(used_noise, jitter)
        alpha = cho_solve(factor, values - prior)
        cross = np.exp(-cdist(queries, coords, "sqeuclidean") / (2 * length_scale ** 2))
        _fill(cells, t, prior + cross @ alpha, out)

    metadata = {
        'length_scale': length_scale,
        'noise': used_noise,
        'ill_conditioned': ill_conditioned,
        'empty_slices': empty_slices,
    }
    return ReconstructedField(out, "kernel", grid, metadata)


RECONSTRUCTORS = {
    "linear": lambda inputs, config: interpolate_linear(inputs, config.idw_power),
    "kernel": lambda inputs, config: interpolate_kernel(inputs, config.length_scale, config.noise),
}


def reconstruct_all(inputs, config):
    """
    Run every reconstructor.

    Args:
        inputs (ReconstructionInput): Sensed values
        config (ReconstructionConfig): Reconstructor parameters

    Returns:
        dict: {algorithm: ReconstructedField}
    """
    return {name: build(inputs, config) for name, build in RECONSTRUCTORS.items()}


def evaluate(reconstructed, truth, mask=None, inputs=None):
    """
    Score a reconstruction against ground truth.

    Args:
        reconstructed (ReconstructedField): Output of a reconstructor
        truth (GroundTruthField or np.ndarray): True field on the same grid
        mask (np.ndarray, optional): Evaluable cells; defaults to the non-excluded cells
        inputs (ReconstructionInput, optional): When given, S-MAE of the sensed values is added

    Returns:
        dict: {'algorithm', 'r_rmse'} plus 's_mae' when inputs are given
    """
    truth_values = getattr(truth, "values", truth)
    if mask is None:
        mask = reconstructed.grid.evaluable_mask()
    record = {
        'algorithm': reconstructed.algorithm,
        'r_rmse': r_rmse(reconstructed.values, truth_values, mask),
    }
    if inputs is not None:
        record['s_mae'] = s_mae(inputs.values, truth_values, inputs.mask & mask)
    return record


def write_reconstruction_csv(path, fields):
    """
    Args:
        path (str): Output file
        fields (iterable): ReconstructedField values
    """
    frames = [f.to_frame() for f in fields]
    if not frames:
        frames = [pd.DataFrame(columns=["t", "x", "y", "value", "algorithm"])]
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
