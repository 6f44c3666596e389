"""
Aggregated Sensing Quality (ASQ) and the evaluation metrics used by the runner.

ASQ = (1 - beta) * E + beta * ln(max(Q, 1)), where E is the spatial entropy of
the reliability-weighted density and Q counts cells whose density reaches
the per-vehicle average 1/(CT).
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from errors import ConfigurationError, EvaluationError
from gridworld import DensityField, density

logger = logging.getLogger(__name__)

COVERAGE_MODES = ("strict", "non-strict")
NON_STRICT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class AsqConfig:
    """
    Args:
        beta (float): Balance factor between entropy and coverage, in [0, 1]
        coverage_mode (str): 'strict' (P > 1/CT) or 'non-strict' (P >= 1/CT)
        normalize_entropy (bool): Divide P by its sum before taking the entropy
    """
    beta: float = 0.5
    coverage_mode: str = "non-strict"
    normalize_entropy: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError("must lie in [0, 1]", "asq.beta")
        if self.coverage_mode not in COVERAGE_MODES:
            raise ConfigurationError(f"must be one of {COVERAGE_MODES}", "asq.coverage_mode")


@dataclass(frozen=True)
class AsqBreakdown:
    entropy: float
    coverage_q: int
    asq: float

    def to_dict(self):
        return asdict(self)


def _raw(field):
    if isinstance(field, DensityField):
        return field.values
    return np.asarray(field, dtype=float)


def spatial_entropy(P, normalized=False):
    """
    E = -sum P ln P with 0 ln 0 = 0.

    Args:
        P (DensityField or np.ndarray): Density field
        normalized (bool): Rescale P to sum to one first

    Returns:
        float: Entropy in nats
    """
    p = _raw(P).ravel()
    p = p[p > 0]
    if p.size == 0:
        return 0.0
    if normalized:
        p = p / p.sum()
    return float(-np.sum(p * np.log(p)))


def coverage_count(P, vehicle_count, horizon, mode="non-strict"):
    """
    Number of cells whose density reaches the average 1/(CT).

    Args:
        P (DensityField or np.ndarray): Density field
        vehicle_count (int): Fleet size C
        horizon (int): Window length T
        mode (str): 'strict' or 'non-strict'

    Returns:
        int: Coverage count Q
    """
    if vehicle_count * horizon <= 0:
        raise ConfigurationError("C * T must be positive")
    if mode not in COVERAGE_MODES:
        raise ConfigurationError(f"must be one of {COVERAGE_MODES}", "asq.coverage_mode")

    threshold = 1.0 / (vehicle_count * horizon)
    values = _raw(P)
    if mode == "strict":
        return int(np.count_nonzero(values > threshold))
    return int(np.count_nonzero(values >= threshold - NON_STRICT_TOLERANCE))


def asq_value(entropy, coverage_q, beta):
    """(1 - beta) E + beta ln(max(Q, 1))"""
    return (1.0 - beta) * entropy + beta * math.log(max(coverage_q, 1))


def asq_from_density(P, vehicle_count, horizon, config):
    """
    Score a density field that has already been computed.

    Returns:
        AsqBreakdown: Entropy, coverage count and ASQ
    """
    entropy = spatial_entropy(P, normalized=config.normalize_entropy)
    coverage_q = coverage_count(P, vehicle_count, horizon, config.coverage_mode)
    return AsqBreakdown(entropy, coverage_q, asq_value(entropy, coverage_q, config.beta))


def asq(weighted_trajectories, config, vehicle_count=None, horizon=None, grid=None):
    """
    ASQ of a fleet.

    Args:
        weighted_trajectories (iterable): (Trajectory, reliability factor) pairs
        config (AsqConfig): ASQ parameters
        vehicle_count (int, optional): C; defaults to the number of pairs
        horizon (int, optional): T; defaults to the grid horizon
        grid (GridSpec, optional): Defaults to the first trajectory's grid

    Returns:
        AsqBreakdown: Entropy, coverage count and ASQ
    """
    pairs = list(weighted_trajectories)
    if not pairs:
        raise ConfigurationError("ASQ needs at least one vehicle")
    grid = grid or pairs[0][0].grid
    vehicle_count = vehicle_count or len(pairs)
    horizon = horizon or grid.horizon
    P = density(pairs, vehicle_count, horizon, grid)
    return asq_from_density(P, vehicle_count, horizon, config)


def reliability_factors(weights):
    """
    Rescale truth-discovery weights so the fleet average is 1.

    Args:
        weights (dict): {vehicle: w_c}

    Returns:
        dict: {vehicle: w_c / mean(w)}; all ones when the mean is not positive
    """
    if not weights:
        return {}
    mean = sum(weights.values()) / len(weights)
    if not mean > 0 or not math.isfinite(mean):
        return {c: 1.0 for c in weights}
    return {c: w / mean for c, w in weights.items()}


def _masked(reconstructed, truth, mask):
    reconstructed = np.asarray(reconstructed, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if reconstructed.shape != truth.shape:
        raise EvaluationError(f"shape mismatch {reconstructed.shape} vs {truth.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != truth.shape:
        raise EvaluationError(f"mask shape {mask.shape} does not match field shape {truth.shape}")
    if not mask.any():
        raise EvaluationError("evaluation mask is empty")
    return reconstructed[mask] - truth[mask]


def r_rmse(reconstructed, truth, mask):
    """
    Root mean squared error over the evaluable cells.

    Args:
        reconstructed (np.ndarray): Reconstructed field
        truth (np.ndarray): Ground truth of the same shape
        mask (np.ndarray): Boolean mask of evaluable (non-excluded) cells

    Returns:
        float: R-RMSE in field units
    """
    residuals = _masked(reconstructed, truth, mask)
    return float(np.sqrt(np.mean(residuals ** 2)))


def s_mae(estimates, truth, sensed_mask=None):
    """
    Mean absolute error restricted to sensed cells.

    Args:
        estimates (np.ndarray): Per-cell estimates, NaN where nothing was sensed
        truth (np.ndarray): Ground truth of the same shape
        sensed_mask (np.ndarray, optional): Cells with at least one reading;
            defaults to the finite entries of `estimates`

    Returns:
        float: S-MAE in field units
    """
    estimates = np.asarray(estimates, dtype=float)
    if sensed_mask is None:
        sensed_mask = np.isfinite(estimates)
    residuals = _masked(estimates, truth, sensed_mask)
    return float(np.mean(np.abs(residuals)))


def error_reduction(rmse_method, rmse_na):
    """
    Relative R-RMSE reduction against the no-actuation baseline, in percent.

    Raises:
        EvaluationError: If the baseline error is not positive
    """
    if not rmse_na > 0:
        raise EvaluationError("baseline R-RMSE must be positive")
    return 100.0 * (rmse_na - rmse_method) / rmse_na


def max_error_reduction(rmse_by_algo, rmse_na_by_algo):
    """
    Largest error reduction over the reconstruction algorithms both runs share.

    Args:
        rmse_by_algo (dict): {algorithm: R-RMSE} of the evaluated dispatcher
        rmse_na_by_algo (dict): {algorithm: R-RMSE} of no actuation

    Returns:
        float: Percentage
    """
    shared = sorted(set(rmse_by_algo) & set(rmse_na_by_algo))
    if not shared:
        raise EvaluationError("no reconstruction algorithm in common")
    return max(error_reduction(rmse_by_algo[a], rmse_na_by_algo[a]) for a in shared)


def spearman(a, b):
    """
    Spearman rank correlation; NaN when either column is constant.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return float("nan")
    rho, _ = stats.spearmanr(a, b)
    return float(rho)
