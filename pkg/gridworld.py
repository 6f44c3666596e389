"""
Discrete spatiotemporal grid for the QUIDS simulator.

Cells are 1-based (x, y, t). A trajectory is stored sparsely as the cells
a vehicle occupies, one per time slot, instead of a dense M x N x T tensor.
"""

import csv
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from errors import ConfigurationError, TrajectoryValidationError

logger = logging.getLogger(__name__)

TRAJECTORY_CSV_HEADER = ["vehicle_id", "candidate_k", "t", "x", "y"]


class CellIndex(NamedTuple):
    """A 1-based spatiotemporal cell"""
    x: int
    y: int
    t: int


@dataclass(frozen=True)
class GridSpec:
    """
    The M x N x T sensing grid.

    Args:
        width (int): Number of cells along x (M)
        height (int): Number of cells along y (N)
        horizon (int): Number of time slots (T)
        slot_minutes (float): Duration of one time slot in minutes
        excluded (frozenset): (x, y) cells that are never sensed or traversed
    """
    width: int
    height: int
    horizon: int
    slot_minutes: float = 2.0
    excluded: frozenset = frozenset()

    def __post_init__(self):
        if int(self.width) < 1:
            raise ConfigurationError("must be >= 1", "grid.width")
        if int(self.height) < 1:
            raise ConfigurationError("must be >= 1", "grid.height")
        if int(self.horizon) < 1:
            raise ConfigurationError("must be >= 1", "grid.horizon")
        if not self.slot_minutes > 0:
            raise ConfigurationError("must be > 0", "grid.slot_minutes")

        excluded = frozenset((int(x), int(y)) for x, y in self.excluded)
        for x, y in excluded:
            if not (1 <= x <= self.width and 1 <= y <= self.height):
                raise ConfigurationError(f"cell ({x}, {y}) is outside the grid", "grid.excluded")
        object.__setattr__(self, "excluded", excluded)

    @property
    def shape(self):
        """Dense array shape (M, N, T)"""
        return (self.width, self.height, self.horizon)

    def in_bounds(self, x, y, t=None):
        """
        Check whether a position lies on the grid.

        Args:
            x (int): Column, 1-based
            y (int): Row, 1-based
            t (int, optional): Time slot, 1-based; ignored when None

        Returns:
            bool: True if the position is inside the grid
        """
        if not (1 <= x <= self.width and 1 <= y <= self.height):
            return False
        return t is None or 1 <= t <= self.horizon

    def is_excluded(self, x, y):
        return (x, y) in self.excluded

    def is_open(self, x, y):
        """True for in-bounds cells a vehicle may occupy"""
        return self.in_bounds(x, y) and not self.is_excluded(x, y)

    def open_cells(self):
        """
        All non-excluded (x, y) cells in x-major order.

        Returns:
            list: (x, y) tuples
        """
        return [
            (x, y)
            for x in range(1, self.width + 1)
            for y in range(1, self.height + 1)
            if (x, y) not in self.excluded
        ]

    def open_mask(self):
        """Boolean (M, N) array, False on excluded cells"""
        mask = np.ones((self.width, self.height), dtype=bool)
        for x, y in self.excluded:
            mask[x - 1, y - 1] = False
        return mask

    def evaluable_mask(self):
        """Boolean (M, N, T) array of cells that count in metric denominators"""
        return np.repeat(self.open_mask()[:, :, None], self.horizon, axis=2)

    def neighbors(self, x, y):
        """
        Cells reachable from (x, y) within one slot: staying put or a 4-neighbour move.

        Returns:
            list: (x, y) tuples, the current cell first
        """
        moves = [(x, y), (x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]
        return [(cx, cy) for cx, cy in moves if self.is_open(cx, cy)]

    def window(self, period):
        """
        The planning grid for one actuation window of `period` slots.

        Args:
            period (int): Slots per window

        Returns:
            GridSpec: Same area and exclusions, horizon = period
        """
        return GridSpec(self.width, self.height, period, self.slot_minutes, self.excluded)

    def same_area(self, other):
        return (
            self.width == other.width
            and self.height == other.height
            and self.excluded == other.excluded
        )


@dataclass(frozen=True)
class Trajectory:
    """
    Sparse occupancy r_c^k of one vehicle over a dispatch window.

    Args:
        vehicle (int): Vehicle id c
        candidate (int): Candidate index k, 0 for the original trajectory
        cells (tuple): CellIndex values ordered by time slot
        grid (GridSpec): Grid the cells refer to
    """
    vehicle: int
    candidate: int
    cells: tuple
    grid: GridSpec

    def __post_init__(self):
        cells = tuple(sorted((CellIndex(*cell) for cell in self.cells), key=lambda c: c.t))
        object.__setattr__(self, "cells", cells)

    def __len__(self):
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    @cached_property
    def _by_slot(self):
        return {cell.t: (cell.x, cell.y) for cell in self.cells}

    @cached_property
    def cell_set(self):
        return frozenset(self.cells)

    def at(self, t):
        """
        Position at time slot t.

        Returns:
            tuple: (x, y), or None if the vehicle occupies no cell at t
        """
        return self._by_slot.get(t)

    @property
    def start(self):
        return self.cells[0] if self.cells else None

    @property
    def end(self):
        return self.cells[-1] if self.cells else None

    def index_arrays(self):
        """
        0-based index arrays for fancy indexing into an (M, N, T) array.

        Returns:
            tuple: (xs, ys, ts) integer numpy arrays
        """
        if not self.cells:
            empty = np.zeros(0, dtype=int)
            return empty, empty, empty
        arr = np.asarray(self.cells, dtype=int)
        return arr[:, 0] - 1, arr[:, 1] - 1, arr[:, 2] - 1

    def occupancy(self):
        """Dense 0/1 tensor r_c^k on this trajectory's grid"""
        dense = np.zeros(self.grid.shape)
        dense[self.index_arrays()] = 1.0
        return dense

    def shifted(self, offset, grid):
        """
        Re-express the trajectory on another grid with time slots moved by `offset`.

        Args:
            offset (int): Slots added to every t
            grid (GridSpec): Target grid

        Returns:
            Trajectory: The shifted copy
        """
        cells = tuple(CellIndex(c.x, c.y, c.t + offset) for c in self.cells)
        return Trajectory(self.vehicle, self.candidate, cells, grid)

    def relabeled(self, candidate):
        return Trajectory(self.vehicle, candidate, self.cells, self.grid)


@dataclass(frozen=True)
class DensityField:
    """
    Reliability-weighted occupancy P(x, y, t).

    Args:
        values (np.ndarray): (M, N, T) nonnegative array
        grid (GridSpec): Grid of the field
    """
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def total(self):
        return float(self.values.sum())


def _check_same_grid(a, b):
    if not a.grid.same_area(b.grid) or a.grid.horizon != b.grid.horizon:
        raise ConfigurationError(
            f"trajectories of vehicles {a.vehicle} and {b.vehicle} are on different grids"
        )


def overlap_count(a, b):
    """
    Number of time slots in which two trajectories occupy the same cell.

    Args:
        a (Trajectory): First trajectory
        b (Trajectory): Second trajectory

    Returns:
        int: |{t : a and b occupy the same (x, y) at t}|

    Raises:
        ConfigurationError: If the trajectories live on different grids
    """
    _check_same_grid(a, b)
    return len(a.cell_set & b.cell_set)


def occupancy_counts(trajectories, grid):
    """
    Number of vehicles in each cell.

    Args:
        trajectories (iterable): Trajectory objects on `grid`
        grid (GridSpec): Target grid

    Returns:
        np.ndarray: (M, N, T) integer counts
    """
    counts = np.zeros(grid.shape, dtype=int)
    for traj in trajectories:
        np.add.at(counts, traj.index_arrays(), 1)
    return counts


def density(weighted_trajectories, vehicle_count, horizon, grid=None):
    """
    P(x, y, t) = sum_c w_c D_c(x, y, t) / (C T).

    Args:
        weighted_trajectories (iterable): (Trajectory, weight) pairs
        vehicle_count (int): Fleet size C
        horizon (int): Window length T
        grid (GridSpec, optional): Grid of the field; taken from the first
            trajectory when omitted

    Returns:
        DensityField: The weighted occupancy field
    """
    pairs = list(weighted_trajectories)
    if vehicle_count < 1:
        raise ConfigurationError("vehicle count must be >= 1")
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    if grid is None:
        if not pairs:
            raise ConfigurationError("a grid is required for an empty fleet")
        grid = pairs[0][0].grid

    values = np.zeros(grid.shape)
    for traj, weight in pairs:
        if weight < 0:
            raise ConfigurationError(f"weight of vehicle {traj.vehicle} is negative")
        np.add.at(values, traj.index_arrays(), float(weight))
    values /= float(vehicle_count * horizon)
    return DensityField(values, grid)


def validate_trajectory(traj, grid):
    """
    List every Trajectory invariant the trajectory violates.

    Args:
        traj (Trajectory): Trajectory to check
        grid (GridSpec): Grid to check against

    Returns:
        list: Violation dicts {'kind', 't', 'cell', 'reason'}; empty when valid
    """
    violations = []
    seen_slots = set()
    previous = None

    for cell in traj.cells:
        if not grid.in_bounds(cell.x, cell.y, cell.t):
            violations.append({
                'kind': 'out-of-bounds', 't': cell.t, 'cell': tuple(cell),
                'reason': f"cell {tuple(cell)} is outside the {grid.width}x{grid.height}x{grid.horizon} grid",
            })
        elif grid.is_excluded(cell.x, cell.y):
            violations.append({
                'kind': 'excluded-cell', 't': cell.t, 'cell': tuple(cell),
                'reason': f"cell ({cell.x}, {cell.y}) is excluded",
            })

        if cell.t in seen_slots:
            violations.append({
                'kind': 'duplicate-slot', 't': cell.t, 'cell': tuple(cell),
                'reason': f"more than one cell at t={cell.t}",
            })
            continue
        seen_slots.add(cell.t)

        if previous is not None:
            if cell.t - previous.t > 1:
                violations.append({
                    'kind': 'non-contiguous', 't': cell.t, 'cell': tuple(cell),
                    'reason': f"no cell between t={previous.t} and t={cell.t}",
                })
            elif abs(cell.x - previous.x) + abs(cell.y - previous.y) > 1:
                violations.append({
                    'kind': 'adjacency', 't': cell.t, 'cell': tuple(cell),
                    'reason': f"moved from ({previous.x}, {previous.y}) to ({cell.x}, {cell.y}) in one slot",
                })
        previous = cell

    return violations


def ensure_valid(traj, grid, line=None):
    """
    Raise if `traj` violates any Trajectory invariant.

    Raises:
        TrajectoryValidationError: With the violation list attached
    """
    violations = validate_trajectory(traj, grid)
    if violations:
        raise TrajectoryValidationError(
            f"vehicle {traj.vehicle} candidate {traj.candidate}: {violations[0]['reason']}",
            violations,
            line,
        )


def write_trajectory_csv(path, trajectories):
    """
    Export trajectories as one row per occupied slot.

    Args:
        path (str): Output file
        trajectories (iterable): Trajectory objects
    """
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRAJECTORY_CSV_HEADER)
        for traj in trajectories:
            for cell in traj.cells:
                writer.writerow([traj.vehicle, traj.candidate, cell.t, cell.x, cell.y])
