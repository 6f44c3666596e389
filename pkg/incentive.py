"""
Ride-request demand, incentive quotes and the dispatch budget ledger.

A driver asked to leave their predicted route is paid
a_c = max(min(r_max, r_max - r_u (Q_c^r - Q_c^0)), r_min), where Q_c^0 and
Q_c^r are the expected ride requests along the original and the proposed
trajectory.
"""

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DemandField:
    """
    Probability Q(x, y, t) of at least one ride request per cell.

    Args:
        values (np.ndarray): (M, N, T) array in [0, 1]
        grid (GridSpec): Grid of the field
    """
    values: np.ndarray
    grid: object

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ConfigurationError(f"demand shape {values.shape} does not match grid {self.grid.shape}")
        if values.size and (values.min() < 0 or values.max() > 1):
            raise ConfigurationError("demand probabilities must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.shape), grid)

    def to_frame(self):
        """Long-format table with columns t, x, y, q over non-excluded cells"""
        rows = []
        for x, y in self.grid.open_cells():
            for t in range(1, self.grid.horizon + 1):
                rows.append((t, x, y, float(self.values[x - 1, y - 1, t - 1])))
        return pd.DataFrame(rows, columns=["t", "x", "y", "q"]).sort_values(["t", "x", "y"])


@dataclass(frozen=True)
class IncentiveParams:
    """
    Args:
        r_min (float): Lower bound of a quote
        r_max (float): Upper bound of a quote
        budget (float): Total incentive budget B
        horizon (int): Window length T used for r_u = r_max / T
        utility_rate (float, optional): Explicit r_u overriding r_max / T
        fixed_incentive (float, optional): Constant quote used when incentives are disabled
    """
    r_min: float = 2.0
    r_max: float = 20.0
    budget: float = 400.0
    horizon: int = 5
    utility_rate: float = None
    fixed_incentive: float = None

    def __post_init__(self):
        if not self.r_min > 0:
            raise ConfigurationError("must be > 0", "incentive.r_min")
        if self.r_max < self.r_min:
            raise ConfigurationError("must be >= r_min", "incentive.r_max")
        if self.budget < 0:
            raise ConfigurationError("must be >= 0", "incentive.budget")
        if self.horizon < 1:
            raise ConfigurationError("must be >= 1", "incentive.horizon")
        if self.utility_rate is not None and self.utility_rate < 0:
            raise ConfigurationError("must be >= 0", "incentive.utility_rate")
        if self.fixed_incentive is not None and not self.r_min <= self.fixed_incentive <= self.r_max:
            raise ConfigurationError("must lie in [r_min, r_max]", "incentive.fixed_incentive")

    @property
    def r_u(self):
        if self.utility_rate is not None:
            return self.utility_rate
        return self.r_max / self.horizon

    @property
    def flat_rate(self):
        return self.r_max if self.fixed_incentive is None else self.fixed_incentive


@dataclass(frozen=True)
class IncentiveQuote:
    vehicle: int
    candidate: int
    amount: float
    q_original: float
    q_candidate: float

    def to_dict(self):
        return asdict(self)


def to_cents(amount):
    return int(round(amount * 100))


def demand_probability(requests, idle, grid=None):
    """
    Q = min(1, requests / idle); 1 when idle = 0 and requests > 0, else 0.

    Args:
        requests (np.ndarray): Ride request counts per cell
        idle (np.ndarray): Idle vehicle counts per cell
        grid (GridSpec, optional): When given, the result is a DemandField
            with Q = 0 on excluded cells

    Returns:
        DemandField or np.ndarray: Request probabilities
    """
    requests = np.asarray(requests, dtype=float)
    idle = np.asarray(idle, dtype=float)
    if (requests < 0).any() or (idle < 0).any():
        raise ConfigurationError("request and idle counts must be nonnegative")

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(idle > 0, requests / np.where(idle > 0, idle, 1.0), np.where(requests > 0, 1.0, 0.0))
    q = np.minimum(1.0, ratio)

    if grid is None:
        return q
    q = q * grid.open_mask()[:, :, None]
    return DemandField(q, grid)


def expected_requests(traj, demand):
    """
    Sum of Q over the cells a trajectory occupies during the window.

    Args:
        traj (Trajectory): Vehicle trajectory
        demand (DemandField): Request probabilities on the same grid

    Returns:
        float: Expected number of ride requests
    """
    if not traj.grid.same_area(demand.grid) or traj.grid.horizon != demand.grid.horizon:
        raise ConfigurationError(f"trajectory of vehicle {traj.vehicle} and demand are on different grids")
    if not len(traj):
        return 0.0
    return float(demand.values[traj.index_arrays()].sum())


def quote(vehicle, original, candidate, demand, params):
    """
    Price a dispatch of `vehicle` from `original` onto `candidate`.

    Args:
        vehicle (int): Vehicle id
        original (Trajectory): Predicted original trajectory r_c^0
        candidate (Trajectory): Proposed trajectory D_c
        demand (DemandField): Request probabilities
        params (IncentiveParams): Pricing parameters

    Returns:
        IncentiveQuote: Clamped, rounded incentive with both request expectations
    """
    q_original = expected_requests(original, demand)
    q_candidate = expected_requests(candidate, demand)
    raw = params.r_max - params.r_u * (q_candidate - q_original)
    amount = max(min(params.r_max, raw), params.r_min)
    return IncentiveQuote(vehicle, candidate.candidate, round(amount, 2), q_original, q_candidate)


def flat_quote(vehicle, original, candidate, demand, params):
    """Same request accounting as quote(), but every dispatch costs params.flat_rate"""
    q_original = expected_requests(original, demand)
    q_candidate = expected_requests(candidate, demand)
    return IncentiveQuote(vehicle, candidate.candidate, round(params.flat_rate, 2), q_original, q_candidate)


class BudgetLedger:
    """
    Running account of committed incentives.

    Amounts are tracked in integer cents so `committed <= budget` is exact.
    The ledger is owned by a single planner at a time.
    """
    def __init__(self, budget):
        """
        Args:
            budget (float): Total budget B
        """
        if budget < 0:
            raise ConfigurationError("must be >= 0", "incentive.budget")
        self.budget = float(budget)
        self._budget_cents = to_cents(budget)
        self._committed_cents = 0
        self.entries = {}
        self.audit = []

    @property
    def committed(self):
        return self._committed_cents / 100

    @property
    def remaining(self):
        return (self._budget_cents - self._committed_cents) / 100

    def can_afford(self, amount, pending=0.0):
        """
        Check whether `amount` fits on top of the committed and `pending` spend.
        """
        return self._committed_cents + to_cents(pending) + to_cents(amount) <= self._budget_cents

    def commit(self, quote):
        """
        Record a quote if it fits the budget.

        Args:
            quote (IncentiveQuote): The incentive to pay

        Returns:
            bool: True if accepted; a rejection leaves the ledger untouched
        """
        cents = to_cents(quote.amount)
        if quote.vehicle in self.entries:
            logger.debug("vehicle %s already holds an incentive", quote.vehicle)
            return False
        if self._committed_cents + cents > self._budget_cents:
            logger.debug(
                "rejected %.2f for vehicle %s: %.2f of %.2f committed",
                quote.amount, quote.vehicle, self.committed, self.budget,
            )
            return False

        self._committed_cents += cents
        self.entries[quote.vehicle] = quote
        self.audit.append({
            'event': 'commit', 'vehicle': quote.vehicle, 'k': quote.candidate,
            'a_c': quote.amount, 'committed_after': self.committed,
        })
        return True

    def refund(self, vehicle):
        """
        Return a vehicle's incentive to the budget.

        Returns:
            float: Refunded amount, 0 if the vehicle held none
        """
        quote = self.entries.pop(vehicle, None)
        if quote is None:
            return 0.0
        self._committed_cents -= to_cents(quote.amount)
        self.audit.append({
            'event': 'refund', 'vehicle': vehicle, 'k': quote.candidate,
            'a_c': quote.amount, 'committed_after': self.committed,
        })
        return quote.amount

    def copy(self):
        ledger = BudgetLedger(self.budget)
        ledger._committed_cents = self._committed_cents
        ledger.entries = dict(self.entries)
        ledger.audit = list(self.audit)
        return ledger

    def audit_lines(self):
        return [json.dumps(entry, sort_keys=True) for entry in self.audit]

    def write_audit(self, path):
        with open(path, "w", encoding="utf-8") as handle:
            for line in self.audit_lines():
                handle.write(line + "\n")


def write_demand_csv(path, demand):
    demand.to_frame().to_csv(path, index=False)
