"""
Mutually assisted, belief-aware vehicle dispatching.

The planner repeatedly scores every vehicle's candidate trajectories by their
V value, the negative reliability-weighted overlap with the current fleet
density, and commits the best affordable move. Vehicles are visited in
descending belief so well-corroborated sensors claim the budget first.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from errors import ConfigurationError
from gridworld import Trajectory, density
from incentive import BudgetLedger, IncentiveQuote, flat_quote, quote, to_cents
from metrics import AsqBreakdown, AsqConfig, asq_from_density, reliability_factors
from truth_discovery import beliefs

logger = logging.getLogger(__name__)

ASQ_TOLERANCE = 1e-12


class DispatcherKind(Enum):
    QUIDS = "quids"
    NO_RE = "nore"
    NO_IN = "noin"
    NO_ACTUATION = "na"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(kind.value for kind in cls)
            raise ConfigurationError(f"unknown dispatcher '{value}' (choose from {choices})", "dispatcher")


@dataclass(frozen=True)
class CandidateSet:
    """
    Candidate trajectories r_c^0..r_c^K of one vehicle; index k is position k.
    """
    vehicle: int
    candidates: tuple

    def __post_init__(self):
        candidates = tuple(sorted(self.candidates, key=lambda traj: traj.candidate))
        if not candidates or candidates[0].candidate != 0:
            raise ConfigurationError(f"vehicle {self.vehicle} has no original trajectory (k = 0)")
        for k, traj in enumerate(candidates):
            if traj.vehicle != self.vehicle:
                raise ConfigurationError(f"candidate {k} belongs to vehicle {traj.vehicle}, not {self.vehicle}")
            if traj.candidate != k:
                raise ConfigurationError(f"vehicle {self.vehicle} candidates are not numbered 0..K")
        object.__setattr__(self, "candidates", candidates)

    @property
    def original(self):
        return self.candidates[0]

    def __len__(self):
        return len(self.candidates)

    def __getitem__(self, k):
        return self.candidates[k]


@dataclass(frozen=True)
class AcceptanceModel:
    """
    Args:
        rate (float): Probability a driver accepts a dispatched route
        seed (int): RNG seed for the acceptance draws
    """
    rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigurationError("must lie in [0, 1]", "acceptance_rate")


@dataclass(frozen=True)
class VehicleDecision:
    vehicle: int
    dispatched: bool
    trajectory: Trajectory
    original: Trajectory
    incentive: float = 0.0
    v_before: float = 0.0
    v_after: float = 0.0

    @property
    def candidate(self):
        return self.trajectory.candidate

    def reverted(self):
        return VehicleDecision(self.vehicle, False, self.original, self.original)


class Proposal(NamedTuple):
    vehicle: int
    candidate: int
    quote: IncentiveQuote
    v_before: float
    v_after: float


@dataclass
class StepRecord:
    step: int
    selected: Optional[tuple]
    committed: bool
    proposals: list
    cancelled: list
    budget_remaining: float
    asq: float

    def to_dict(self):
        return {
            'step': self.step,
            'selected': list(self.selected) if self.selected else None,
            'committed': self.committed,
            'dispatched': [
                {'c': p.vehicle, 'k': p.candidate, 'a_c': p.quote.amount,
                 'v_before': p.v_before, 'v_after': p.v_after}
                for p in self.proposals
            ],
            'cancelled': list(self.cancelled),
            'budget_remaining': self.budget_remaining,
            'asq': self.asq,
        }


@dataclass
class DispatchPlan:
    """
    Per-vehicle decisions, spend and resulting ASQ.

    Args:
        kind (DispatcherKind): Dispatcher that produced the plan
        decisions (dict): {vehicle: VehicleDecision}
        factors (dict): Reliability factors the plan was scored with
        budget (float): Budget B
        asq (AsqBreakdown): ASQ of the chosen trajectories
        steps (list): StepRecord per greedy step
        ledger (BudgetLedger): Ledger holding the committed incentives
    """
    kind: DispatcherKind
    decisions: dict
    factors: dict
    budget: float
    asq: AsqBreakdown
    steps: list = field(default_factory=list)
    ledger: BudgetLedger = None
    asq_config: AsqConfig = None

    @property
    def spend(self):
        return sum(to_cents(d.incentive) for d in self.decisions.values() if d.dispatched) / 100

    @property
    def dispatched_count(self):
        return sum(1 for d in self.decisions.values() if d.dispatched)

    def trajectories(self):
        return [self.decisions[c].trajectory for c in sorted(self.decisions)]

    def is_budget_safe(self):
        return to_cents(self.spend) <= to_cents(self.budget)

    def to_dict(self):
        return {
            'kind': self.kind.value,
            'steps': [step.to_dict() for step in self.steps],
            'decisions': [
                {'c': d.vehicle, 'I_c': int(d.dispatched), 'k': d.candidate, 'a_c': d.incentive}
                for d in (self.decisions[c] for c in sorted(self.decisions))
            ],
            'spend': self.spend,
            'budget_remaining': round(self.budget - self.spend, 2),
            'asq': self.asq.to_dict(),
        }


def v_value(candidate, weight, P):
    """
    V = -(sum w_c r_c^k P) / sum P.

    Args:
        candidate (Trajectory): Candidate trajectory
        weight (float): Reliability factor of the vehicle
        P (DensityField): Current density

    Returns:
        float: Score <= 0; 0 when the density is empty
    """
    total = P.total()
    if not total > 0:
        return 0.0
    overlap = float(P.values[candidate.index_arrays()].sum())
    return -(weight * overlap) / total


def fleet_factors(vehicles, weights, uniform=False):
    """Reliability factors per vehicle; vehicles without a weight get the fleet mean"""
    if uniform:
        return {c: 1.0 for c in vehicles}
    weights = dict(weights or {})
    known = [weights[c] for c in vehicles if c in weights]
    mean = sum(known) / len(known) if known else 1.0
    return reliability_factors({c: weights.get(c, mean) for c in vehicles})


class BeliefAwareDispatcher:
    """
    Greedy planner over candidate sets, one committed vehicle per step.
    """
    def __init__(self, candidate_sets, weights, demand, params, asq_config=None, kind=DispatcherKind.QUIDS):
        """
        Args:
            candidate_sets (iterable): CandidateSet per vehicle
            weights (dict): Truth-discovery weights {vehicle: w_c}
            demand (DemandField): Request probabilities over the window
            params (IncentiveParams): Pricing and budget
            asq_config (AsqConfig, optional): ASQ parameters
            kind (DispatcherKind): QUIDS, NO_RE or NO_IN
        """
        sets = sorted(candidate_sets, key=lambda cs: cs.vehicle)
        if not sets:
            raise ConfigurationError("cannot dispatch an empty fleet")
        self.kind = DispatcherKind.parse(kind)
        self.sets = {cs.vehicle: cs for cs in sets}
        if len(self.sets) != len(sets):
            raise ConfigurationError("duplicate vehicle ids in candidate sets")
        self.grid = sets[0].original.grid
        self.horizon = self.grid.horizon
        self.demand = demand
        self.params = params
        self.asq_config = asq_config or AsqConfig()
        self.factors = fleet_factors(self.sets, weights, uniform=self.kind is DispatcherKind.NO_RE)

        self.chosen = {c: cs.original for c, cs in self.sets.items()}
        self.decisions = {c: VehicleDecision(c, False, cs.original, cs.original) for c, cs in self.sets.items()}
        self.cancelled = set()
        self.ledger = BudgetLedger(params.budget)
        self.steps = []
        self.asq = self._score(self.chosen)

    @property
    def vehicle_count(self):
        return len(self.sets)

    def _density(self, chosen):
        pairs = [(chosen[c], self.factors[c]) for c in sorted(chosen)]
        return density(pairs, self.vehicle_count, self.horizon, self.grid)

    def _score(self, chosen):
        return asq_from_density(self._density(chosen), self.vehicle_count, self.horizon, self.asq_config)

    def _quote(self, vehicle, candidate):
        pricing = flat_quote if self.kind is DispatcherKind.NO_IN else quote
        return pricing(vehicle, self.sets[vehicle].original, candidate, self.demand, self.params)

    def open_vehicles(self):
        return [c for c in self.sets if not self.decisions[c].dispatched and c not in self.cancelled]

    def proposals(self):
        """
        Best affordable move of every open vehicle, in descending belief order.

        Returns:
            tuple: (proposals, skipped) where skipped vehicles' best candidate
            is their original trajectory
        """
        P = self._density(self.chosen)
        epsilon = beliefs(self.chosen[c] for c in sorted(self.chosen))
        order = sorted(self.open_vehicles(), key=lambda c: (-epsilon[c], c))

        proposals = []
        skipped = []
        pending = 0.0
        for c in order:
            weight = self.factors[c]
            scores = [v_value(traj, weight, P) for traj in self.sets[c].candidates]
            best = max(range(len(scores)), key=lambda k: (scores[k], -k))
            if scores[best] <= scores[0]:
                skipped.append(c)
                continue
            offer = self._quote(c, self.sets[c][best])
            if not self.ledger.can_afford(offer.amount, pending):
                continue
            pending += offer.amount
            proposals.append(Proposal(c, best, offer, scores[0], scores[best]))
        return proposals, skipped

    def step(self):
        """
        Run one greedy step.

        Returns:
            StepRecord: The step, or None once no vehicle can be moved
        """
        proposals, skipped = self.proposals()
        if not proposals:
            return None

        best = max(proposals, key=lambda p: (p.v_after, -p.vehicle))
        trial = dict(self.chosen)
        trial[best.vehicle] = self.sets[best.vehicle][best.candidate]
        trial_asq = self._score(trial)

        committed = trial_asq.asq >= self.asq.asq - ASQ_TOLERANCE and self.ledger.commit(best.quote)
        if committed:
            self.chosen = trial
            self.asq = trial_asq
            self.decisions[best.vehicle] = VehicleDecision(
                best.vehicle, True, trial[best.vehicle], self.sets[best.vehicle].original,
                best.quote.amount, best.v_before, best.v_after,
            )
        else:
            self.cancelled.add(best.vehicle)

        record = StepRecord(
            len(self.steps) + 1, (best.vehicle, best.candidate), committed, proposals,
            skipped, self.ledger.remaining, self.asq.asq,
        )
        logger.debug(
            "step %d: vehicle %s -> k=%s V %.4g -> %.4g a_c=%.2f %s",
            record.step, best.vehicle, best.candidate, best.v_before, best.v_after,
            best.quote.amount, "committed" if committed else "cancelled",
        )
        self.steps.append(record)
        return record

    def plan(self):
        while self.step() is not None:
            pass
        return DispatchPlan(
            self.kind, dict(self.decisions), dict(self.factors), self.params.budget,
            self.asq, list(self.steps), self.ledger, self.asq_config,
        )


def no_actuation_plan(candidate_sets, weights, params, asq_config=None):
    """Every vehicle keeps its original trajectory"""
    sets = sorted(candidate_sets, key=lambda cs: cs.vehicle)
    if not sets:
        raise ConfigurationError("cannot dispatch an empty fleet")
    factors = fleet_factors([cs.vehicle for cs in sets], weights, uniform=False)
    decisions = {cs.vehicle: VehicleDecision(cs.vehicle, False, cs.original, cs.original) for cs in sets}
    grid = sets[0].original.grid
    pairs = [(cs.original, factors[cs.vehicle]) for cs in sets]
    P = density(pairs, len(sets), grid.horizon, grid)
    asq_config = asq_config or AsqConfig()
    breakdown = asq_from_density(P, len(sets), grid.horizon, asq_config)
    return DispatchPlan(
        DispatcherKind.NO_ACTUATION, decisions, factors, params.budget, breakdown,
        ledger=BudgetLedger(params.budget), asq_config=asq_config,
    )


def plan(candidate_sets, state, demand, params, asq_config=None, kind=DispatcherKind.QUIDS):
    """
    Plan one actuation window.

    Args:
        candidate_sets (iterable): CandidateSet per vehicle
        state (ReliabilityState or dict): Reliability weights
        demand (DemandField): Request probabilities
        params (IncentiveParams): Pricing and budget
        asq_config (AsqConfig, optional): ASQ parameters
        kind (DispatcherKind): Dispatcher variant

    Returns:
        DispatchPlan: The chosen trajectories and incentives
    """
    kind = DispatcherKind.parse(kind)
    weights = getattr(state, "weights", state)
    if kind is DispatcherKind.NO_ACTUATION:
        return no_actuation_plan(candidate_sets, weights, params, asq_config)
    return BeliefAwareDispatcher(candidate_sets, weights, demand, params, asq_config, kind).plan()


def baseline_plan(kind, candidate_sets, state, demand, params, asq_config=None):
    """
    Ablation and baseline dispatchers: NA, QUIDS-NoRe and QUIDS-NoIn.
    """
    kind = DispatcherKind.parse(kind)
    if kind is DispatcherKind.QUIDS:
        raise ConfigurationError("baseline_plan covers na, nore and noin", "dispatcher")
    return plan(candidate_sets, state, demand, params, asq_config, kind)


def apply_acceptance(dispatch_plan, model):
    """
    Let each dispatched driver accept with probability `model.rate`.

    Declined vehicles revert to their original trajectory and their incentive
    is refunded immediately.

    Args:
        dispatch_plan (DispatchPlan): Planned dispatch
        model (AcceptanceModel): Acceptance rate and seed

    Returns:
        DispatchPlan: The realized plan
    """
    rng = np.random.default_rng(model.seed)
    decisions = dict(dispatch_plan.decisions)
    ledger = dispatch_plan.ledger.copy() if dispatch_plan.ledger else BudgetLedger(dispatch_plan.budget)

    declined = 0
    for c in sorted(decisions):
        if not decisions[c].dispatched:
            continue
        if rng.random() >= model.rate:
            decisions[c] = decisions[c].reverted()
            ledger.refund(c)
            declined += 1

    if not declined:
        return replace(dispatch_plan, decisions=decisions, ledger=ledger)

    trajectories = [decisions[c].trajectory for c in sorted(decisions)]
    grid = trajectories[0].grid
    pairs = [(traj, dispatch_plan.factors[traj.vehicle]) for traj in trajectories]
    P = density(pairs, len(pairs), grid.horizon, grid)
    breakdown = asq_from_density(P, len(pairs), grid.horizon, dispatch_plan.asq_config or AsqConfig())
    logger.debug("%d of %d dispatched drivers declined", declined, dispatch_plan.dispatched_count)
    return replace(dispatch_plan, decisions=decisions, asq=breakdown, ledger=ledger)
