import json

import numpy as np
import pytest

from errors import ConfigurationError
from gridworld import GridSpec
from incentive import (
    BudgetLedger, DemandField, IncentiveParams, IncentiveQuote, demand_probability,
    expected_requests, flat_quote, quote, write_demand_csv,
)


def offer(vehicle, amount, k=1):
    return IncentiveQuote(vehicle, k, amount, 0.0, 0.0)


@pytest.mark.parametrize("requests, idle, expected", [(3, 6, 0.5), (9, 2, 1.0), (0, 0, 0.0), (4, 0, 1.0)])
def test_demand_probability(requests, idle, expected):
    assert demand_probability(np.array([requests]), np.array([idle]))[0] == expected


def test_demand_probability_rejects_negative_counts():
    with pytest.raises(ConfigurationError):
        demand_probability(np.array([-1]), np.array([1]))


def test_demand_field_is_zero_on_excluded_cells():
    grid = GridSpec(2, 2, 1, excluded={(1, 1)})
    field = demand_probability(np.full(grid.shape, 5), np.zeros(grid.shape), grid)
    assert field.values[0, 0, 0] == 0.0
    assert field.values.sum() == 3.0


def test_demand_field_validates_range():
    grid = GridSpec(2, 2, 1)
    with pytest.raises(ConfigurationError):
        DemandField(np.full(grid.shape, 1.5), grid)


def test_expected_requests_zero_demand(grid, make_traj):
    traj = make_traj(1, [(1, 1), (1, 2), (1, 3)], grid)
    assert expected_requests(traj, DemandField.zeros(grid)) == 0.0


def test_expected_requests_full_demand(grid, make_traj):
    traj = make_traj(1, [(1, 1), (1, 2), (1, 3), (2, 3), (3, 3)], grid)
    assert expected_requests(traj, DemandField(np.ones(grid.shape), grid)) == 5.0


def test_expected_requests_sum(make_traj):
    grid = GridSpec(3, 1, 3)
    values = np.zeros(grid.shape)
    values[0, 0, 0], values[1, 0, 1], values[2, 0, 2] = 0.2, 0.5, 0.3
    traj = make_traj(1, [(1, 1), (2, 1), (3, 1)], grid)
    assert expected_requests(traj, DemandField(values, grid)) == pytest.approx(1.0, abs=1e-12)


def _quote_for_gain(gain, grid, make_traj):
    """Quote whose request gain times r_u equals 2 * gain"""
    values = np.zeros(grid.shape)
    # one request of difference, on the candidate side or the original side
    values[1 if gain >= 0 else 0, 0, 0] = 1.0
    demand = DemandField(values, grid)
    original = make_traj(1, [(1, 1)], grid)
    candidate = make_traj(1, [(2, 1)], grid, candidate=1)
    params = IncentiveParams(r_min=2, r_max=20, budget=400, horizon=10, utility_rate=2.0 * abs(gain))
    return quote(1, original, candidate, demand, params)


@pytest.mark.parametrize("gain, amount", [(0, 20.0), (3, 14.0), (100, 2.0), (-5, 20.0)])
def test_quote_clamping(gain, amount, make_traj):
    grid = GridSpec(2, 1, 1)
    assert _quote_for_gain(gain, grid, make_traj).amount == amount


def test_quote_reports_requests(grid, make_traj):
    demand = DemandField(np.full(grid.shape, 0.5), grid)
    original = make_traj(1, [(1, 1), (1, 2)], grid)
    candidate = make_traj(1, [(2, 1), (2, 2)], grid, candidate=2)
    result = quote(1, original, candidate, demand, IncentiveParams(horizon=5))
    assert (result.q_original, result.q_candidate, result.candidate) == (1.0, 1.0, 2)
    assert result.amount == 20.0


def test_utility_rate_defaults_to_rmax_over_horizon():
    assert IncentiveParams(r_max=20, horizon=10).r_u == 2.0
    assert IncentiveParams(r_max=20, horizon=10, utility_rate=0.5).r_u == 0.5


def test_flat_quote_uses_fixed_incentive(grid, make_traj):
    original = make_traj(1, [(1, 1)], grid)
    candidate = make_traj(1, [(1, 2)], grid, candidate=1)
    params = IncentiveParams(fixed_incentive=7.5)
    assert flat_quote(1, original, candidate, DemandField.zeros(grid), params).amount == 7.5
    assert flat_quote(1, original, candidate, DemandField.zeros(grid), IncentiveParams()).amount == 20.0


def test_params_validation():
    with pytest.raises(ConfigurationError, match="incentive.r_max"):
        IncentiveParams(r_min=5, r_max=4)
    with pytest.raises(ConfigurationError, match="incentive.fixed_incentive"):
        IncentiveParams(fixed_incentive=50)


def test_randomized_quotes_stay_clamped(grid, make_traj):
    rng = np.random.default_rng(0)
    params = IncentiveParams(horizon=5)
    original = make_traj(1, [(1, 1), (1, 2), (1, 3), (1, 4), (1, 5)], grid)
    candidate = make_traj(1, [(1, 1), (2, 1), (3, 1), (4, 1), (5, 1)], grid, candidate=1)
    for _ in range(10000):
        demand = DemandField(rng.random(grid.shape), grid)
        amount = quote(1, original, candidate, demand, params).amount
        assert params.r_min <= amount <= params.r_max


def test_commit_rejects_overdraft():
    ledger = BudgetLedger(400)
    for vehicle in range(1, 20):
        assert ledger.commit(offer(vehicle, 20.0))
    assert ledger.committed == 380.0
    assert not ledger.commit(offer(30, 24.0))
    assert ledger.committed == 380.0


def test_commit_boundary_and_rejection():
    ledger = BudgetLedger(400)
    for vehicle in range(1, 20):
        ledger.commit(offer(vehicle, 20.0))
    ledger.commit(offer(50, 10.0))
    assert ledger.committed == 390.0
    assert not ledger.commit(offer(51, 14.0))
    assert ledger.committed == 390.0

    ledger = BudgetLedger(400)
    for vehicle in range(1, 20):
        ledger.commit(offer(vehicle, 20.0))
    assert ledger.commit(offer(20, 20.0))
    assert ledger.committed == 400.0
    assert ledger.remaining == 0.0


def test_commit_rejects_second_incentive_for_vehicle():
    ledger = BudgetLedger(100)
    assert ledger.commit(offer(1, 5.0))
    assert not ledger.commit(offer(1, 5.0, k=2))
    assert ledger.committed == 5.0


def test_cent_arithmetic_is_exact():
    ledger = BudgetLedger(0.3)
    assert ledger.commit(offer(1, 0.1))
    assert ledger.commit(offer(2, 0.2))
    assert ledger.remaining == 0.0


def test_refund_and_audit(tmp_path):
    ledger = BudgetLedger(50)
    ledger.commit(offer(3, 12.5))
    assert ledger.refund(3) == 12.5
    assert ledger.refund(3) == 0.0
    assert ledger.committed == 0.0
    path = tmp_path / "audit.jsonl"
    ledger.write_audit(path)
    events = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    assert [e['event'] for e in events] == ['commit', 'refund']
    assert events[1]['committed_after'] == 0.0


def test_can_afford_with_pending():
    ledger = BudgetLedger(30)
    assert ledger.can_afford(20, pending=10)
    assert not ledger.can_afford(20, pending=10.01)


def test_write_demand_csv(tmp_path):
    grid = GridSpec(2, 1, 2)
    path = tmp_path / "demand.csv"
    write_demand_csv(path, DemandField(np.full(grid.shape, 0.25), grid))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "t,x,y,q"
    assert len(lines) == 5
