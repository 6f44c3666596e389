import math

import numpy as np
import pytest

from errors import ConfigurationError, EvaluationError
from gridworld import GridSpec
from metrics import (
    AsqConfig, asq, asq_value, coverage_count, error_reduction, max_error_reduction,
    r_rmse, reliability_factors, s_mae, spatial_entropy, spearman,
)


def test_entropy_of_point_mass_is_zero():
    P = np.zeros((3, 3, 1))
    P[0, 0, 0] = 1.0
    assert spatial_entropy(P) == 0.0


def test_entropy_two_point_uniform():
    P = np.array([0.5, 0.5, 0.0])
    assert spatial_entropy(P) == pytest.approx(math.log(2), abs=1e-12)


def test_entropy_even_coverage():
    C, T = 4, 5
    P = np.full(C * T, 1.0 / (C * T))
    assert spatial_entropy(P) == pytest.approx(math.log(20), abs=1e-12)


def test_entropy_normalized_option():
    P = np.array([0.25, 0.25, 0.0])
    assert spatial_entropy(P, normalized=True) == pytest.approx(math.log(2), abs=1e-12)


def test_coverage_of_empty_field():
    assert coverage_count(np.zeros(10), 2, 5, "strict") == 0
    assert coverage_count(np.zeros(10), 2, 5, "non-strict") == 0


def test_coverage_above_threshold_counts_in_both_modes():
    C, T = 2, 5
    P = np.zeros(10)
    P[3] = 2.0 / (C * T)
    assert coverage_count(P, C, T, "strict") == 1
    assert coverage_count(P, C, T, "non-strict") == 1


def test_coverage_boundary_depends_on_mode():
    C, T = 4, 5
    P = np.full(C * T, 1.0 / (C * T))
    assert coverage_count(P, C, T, "strict") == 0
    assert coverage_count(P, C, T, "non-strict") == C * T


def test_coverage_rejects_unknown_mode():
    with pytest.raises(ConfigurationError):
        coverage_count(np.zeros(3), 1, 1, "loose")


def test_asq_beta_zero_is_entropy():
    assert asq_value(1.7, 9, 0.0) == 1.7


def test_asq_beta_one_with_single_covered_cell():
    assert asq_value(3.0, 1, 1.0) == 0.0


def test_asq_substitution():
    assert asq_value(2.0, math.exp(2), 0.5) == pytest.approx(2.0, abs=1e-12)


def test_asq_guards_zero_coverage():
    assert asq_value(1.0, 0, 0.5) == pytest.approx(0.5)


def test_asq_of_fleet(make_traj):
    grid = GridSpec(4, 4, 2)
    a = make_traj(1, [(1, 1), (1, 2)], grid)
    b = make_traj(2, [(3, 3), (3, 4)], grid)
    breakdown = asq([(a, 1.0), (b, 1.0)], AsqConfig(beta=0.5))
    # four cells at P = 1/4
    assert breakdown.entropy == pytest.approx(math.log(4))
    assert breakdown.coverage_q == 4
    assert breakdown.asq == pytest.approx(math.log(4))


def test_asq_config_validation():
    with pytest.raises(ConfigurationError, match="asq.beta"):
        AsqConfig(beta=1.5)
    with pytest.raises(ConfigurationError, match="asq.coverage_mode"):
        AsqConfig(coverage_mode="sometimes")


def test_reliability_factors_average_to_one():
    factors = reliability_factors({1: 2.0, 2: 1.0, 3: 3.0})
    assert factors == pytest.approx({1: 1.0, 2: 0.5, 3: 1.5})


def test_reliability_factors_fall_back_to_uniform():
    assert reliability_factors({1: 0.0, 2: 0.0}) == {1: 1.0, 2: 1.0}


def test_rmse_perfect_reconstruction():
    truth = np.arange(6.0).reshape(2, 3)
    assert r_rmse(truth, truth, np.ones_like(truth, dtype=bool)) == 0.0


def test_rmse_constant_offset():
    truth = np.arange(6.0).reshape(2, 3)
    assert r_rmse(truth + 3, truth, np.ones_like(truth, dtype=bool)) == pytest.approx(3.0)


def test_rmse_hand_value():
    assert r_rmse([0.0, 4.0], [0.0, 0.0], [True, True]) == pytest.approx(math.sqrt(8), abs=1e-12)


def test_rmse_ignores_masked_cells():
    assert r_rmse([1.0, 100.0], [1.0, 0.0], [True, False]) == 0.0


def test_rmse_empty_mask():
    with pytest.raises(EvaluationError):
        r_rmse([1.0], [1.0], [False])


def test_rmse_shape_mismatch():
    with pytest.raises(EvaluationError):
        r_rmse([1.0, 2.0], [1.0], [True])


def test_smae_perfect_readings():
    assert s_mae([1.0, 2.0], [1.0, 2.0]) == 0.0


def test_smae_symmetric_residuals():
    assert s_mae([1.0, -1.0], [0.0, 0.0]) == 1.0


def test_smae_hand_value():
    assert s_mae([2.0, 4.0, 6.0, np.nan], [0.0, 0.0, 0.0, 5.0]) == pytest.approx(4.0)


def test_error_reduction_values():
    assert error_reduction(10.0, 10.0) == 0.0
    assert error_reduction(5.0, 10.0) == pytest.approx(50.0)
    assert error_reduction(6.45, 26.24) == pytest.approx(75.4, abs=0.05)


def test_error_reduction_needs_positive_baseline():
    with pytest.raises(EvaluationError):
        error_reduction(1.0, 0.0)


def test_max_error_reduction_over_algorithms():
    best = max_error_reduction({'linear': 8.0, 'kernel': 4.0}, {'linear': 10.0, 'kernel': 10.0})
    assert best == pytest.approx(60.0)


def test_spearman_anti_monotone():
    assert spearman([1, 2, 3, 4], [8, 6, 4, 1]) == pytest.approx(-1.0)


def test_spearman_constant_column_is_undefined():
    assert math.isnan(spearman([1, 1, 1], [1, 2, 3]))
