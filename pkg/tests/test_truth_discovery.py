import json
import math
from collections import Counter

import numpy as np
import pytest

from config import config_from_dict
from errors import DegenerateWeightsError, TrajectoryParseError
from gridworld import CellIndex, GridSpec, Trajectory
from metrics import spearman
from scenario import READING_STREAM, SensorErrorModel, build_scenario, sample_readings, stream_seed
from truth_discovery import (
    InferenceConfig, ReliabilityState, SensorReading, TruthField, aggregate_truth, belief, beliefs,
    infer, read_readings_csv, update_bias, update_weights, write_inference_json, write_readings_csv,
)


def reading(sensor, value, x=1, y=1, t=1):
    return SensorReading(sensor, x, y, t, value)


def planted_readings(sigmas, biases, cells, seed, level=50.0):
    rng = np.random.default_rng(seed)
    readings = []
    for sensor, (sigma, bias) in enumerate(zip(sigmas, biases), start=1):
        noise = rng.normal(0.0, sigma, size=cells)
        for i in range(cells):
            x, t = i % 20 + 1, i // 20 + 1
            readings.append(SensorReading(sensor, x, 1, t, level + bias + noise[i]))
    return readings


def test_single_sensor_aggregate():
    truth = aggregate_truth([reading(1, 7.0)], ReliabilityState({1: 0.4}, {1: 0.0}))
    assert truth[(1, 1, 1)] == 7.0


def test_unweighted_mean():
    state = ReliabilityState({1: 1.0, 2: 1.0}, {1: 0.0, 2: 0.0})
    truth = aggregate_truth([reading(1, 4.0), reading(2, 6.0)], state)
    assert truth[(1, 1, 1)] == pytest.approx(5.0)


def test_weighted_bias_corrected_mean():
    state = ReliabilityState({1: 3.0, 2: 1.0}, {1: 1.0, 2: -1.0})
    truth = aggregate_truth([reading(1, 5.0), reading(2, 9.0)], state)
    assert truth[(1, 1, 1)] == pytest.approx(5.5, abs=1e-12)


def test_zero_weights_are_degenerate():
    state = ReliabilityState({1: 0.0, 2: 0.0}, {1: 0.0, 2: 0.0})
    with pytest.raises(DegenerateWeightsError):
        aggregate_truth([reading(1, 5.0), reading(2, 9.0)], state)


def test_weight_update_hand_value():
    truth = TruthField({(1, 1, 1): 0.0})
    weights = update_weights([reading(1, 1.0), reading(2, math.sqrt(3.0))], truth, {1: 0.0, 2: 0.0})
    assert weights[1] == pytest.approx(-math.log(0.25), abs=1e-12)
    assert weights[2] == pytest.approx(-math.log(0.75), abs=1e-12)
    assert math.exp(-weights[1]) + math.exp(-weights[2]) == pytest.approx(1.0, abs=1e-12)


def test_equal_residuals_give_ln_c():
    truth = TruthField({(1, 1, 1): 0.0})
    readings = [reading(c, 2.0 if c % 2 else -2.0) for c in range(1, 5)]
    weights = update_weights(readings, truth, {})
    assert all(w == pytest.approx(math.log(4)) for w in weights.values())


def test_zero_residuals_give_uniform_weights():
    truth = TruthField({(1, 1, 1): 3.0})
    weights = update_weights([reading(1, 3.0), reading(2, 3.0), reading(3, 3.0)], truth, {})
    assert weights == pytest.approx({1: math.log(3), 2: math.log(3), 3: math.log(3)})


def test_perfect_sensor_gets_finite_weight():
    truth = TruthField({(1, 1, 1): 0.0})
    weights = update_weights([reading(1, 0.0), reading(2, 1.0)], truth, {})
    assert math.isfinite(weights[1])
    assert weights[1] > weights[2]


def test_bias_direct_mean_before_centering():
    truth = TruthField({(x, 1, 1): 10.0 for x in range(1, 5)})
    readings = [reading(1, 12.0, x=x) for x in range(1, 5)]
    assert update_bias(readings, truth, recenter=False) == {1: pytest.approx(2.0)}


def test_unbiased_sensors_have_zero_bias():
    truth = TruthField({(1, 1, 1): 5.0})
    assert update_bias([reading(1, 5.0), reading(2, 5.0)], truth) == {1: 0.0, 2: 0.0}


def test_bias_recentering():
    truth = TruthField({(1, 1, 1): 0.0})
    biases = update_bias([reading(1, 3.0), reading(2, 1.0)], truth)
    assert biases == {1: pytest.approx(1.0), 2: pytest.approx(-1.0)}


def test_bias_of_silent_sensor_is_carried_over():
    truth = TruthField({(1, 1, 1): 0.0})
    biases = update_bias([reading(1, 2.0)], truth, previous={2: 4.0}, recenter=False)
    assert biases == {1: pytest.approx(2.0), 2: 4.0}


def test_constraints_hold_on_randomized_suite():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        sensors = int(rng.integers(2, 6))
        cells = int(rng.integers(1, 8))
        readings = []
        for c in range(1, sensors + 1):
            for x in range(1, cells + 1):
                if rng.random() < 0.7:
                    readings.append(reading(c, float(rng.normal(50, 10)), x=x))
        if len({r.sensor for r in readings}) < 2:
            continue
        truth = TruthField({r.cell: float(rng.normal(50, 5)) for r in readings})
        weights = update_weights(readings, truth, {})
        biases = update_bias(readings, truth)
        state = ReliabilityState(weights, biases)
        assert state.weight_constraint_gap() <= 1e-9
        assert state.bias_constraint_gap() <= 1e-9


def test_inference_satisfies_constraints():
    result = infer(planted_readings([1, 4, 8], [0, 5, -5], 40, seed=5))
    assert result.state.weight_constraint_gap() <= 1e-9
    assert result.state.bias_constraint_gap() <= 1e-9
    assert result.objective_trace


def test_identical_readings():
    readings = [reading(c, 42.0, x=x) for c in (1, 2, 3) for x in (1, 2)]
    result = infer(readings)
    assert result.converged
    assert all(v == pytest.approx(42.0) for v in result.truth.values.values())
    assert result.state.biases == pytest.approx({1: 0.0, 2: 0.0, 3: 0.0})
    assert result.state.weights == pytest.approx({c: math.log(3) for c in (1, 2, 3)})


def test_planted_reliability_and_bias():
    # three co-located sensors; two would be symmetric under the weight update
    readings = planted_readings([1.0, 5.0, 2.0], [0.0, 10.0, 0.0], 400, seed=11)
    result = infer(readings)
    w = result.state.weights
    assert w[1] > w[2]
    assert w[3] > w[2]
    assert result.state.biases[2] == pytest.approx(10.0 - 10.0 / 3, abs=1.0)


def test_weight_ranking_follows_noise():
    rhos = []
    for seed in range(5):
        sigmas = [1.0, 2.5, 4.0, 6.0, 9.0]
        readings = planted_readings(sigmas, [0.0] * 5, 200, seed=seed)
        w = infer(readings).state.weights
        rhos.append(spearman([w[c] for c in range(1, 6)], [-s for s in sigmas]))
    assert np.median(rhos) >= 0.9


def test_warm_start_from_fixed_point():
    readings = planted_readings([1.0, 3.0, 6.0], [2.0, -1.0, 0.0], 60, seed=1)
    first = infer(readings, InferenceConfig(error_bound=1e-9, max_iterations=500))
    assert first.converged
    second = infer(readings, InferenceConfig(error_bound=1e-6, warm_start=first))
    assert second.iterations == 1
    for cell, value in first.truth.values.items():
        assert second.truth[cell] == pytest.approx(value, abs=1e-6)


def test_single_sensor_is_degenerate():
    result = infer([reading(7, 1.0), reading(7, 3.0, x=2)])
    assert result.degenerate
    assert result.iterations == 0
    assert result.state.weights == {7: 0.0}


def test_non_convergence_is_flagged():
    readings = planted_readings([1.0, 5.0, 9.0], [3.0, -3.0, 0.0], 40, seed=2)
    result = infer(readings, InferenceConfig(error_bound=1e-15, max_iterations=1))
    assert result.iterations == 1
    assert not result.converged


def test_belief_without_overlap(make_traj):
    grid = GridSpec(4, 4, 2)
    a = make_traj(1, [(1, 1), (1, 2)], grid)
    b = make_traj(2, [(3, 3), (3, 4)], grid)
    assert belief(1, [a, b]) == 0.0


def test_belief_total_overlap_eight(make_traj):
    grid = GridSpec(4, 4, 4)
    trajs = [make_traj(c, [(1, 1)] * 4, grid) for c in (1, 2, 3)]
    assert belief(1, trajs) == pytest.approx(math.log(8), abs=1e-12)
    assert beliefs(trajs)[1] == pytest.approx(math.log(8), abs=1e-12)


def test_belief_single_overlap_is_zero(make_traj):
    grid = GridSpec(4, 4, 2)
    a = make_traj(1, [(1, 1), (1, 2)], grid)
    b = make_traj(2, [(1, 1), (2, 1)], grid)
    assert belief(1, [a, b]) == 0.0


def test_readings_csv_round_trip(tmp_path):
    readings = [reading(1, 1.5), reading(2, -0.25, x=2, y=3, t=4)]
    path = tmp_path / "readings.csv"
    write_readings_csv(path, readings)
    assert read_readings_csv(path) == readings


def test_malformed_reading_names_line(tmp_path):
    path = tmp_path / "readings.csv"
    path.write_text("sensor_id,t,x,y,value\n1,1,1,1,2.0\n2,1,one,1,3.0\n", encoding="utf-8")
    with pytest.raises(TrajectoryParseError, match="line 3"):
        read_readings_csv(path)


def test_inference_json(tmp_path):
    result = infer(planted_readings([1.0, 2.0], [0.0, 0.0], 20, seed=0))
    path = tmp_path / "inference.json"
    write_inference_json(path, result)
    data = json.loads(path.read_text(encoding="utf-8"))
    assert set(data) == {'w', 'b', 'iterations', 'converged', 'degenerate', 'objective_trace'}
    assert set(data['w']) == {"1", "2"}


def convoy_scenario(seed):
    config = config_from_dict({
        "seed": seed,
        "grid": {"width": 6, "height": 4, "excluded_count": 0},
        "windows": {"period": 100, "warmup": 3, "dispatch": 1},
        "fleet": {"size": 5, "candidates": 1},
        "demand": {"hotspots": [[4, 3]], "radius": 2.0},
    }, apply_env=False)
    scenario = build_scenario(config)
    sensors = sorted(scenario.error_model.sigmas)
    # well-separated noise levels, assigned to sensors in a seed-dependent order
    ladder = np.random.default_rng(seed).permutation([0.5, 1.0, 2.0, 3.0, 4.0])
    error_model = SensorErrorModel(dict(zip(sensors, map(float, ladder))), scenario.error_model.biases)
    # every vehicle drives the same route, so each reading is shared with the whole fleet
    route = tuple(CellIndex(1 + (t // 50) % 2, 1, t) for t in range(1, config.horizon + 1))
    convoy = [Trajectory(c, 0, route, scenario.grid) for c in sensors]
    readings = sample_readings(scenario.truth, convoy, error_model, stream_seed(seed, READING_STREAM))
    return error_model, readings


def test_planted_reliability_recovered_from_scenario_readings():
    rhos = []
    for seed in range(20):
        error_model, readings = convoy_scenario(seed)
        result = infer(readings, InferenceConfig(error_bound=1e-6, max_iterations=500))
        sensors = sorted(error_model.sigmas)
        w = result.state.weights
        rhos.append(spearman([w[c] for c in sensors], [-error_model.sigmas[c] for c in sensors]))

        shared = Counter(r.cell for r in readings)
        overlapping = Counter(r.sensor for r in readings if shared[r.cell] > 1)
        planted = error_model.recentered_biases()
        for c in sensors:
            if overlapping[c] >= 50:
                assert abs(result.state.biases[c] - planted[c]) <= 1.0, (seed, c)
    assert np.median(rhos) >= 0.9
