"""
The run pipeline: one seeded scenario driven window by window under a dispatcher.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from config import apply_seed_override, config_hash
from dispatch import AcceptanceModel, DispatcherKind, apply_acceptance, fleet_factors, plan
from errors import EvaluationError
from gridworld import occupancy_counts
from metrics import asq
from reconstruct import ReconstructionInput, evaluate, reconstruct_all
from scenario import (
    ACCEPTANCE_STREAM, DEMAND_STREAM, FLEET_STREAM, PREDICTION_STREAM, READING_STREAM,
    build_scenario, generate_demand, inject_prediction_error, sample_readings, stream_seed, synthesize_fleet,
)
from truth_discovery import InferenceConfig, ReliabilityState, infer

logger = logging.getLogger(__name__)


@dataclass
class RunRecord:
    """
    Metrics of one (config, dispatcher, seed) run.

    `wall_time` is the only field allowed to differ between repeated runs.
    """
    run_id: str
    config_hash: str
    dispatcher: str
    seed: int
    asq: float
    entropy: float
    coverage_q: float
    r_rmse: dict
    s_mae: float
    spend: float
    dispatched: int
    windows: int
    deltas: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_dict(self):
        record = {
            'run_id': self.run_id,
            'config_hash': self.config_hash,
            'dispatcher': self.dispatcher,
            'seed': self.seed,
            'asq': self.asq,
            'entropy': self.entropy,
            'coverage_q': self.coverage_q,
            's_mae': self.s_mae,
            'spend': self.spend,
            'dispatched': self.dispatched,
            'windows': self.windows,
            'wall_time': self.wall_time,
        }
        for algorithm, value in sorted(self.r_rmse.items()):
            record[f"r_rmse_{algorithm}"] = value
        for key, value in sorted(self.deltas.items()):
            record[key] = value
        return record

    def canonical_json(self):
        """Stable serialization without wall time"""
        record = self.to_dict()
        record.pop('wall_time')
        return json.dumps(record, sort_keys=True, separators=(",", ":"))

    def is_finite(self):
        numbers = [self.asq, self.entropy, self.coverage_q, self.s_mae, self.spend, *self.r_rmse.values()]
        return all(math.isfinite(v) for v in numbers)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        r_rmse = {k[len("r_rmse_"):]: data.pop(k) for k in sorted(data) if k.startswith("r_rmse_")}
        known = {f for f in cls.__dataclass_fields__ if f not in ("r_rmse", "deltas")}
        kwargs = {k: data.pop(k) for k in list(data) if k in known}
        return cls(r_rmse=r_rmse, deltas=data, **kwargs)


def make_run_id(digest, kind, seed):
    return f"{digest[:12]}-{kind.value}-s{seed}"


class Simulation:
    """
    Main loop of a run.

    Warm-up windows move every vehicle along its original trajectory so each
    dispatcher starts from the same readings; dispatch windows then plan,
    apply acceptance and realize the chosen trajectories.
    """
    def __init__(self, config, kind=DispatcherKind.QUIDS):
        """
        Args:
            config (ScenarioConfig): Scenario with its seed
            kind (DispatcherKind or str): Dispatcher variant
        """
        self.config = config
        self.kind = DispatcherKind.parse(kind)
        self.scenario = build_scenario(config)
        self.window_grid = self.scenario.window_grid
        self.readings = []
        self.inference = None
        self.positions = None
        self.window = 0
        self.window_results = []

    @property
    def period(self):
        return self.config.windows.period

    @property
    def finished(self):
        return self.window >= self.config.windows.total

    def reset(self):
        """Reset the run to its starting state"""
        self.readings = []
        self.inference = None
        self.positions = None
        self.window = 0
        self.window_results = []

    def _candidates(self):
        if self.window == 0:
            return self.scenario.fleet
        return synthesize_fleet(
            self.config, self.window_grid,
            stream_seed(self.config.seed, FLEET_STREAM, self.window), origins=self.positions,
        )

    def _infer(self):
        if not self.readings:
            return None
        settings = self.config.inference
        inference_config = InferenceConfig(settings.error_bound, settings.max_iterations, warm_start=self.inference)
        self.inference = infer(self.readings, inference_config)
        return self.inference

    def _dispatch(self, candidate_sets):
        config = self.config
        seed = config.seed
        inference = self._infer()
        if inference is None or inference.degenerate:
            state = ReliabilityState.uniform([cs.vehicle for cs in candidate_sets])
        else:
            state = inference.state

        idle = occupancy_counts([cs.original for cs in candidate_sets], self.window_grid)
        demand = generate_demand(self.window_grid, config.demand, stream_seed(seed, DEMAND_STREAM, self.window), idle)
        predicted = inject_prediction_error(
            candidate_sets, config.prediction_error, stream_seed(seed, PREDICTION_STREAM, self.window),
        )
        params = config.incentive.params(self.period)
        planned = plan(predicted, state, demand, params, config.asq, self.kind)
        realized_plan = apply_acceptance(
            planned, AcceptanceModel(config.acceptance_rate, stream_seed(seed, ACCEPTANCE_STREAM, self.window)),
        )
        by_vehicle = {cs.vehicle: cs for cs in candidate_sets}
        realized = [
            by_vehicle[c][d.candidate] if d.dispatched else by_vehicle[c].original
            for c, d in sorted(realized_plan.decisions.items())
        ]
        return realized_plan, realized, fleet_factors(by_vehicle, state.weights)

    def run_window(self):
        """
        Advance one actuation window.

        Returns:
            dict: Result of the window with its phase, ASQ, spend and dispatch count
        """
        if self.finished:
            raise EvaluationError("run already finished")

        config = self.config
        offset = self.window * self.period
        candidate_sets = self._candidates()
        dispatching = self.window >= config.windows.warmup

        if dispatching:
            dispatch_plan, realized, factors = self._dispatch(candidate_sets)
            spend = dispatch_plan.spend
            dispatched = dispatch_plan.dispatched_count
        else:
            realized = [cs.original for cs in candidate_sets]
            factors = {traj.vehicle: 1.0 for traj in realized}
            spend, dispatched = 0.0, 0

        breakdown = asq(
            [(traj, factors[traj.vehicle]) for traj in realized], config.asq,
            vehicle_count=len(realized), horizon=self.period, grid=self.window_grid,
        )
        moved = [traj.shifted(offset, self.scenario.grid) for traj in realized]
        self.readings.extend(sample_readings(
            self.scenario.truth, moved, self.scenario.error_model,
            stream_seed(config.seed, READING_STREAM, self.window),
        ))
        self.positions = {traj.vehicle: (traj.end.x, traj.end.y) for traj in realized}

        result = {
            'window': self.window,
            'phase': 'dispatch' if dispatching else 'warmup',
            'asq': breakdown,
            'spend': spend,
            'dispatched': dispatched,
        }
        logger.info(
            "window %d (%s): ASQ %.4f spend %.2f dispatched %d",
            self.window, result['phase'], breakdown.asq, spend, dispatched,
        )
        self.window_results.append(result)
        self.window += 1
        return result

    def evaluate(self):
        """
        Final inference on every reading and reconstruction of the dispatch windows.

        Returns:
            tuple: ({algorithm: R-RMSE}, S-MAE)
        """
        final = infer(self.readings, InferenceConfig(self.config.inference.error_bound, self.config.inference.max_iterations))
        self.inference = final
        offset = self.config.windows.warmup * self.period
        grid = self.scenario.grid.window(self.config.windows.dispatch * self.period)
        truth = self.scenario.truth.values[:, :, offset:]
        inputs = ReconstructionInput.from_truth(final.truth, grid, offset)
        scores = {}
        s_mae = None
        for algorithm, field_ in reconstruct_all(inputs, self.config.reconstruction).items():
            record = evaluate(field_, truth, inputs=inputs)
            scores[algorithm] = record['r_rmse']
            s_mae = record['s_mae']
        return scores, s_mae

    def run(self, deltas=None):
        """
        Execute every window and score the run.

        Args:
            deltas (dict, optional): Sweep deltas to inline into the record

        Returns:
            RunRecord: Metrics of the run
        """
        started = time.perf_counter()
        while not self.finished:
            self.run_window()

        dispatch_windows = [r for r in self.window_results if r['phase'] == 'dispatch']
        r_rmse, s_mae = self.evaluate()
        digest = config_hash(self.config)
        record = RunRecord(
            run_id=make_run_id(digest, self.kind, self.config.seed),
            config_hash=digest,
            dispatcher=self.kind.value,
            seed=self.config.seed,
            asq=float(np.mean([r['asq'].asq for r in dispatch_windows])),
            entropy=float(np.mean([r['asq'].entropy for r in dispatch_windows])),
            coverage_q=float(np.mean([r['asq'].coverage_q for r in dispatch_windows])),
            r_rmse=r_rmse,
            s_mae=s_mae,
            spend=round(sum(r['spend'] for r in dispatch_windows), 2),
            dispatched=sum(r['dispatched'] for r in dispatch_windows),
            windows=len(self.window_results),
            deltas=dict(deltas or {}),
            wall_time=round(time.perf_counter() - started, 6),
        )
        if not record.is_finite():
            raise EvaluationError(f"run {record.run_id} produced a non-finite metric")
        return record


def run(config, kind=DispatcherKind.QUIDS, seed=None, deltas=None):
    """
    Run one scenario under one dispatcher.

    Args:
        config (ScenarioConfig): Scenario
        kind (DispatcherKind or str): Dispatcher variant
        seed (int, optional): Overrides the config seed
        deltas (dict, optional): Sweep deltas recorded with the result

    Returns:
        RunRecord: Metrics of the run
    """
    if seed is not None:
        config = apply_seed_override(config, seed)
    return Simulation(config, kind).run(deltas)


def self_check(config, kind=DispatcherKind.QUIDS):
    """
    Re-run the scenario under no actuation and check the acceptance properties
    a single run can witness.

    Returns:
        tuple: (RunRecord, list of violation messages)
    """
    kind = DispatcherKind.parse(kind)
    record = run(config, kind)
    violations = []
    budget = config.incentive.budget * config.windows.dispatch
    if round(record.spend * 100) > round(budget * 100):
        violations.append(f"spend {record.spend:.2f} exceeds budget {budget:.2f}")
    if kind is DispatcherKind.NO_ACTUATION:
        if record.spend != 0:
            violations.append("no-actuation run spent budget")
        return record, violations

    baseline = run(config, DispatcherKind.NO_ACTUATION)
    if (
        config.prediction_error == 0 and config.acceptance_rate == 1 and config.windows.dispatch == 1
        and record.asq < baseline.asq - 1e-9
    ):
        violations.append(f"ASQ {record.asq:.6f} below no-actuation {baseline.asq:.6f}")
    repeat = run(config, kind)
    if repeat.canonical_json() != record.canonical_json():
        violations.append("repeated run is not identical")
    return record, violations
