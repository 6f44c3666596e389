#!/usr/bin/env python3
"""
QUIDS - quality-informed vehicle dispatching simulator
Main entry point for the command line
"""

import argparse
import json
import logging
import os
import sys

from dotenv import load_dotenv

from config import LOG_LEVEL_ENV, ScenarioConfig, apply_seed_override, load_config, save_config
from dispatch import DispatcherKind
from errors import ConfigurationError, TrajectoryParseError, TrajectoryValidationError
from experiments import correlate, load_sweep_spec, sweep
from gridworld import occupancy_counts, write_trajectory_csv
from incentive import write_demand_csv
from scenario import DEMAND_STREAM, build_scenario, generate_demand, stream_seed, write_ground_truth_csv
from simulation import run, self_check
from truth_discovery import InferenceConfig, infer, read_readings_csv, write_inference_json
from validator import validate_config_file, validate_readings_file, validate_trajectory_file

load_dotenv()

logger = logging.getLogger("quids")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_SELF_CHECK = 4


def configure_logging(level=None):
    level = (level or os.environ.get(LOG_LEVEL_ENV) or "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load(args):
    config = load_config(args.config) if args.config else apply_seed_override(ScenarioConfig())
    if getattr(args, "seed", None) is not None:
        config = apply_seed_override(config, args.seed)
    return config


def _emit(payload):
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_gen_scenario(args):
    config = _load(args)
    scenario = build_scenario(config)
    os.makedirs(args.out, exist_ok=True)

    save_config(config, os.path.join(args.out, "config.yaml"))
    write_trajectory_csv(
        os.path.join(args.out, "trajectories.csv"),
        [traj for cs in scenario.fleet for traj in cs.candidates],
    )
    write_ground_truth_csv(os.path.join(args.out, "ground_truth.csv"), scenario.truth)
    window_grid = scenario.window_grid
    idle = occupancy_counts([cs.original for cs in scenario.fleet], window_grid)
    demand = generate_demand(window_grid, config.demand, stream_seed(config.seed, DEMAND_STREAM, 0), idle)
    write_demand_csv(os.path.join(args.out, "demand.csv"), demand)

    _emit({'out': args.out, 'seed': config.seed, 'vehicles': len(scenario.fleet),
           'excluded': sorted(list(cell) for cell in scenario.grid.excluded)})
    return EXIT_OK


def cmd_run(args):
    config = _load(args)
    kind = DispatcherKind.parse(args.dispatcher)
    if args.self_check:
        record, violations = self_check(config, kind)
    else:
        record, violations = run(config, kind), []

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, f"{record.run_id}.json"), "w", encoding="utf-8") as handle:
        json.dump(record.to_dict(), handle, indent=2, sort_keys=True)
    _emit(record.to_dict())

    if violations:
        for violation in violations:
            logger.error("self-check: %s", violation)
        return EXIT_SELF_CHECK
    return EXIT_OK


def cmd_sweep(args):
    spec, base_config = load_sweep_spec(args.spec)
    frame = sweep(spec, base_config, args.out, jobs=args.jobs, use_cache=not args.no_cache)
    failures = int((frame['error'] != '').sum())
    _emit({
        'sweep': spec.name,
        'runs': len(frame),
        'failures': failures,
        'csv': os.path.join(args.out, spec.name, "results.csv"),
    })
    return EXIT_OK


def cmd_truthdisc(args):
    readings = read_readings_csv(args.readings)
    result = infer(readings, InferenceConfig(args.error_bound, args.max_iterations))
    if args.out:
        write_inference_json(args.out, result)
    _emit(result.to_dict())
    return EXIT_OK


def cmd_correlate(args):
    _emit(correlate(args.table, args.min_runs))
    return EXIT_OK


def cmd_validate(args):
    reports = {}
    if args.config:
        reports['config'] = validate_config_file(args.config)
    if args.trajectories:
        reports['trajectories'] = validate_trajectory_file(args.trajectories, args.config)
    if args.readings:
        reports['readings'] = validate_readings_file(args.readings)
    if not reports:
        raise ConfigurationError("nothing to validate; pass --config, --trajectories or --readings")
    _emit(reports)
    return EXIT_OK if all(r['valid'] for r in reports.values()) else EXIT_CONFIG


def build_parser():
    parser = argparse.ArgumentParser(prog="quids", description="Quality-informed vehicle dispatching simulator")
    parser.add_argument("--log-level", default=None, help=f"Logging level (default ${LOG_LEVEL_ENV} or WARNING)")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-scenario", help="Write a scenario's config, fleet, ground truth and demand")
    gen.add_argument("--config", help="Scenario YAML (defaults when omitted)")
    gen.add_argument("--seed", type=int, help="Override the scenario seed")
    gen.add_argument("--out", default="scenario", help="Output directory")
    gen.set_defaults(handler=cmd_gen_scenario)

    single = commands.add_parser("run", help="Run one scenario under one dispatcher")
    single.add_argument("--config", help="Scenario YAML (defaults when omitted)")
    single.add_argument("--dispatcher", default="quids", choices=[k.value for k in DispatcherKind])
    single.add_argument("--seed", type=int, help="Override the scenario seed")
    single.add_argument("--out", default="results", help="Directory for the run record")
    single.add_argument("--self-check", action="store_true", help="Verify no-regress, budget safety and determinism")
    single.set_defaults(handler=cmd_run)

    sweeper = commands.add_parser("sweep", help="Run a parameter sweep")
    sweeper.add_argument("spec", help="Sweep spec YAML")
    sweeper.add_argument("--out", default="results", help="Results root")
    sweeper.add_argument("--jobs", type=int, default=1, help="Worker processes")
    sweeper.add_argument("--no-cache", action="store_true", help="Ignore cached runs")
    sweeper.set_defaults(handler=cmd_sweep)

    truth = commands.add_parser("truthdisc", help="Standalone truth discovery on a readings CSV")
    truth.add_argument("readings", help="sensor_id,t,x,y,value CSV")
    truth.add_argument("--out", help="Write the inference JSON here")
    truth.add_argument("--error-bound", type=float, default=1e-6)
    truth.add_argument("--max-iterations", type=int, default=100)
    truth.set_defaults(handler=cmd_truthdisc)

    corr = commands.add_parser("correlate", help="Spearman correlation of ASQ and R-RMSE")
    corr.add_argument("table", help="results.csv of a sweep")
    corr.add_argument("--min-runs", type=int, default=10)
    corr.set_defaults(handler=cmd_correlate)

    lint = commands.add_parser("validate", help="Lint config, trajectory or readings files")
    lint.add_argument("--config", help="Scenario YAML")
    lint.add_argument("--trajectories", help="Trajectory CSV, checked against --config's grid")
    lint.add_argument("--readings", help="Readings CSV")
    lint.set_defaults(handler=cmd_validate)

    return parser


def main(argv=None):
    """
    Main entry point for the simulator

    Returns:
        int: Process exit code
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except ConfigurationError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except (TrajectoryParseError, TrajectoryValidationError) as e:
        logger.error("invalid input: %s", e)
        return EXIT_CONFIG
    except Exception as e:
        logger.error("run failed: %s", e, exc_info=logger.isEnabledFor(logging.DEBUG))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
