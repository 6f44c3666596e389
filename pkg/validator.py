"""
Linting for the files the simulator reads: scenario configs, trajectory CSVs
and reading CSVs. Every check returns a report dict instead of raising.
"""

from config import ScenarioConfig, load_config
from errors import ConfigurationError, TrajectoryParseError, TrajectoryValidationError
from scenario import build_grid, ingest_trajectory_csv
from truth_discovery import iter_readings_csv


def _report(problems):
    if not problems:
        return {'valid': True, 'reason': '', 'problems': []}
    return {'valid': False, 'reason': problems[0]['reason'], 'problems': problems}


def validate_config_file(path):
    """
    Check that a YAML scenario config loads and validates.

    Args:
        path (str): Config file

    Returns:
        dict: {'valid', 'reason', 'problems'}
    """
    try:
        load_config(path, apply_env=False)
    except ConfigurationError as e:
        return _report([{'field': e.field, 'reason': str(e)}])
    return _report([])


def validate_trajectory_file(path, config_path=None, grid=None):
    """
    Check a vehicle_id,candidate_k,t,x,y CSV against the scenario grid.

    Args:
        path (str): Trajectory CSV
        config_path (str, optional): Config whose grid the rows must lie on
        grid (GridSpec, optional): Grid to use directly

    Returns:
        dict: {'valid', 'reason', 'problems', 'vehicles'}
    """
    if grid is None:
        try:
            config = load_config(config_path, apply_env=False) if config_path else None
        except ConfigurationError as e:
            return _report([{'field': e.field, 'reason': str(e)}])
        grid = build_grid(config or ScenarioConfig())

    try:
        fleet = ingest_trajectory_csv(path, grid)
    except TrajectoryValidationError as e:
        problems = [dict(v, line=e.line) for v in e.violations] or [{'reason': str(e), 'line': e.line}]
        problems[0]['reason'] = str(e)
        return _report(problems)
    except (TrajectoryParseError, ConfigurationError) as e:
        return _report([{'reason': str(e), 'line': getattr(e, 'line', None)}])
    except OSError as e:
        return _report([{'reason': f"cannot read {path}: {e}"}])

    report = _report([])
    report['vehicles'] = len(fleet)
    return report


def validate_readings_file(path, grid=None):
    """
    Check a sensor_id,t,x,y,value CSV; with a grid, every reading must lie on an open cell.

    Returns:
        dict: {'valid', 'reason', 'problems', 'readings'}
    """
    try:
        readings = list(iter_readings_csv(path))
    except TrajectoryParseError as e:
        return _report([{'reason': str(e), 'line': e.line}])
    except OSError as e:
        return _report([{'reason': f"cannot read {path}: {e}"}])

    problems = []
    seen = set()
    for line, r in readings:
        if grid is not None and not (grid.in_bounds(r.x, r.y, r.t) and not grid.is_excluded(r.x, r.y)):
            problems.append({'line': line, 'reason': f"line {line}: reading at ({r.x}, {r.y}, {r.t}) is not on an open cell"})
        key = (r.sensor, r.t)
        if key in seen:
            problems.append({'line': line, 'reason': f"line {line}: sensor {r.sensor} has two readings at t={r.t}"})
        seen.add(key)

    report = _report(problems)
    report['readings'] = len(readings)
    return report
