"""
Parameter sweeps over seeded runs and the ASQ / R-RMSE correlation report.
"""

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import pandas as pd
import yaml

from config import SWEEP_DIMENSIONS, ScenarioConfig, config_hash, load_config, with_override
from database import ResultCache
from dispatch import DispatcherKind
from errors import ConfigurationError, EvaluationError
from metrics import spearman
from simulation import make_run_id, run

logger = logging.getLogger(__name__)

ALL_DISPATCHERS = tuple(kind.value for kind in DispatcherKind)


@dataclass(frozen=True)
class SweepSpec:
    """
    Args:
        name (str): Output sub-directory under the results root
        dimension (str): One of SWEEP_DIMENSIONS
        values (tuple): Values the dimension takes
        repetitions (int): Seeds per value
        dispatchers (tuple): Dispatcher kinds to run at every point
        seed_start (int): First seed; repetition r uses seed_start + r
    """
    name: str
    dimension: str
    values: tuple
    repetitions: int = 1
    dispatchers: tuple = ALL_DISPATCHERS
    seed_start: int = 0

    def __post_init__(self):
        if not self.name or os.sep in self.name:
            raise ConfigurationError("must be a plain directory name", "name")
        if self.dimension not in SWEEP_DIMENSIONS:
            raise ConfigurationError(f"must be one of {sorted(SWEEP_DIMENSIONS)}", "dimension")
        values = tuple(self.values or ())
        if not values:
            raise ConfigurationError("needs at least one value", "values")
        if self.repetitions < 1:
            raise ConfigurationError("must be >= 1", "repetitions")
        dispatchers = tuple(DispatcherKind.parse(d).value for d in self.dispatchers)
        if not dispatchers:
            raise ConfigurationError("needs at least one dispatcher", "dispatchers")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "dispatchers", dispatchers)

    def jobs(self, base_config):
        """
        Every (config, dispatcher, value, repetition) of the sweep.

        Returns:
            list: Job tuples, ordered by value, repetition and dispatcher
        """
        jobs = []
        for value in self.values:
            swept = with_override(base_config, self.dimension, value)
            for repetition in range(self.repetitions):
                config = replace(swept, seed=self.seed_start + repetition)
                for dispatcher in self.dispatchers:
                    jobs.append((config, dispatcher, value, repetition))
        return jobs


def load_sweep_spec(path):
    """
    Read a sweep spec YAML and the base config it points to.

    Returns:
        tuple: (SweepSpec, ScenarioConfig)
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
    except OSError as e:
        raise ConfigurationError(f"cannot read sweep spec: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigurationError(f"invalid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError("sweep spec must be a mapping")

    data = dict(data)
    base = data.pop("base_config", None)
    allowed = {"name", "dimension", "values", "repetitions", "dispatchers", "seed_start"}
    for key in data:
        if key not in allowed:
            raise ConfigurationError("unknown key", key)
    for key in ("name", "dimension"):
        if key not in data:
            raise ConfigurationError("is required", key)

    if base is None:
        base_config = ScenarioConfig()
    else:
        base_path = base if os.path.isabs(base) else os.path.join(os.path.dirname(os.path.abspath(path)), base)
        base_config = load_config(base_path, apply_env=False)
    return SweepSpec(**data), base_config


def _execute(job, out_dir):
    config, dispatcher, value, repetition = job
    kind = DispatcherKind.parse(dispatcher)
    digest = config_hash(config)
    row = {
        'run_id': make_run_id(digest, kind, config.seed),
        'config_hash': digest,
        'dispatcher': kind.value,
        'seed': config.seed,
    }
    deltas = {'sweep_value': value, 'repetition': repetition, 'error': ''}
    try:
        record = run(config, kind, deltas=deltas)
    except Exception as e:
        logger.error("run %s failed: %s", row['run_id'], e)
        row.update(deltas)
        row['error'] = f"{type(e).__name__}: {e}"
        return row

    row = record.to_dict()
    with open(os.path.join(out_dir, f"{record.run_id}.json"), "w", encoding="utf-8") as handle:
        json.dump(row, handle, indent=2, sort_keys=True)
    return row


def _fill_error_reduction(frame):
    algorithms = sorted(c[len("r_rmse_"):] for c in frame.columns if c.startswith("r_rmse_"))
    if not algorithms or 'na' not in set(frame['dispatcher']):
        return frame

    ok = frame[frame['error'] == '']
    baseline = ok[ok['dispatcher'] == 'na'].set_index(['sweep_value', 'seed'])
    for algorithm in algorithms:
        column = f"r_rmse_{algorithm}"
        reductions = []
        for _, row in frame.iterrows():
            key = (row['sweep_value'], row['seed'])
            na = baseline[column].get(key) if key in baseline.index else None
            if row['error'] or na is None or not na > 0 or pd.isna(row.get(column)):
                reductions.append(float("nan"))
            else:
                reductions.append(100.0 * (na - row[column]) / na)
        frame[f"error_reduction_{algorithm}"] = reductions
    reduction_columns = [f"error_reduction_{a}" for a in algorithms]
    frame['max_error_reduction'] = frame[reduction_columns].max(axis=1, skipna=True)
    return frame


def sweep(spec, base_config, out_root="results", jobs=1, use_cache=True):
    """
    Run every point of a sweep and merge the results.

    Failed runs are kept as rows with an `error` tag and the sweep continues.

    Args:
        spec (SweepSpec): The sweep
        base_config (ScenarioConfig): Config every delta is applied to
        out_root (str): Results root; files go to <out_root>/<spec.name>/
        jobs (int): Worker processes
        use_cache (bool): Skip runs already present in results.db

    Returns:
        pd.DataFrame: One row per run, also written to results.csv
    """
    out_dir = os.path.join(out_root, spec.name)
    os.makedirs(out_dir, exist_ok=True)
    all_jobs = spec.jobs(base_config)

    rows = {}
    pending = []
    with ResultCache(os.path.join(out_dir, "results.db")) as cache:
        for index, job in enumerate(all_jobs):
            config, dispatcher, value, repetition = job
            cached = cache.lookup(config_hash(config), dispatcher, config.seed) if use_cache else None
            if cached is not None and not cached.get('error'):
                rows[index] = cached
            else:
                pending.append((index, job))
        logger.info("sweep %s: %d runs, %d cached", spec.name, len(all_jobs), len(rows))

        indices = [index for index, _ in pending]
        work = [job for _, job in pending]
        if jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_execute, work, [out_dir] * len(work)))
        else:
            results = [_execute(job, out_dir) for job in work]

        for index, row in zip(indices, results):
            rows[index] = row
            if not row.get('error'):
                cache.store(row)

    ordered = [rows[i] for i in range(len(all_jobs))]
    for row, (_, dispatcher, value, repetition) in zip(ordered, all_jobs):
        row['sweep'] = spec.name
        row['dimension'] = spec.dimension
        row['sweep_value'] = value
        row['repetition'] = repetition
        row.setdefault('error', '')

    frame = pd.DataFrame(ordered)
    frame = frame.sort_values(['sweep_value', 'repetition', 'dispatcher'], kind="mergesort").reset_index(drop=True)
    frame = _fill_error_reduction(frame)
    frame.to_csv(os.path.join(out_dir, "results.csv"), index=False)
    failures = int((frame['error'] != '').sum())
    if failures:
        logger.warning("sweep %s: %d of %d runs failed", spec.name, failures, len(frame))
    return frame


def median_asq(frame, dispatcher="quids"):
    """
    Median ASQ per sweep value for one dispatcher.

    Returns:
        pd.Series: Indexed by sweep value, in ascending order
    """
    ok = frame[(frame['dispatcher'] == dispatcher) & (frame['error'] == '')]
    return ok.groupby('sweep_value')['asq'].median().sort_index()


def correlate(table, min_runs=10):
    """
    Spearman correlation between ASQ and R-RMSE per reconstructor.

    Args:
        table (pd.DataFrame or str): Result table or path to results.csv
        min_runs (int): Fewest usable runs accepted

    Returns:
        dict: {'runs': n, 'correlations': {algorithm: {'rho': float or None, 'defined': bool}}}

    Raises:
        EvaluationError: With fewer than `min_runs` usable runs
    """
    frame = pd.read_csv(table, keep_default_na=False, na_values=[""]) if isinstance(table, str) else table
    if 'error' in frame.columns:
        frame = frame[frame['error'].fillna('') == '']
    columns = sorted(c for c in frame.columns if c.startswith("r_rmse_"))
    if 'asq' not in frame.columns or not columns:
        raise EvaluationError("table needs an asq column and at least one r_rmse_<algorithm> column")

    report = {'runs': 0, 'correlations': {}}
    for column in columns:
        usable = frame[['asq', column]].dropna()
        if len(usable) < min_runs:
            raise EvaluationError(f"{column}: {len(usable)} usable runs, need at least {min_runs}")
        rho = spearman(usable['asq'], usable[column])
        defined = not math.isnan(rho)
        report['correlations'][column[len("r_rmse_"):]] = {'rho': rho if defined else None, 'defined': defined}
        report['runs'] = max(report['runs'], len(usable))
    return report
