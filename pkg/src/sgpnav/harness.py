"""Per-run output directories and batch execution."""

from __future__ import annotations

import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .metrics import TrialMetrics, summarize, write_batch_csv
from .navigator import TrialResult, run_trial
from .scenario import Scenario

log = logging.getLogger(__name__)

SCENARIO_SNAPSHOT = "scenario.yaml"
TRAJECTORY_FILE = "trajectory.csv"
METRICS_FILE = "metrics.json"
TRACE_FILE = "trace.jsonl"


@dataclass(frozen=True)
class TrialRecord:
    scenario: str
    seed: int
    metrics: Optional[TrialMetrics]
    error: Optional[str] = None


@dataclass(frozen=True)
class BatchResult:
    records: list[TrialRecord]

    def by_scenario(self) -> dict[str, list[TrialRecord]]:
        out: dict[str, list[TrialRecord]] = {}
        for r in self.records:
            out.setdefault(r.scenario, []).append(r)
        return out

    def summary(self) -> dict[str, dict]:
        out = {}
        for name, recs in self.by_scenario().items():
            s = summarize([r.metrics for r in recs if r.metrics is not None])
            s["trials"] = len(recs)
            s["errors"] = sum(r.metrics is None for r in recs)
            s["success_rate"] = sum(bool(r.metrics and r.metrics.success) for r in recs) / len(recs)
            out[name] = s
        return out


def run_dir_name(scenario: Scenario) -> str:
    return f"{scenario.name}-seed{scenario.sim.seed}"


def run_and_record(scenario: Scenario, out_dir=None, trace: bool = False) -> TrialResult:
    """Run one trial; with ``out_dir`` write the scenario snapshot, log, metrics and trace."""
    if out_dir is None:
        return run_trial(scenario)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / SCENARIO_SNAPSHOT).write_text(scenario.to_yaml())
    sink = None
    fh = None
    if trace:
        fh = open(out / TRACE_FILE, "w")

        def sink(record: dict) -> None:
            fh.write(json.dumps(record) + "\n")

    try:
        result = run_trial(scenario, trace_sink=sink)
    finally:
        if fh is not None:
            fh.close()
    result.log.write_csv(out / TRAJECTORY_FILE)
    (out / METRICS_FILE).write_text(result.metrics.to_json() + "\n")
    return result


def _trial_job(args) -> TrialRecord:
    scenario, out_dir, trace = args
    try:
        result = run_and_record(scenario, out_dir, trace)
        return TrialRecord(scenario.name, scenario.sim.seed, result.metrics)
    except Exception as exc:  # a failed trial is recorded, never fatal to the batch
        log.warning("trial %s seed %d failed: %s", scenario.name, scenario.sim.seed, exc)
        detail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        return TrialRecord(scenario.name, scenario.sim.seed, None, detail)


def batch_seeds(scenario: Scenario, repetitions: int, seeds: Optional[Sequence[int]] = None) -> list[int]:
    if seeds is not None:
        return [int(s) for s in seeds]
    return [scenario.sim.seed + k for k in range(repetitions)]


def run_batch(
    scenarios: Sequence[Scenario],
    repetitions: int = 1,
    seeds: Optional[Sequence[int]] = None,
    out_dir=None,
    trace: bool = False,
    workers: int = 1,
) -> BatchResult:
    """Run every scenario for each seed.

    Seeds default to ``scenario.sim.seed + k`` for ``k < repetitions``. With
    ``out_dir`` each trial gets its own run directory plus ``batch.csv`` and
    ``summary.json`` at the top level.
    """
    if not scenarios:
        raise ValueError("run_batch needs at least one scenario")
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    jobs = []
    for sc in scenarios:
        for seed in batch_seeds(sc, repetitions, seeds):
            run = sc.with_seed(seed)
            trial_dir = None if out_dir is None else Path(out_dir) / run_dir_name(run)
            jobs.append((run, trial_dir, trace))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_trial_job, jobs))
    else:
        records = [_trial_job(j) for j in jobs]
    result = BatchResult(records)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_batch_csv(
            out / "batch.csv",
            {name: [(r.seed, r.metrics, r.error) for r in recs] for name, recs in result.by_scenario().items()},
        )
        (out / "summary.json").write_text(json.dumps(result.summary(), indent=2) + "\n")
    return result
