# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..agents.courier_model import DeliveryTask, TaskState
from ..logger import logger
from ..monitoring.stream_monitor import CourierMonitor, GpsEvent
from ..prediction.delay_predictor import TrainingBuffer, build_features, train_on_outcome
from ..prediction.evaluation import PrequentialMetrics
from ..prediction.hoeffding_tree import FeatureVector, HoeffdingTree, Label
from ..simulation.config import SimConfig, Strategy
from ..simulation.reporting import SimulationResult, write_results
from ..simulation.simulator import Simulator
from ..utils.ingest import (
    TaskRecord,
    TraceFormatError,
    Trip,
    parse_tasks,
    parse_traces,
    randomize_starts,
    synth_traces,
    write_tasks,
    write_traces,
)
from ..utils.rng import RandomStreams

__all__ = [
    "RunMode",
    "ExperimentSpec",
    "SYNTHETIC",
    "MIN_DEADLINE_S",
    "MAX_DEADLINE_S",
    "run_predict_eval",
    "run_simulation",
    "compare_strategies",
]

SYNTHETIC = "synthetic"
MIN_DEADLINE_S = 60.0
MAX_DEADLINE_S = 1800.0


class RunMode(str, Enum):
    """Experiments of the command line"""

    PREDICT_EVAL = "predict_eval"
    SIMULATE = "simulate"
    COMPARE = "compare"


@dataclass(frozen=True)
class ExperimentSpec:
    """
    What to run and where to write the results.

    Args:
        mode: RunMode: The experiment
        scenario: str: "1", "2", "3" or "custom"
        overrides: dict[str, Any]: Values of further `SimConfig` fields
        strategy: Strategy: Transfer strategy of a single simulation
        seed: int: Root seed
        seeds: tuple[int, ...]: Seeds of a strategy comparison, `(seed,)` if empty
        traces: str: Path of a trace file or "synthetic"
        tasks: str | None: Path of a task file to replay
        out: str: Output directory
        trips: int: Number of synthetic trips of the delay-prediction experiment
        workers: int: Parallel processes of a strategy comparison
        dump_traces: bool: Also write the traces and tasks that were used
    """

    mode: RunMode = RunMode.SIMULATE
    scenario: str = "1"
    overrides: dict[str, Any] = field(default_factory=dict)
    strategy: Strategy = Strategy.S_BEST
    seed: int = 42
    seeds: tuple[int, ...] = ()
    traces: str = SYNTHETIC
    tasks: str | None = None
    out: str = "results"
    trips: int = 10_000
    workers: int = 1
    dump_traces: bool = False

    def config(self, seed: int | None = None, strategy: Strategy | None = None) -> SimConfig:
        """Simulation parameters of the scenario with the overrides applied"""
        values = dict(self.overrides)
        values["seed"] = self.seed if seed is None else seed
        values["strategy"] = self.strategy if strategy is None else strategy
        if self.scenario == "custom":
            return SimConfig(**values)
        return SimConfig.for_scenario(int(self.scenario), **values)


def _load_trips(spec: ExperimentSpec) -> list[Trip] | None:
    if spec.traces == SYNTHETIC:
        return None
    trips = parse_traces(spec.traces)
    if not trips:
        logger.error(f"No trips in {spec.traces}")
        raise TraceFormatError(f"The trace file {spec.traces} contains no trips")
    return trips


def _trip_vectors(events: list[GpsEvent], task: DeliveryTask) -> list[FeatureVector]:
    monitor = CourierMonitor(events[0].courier_id)
    vectors = []
    # the final sample marks the completion and is not an in-progress observation
    for event in events[:-1]:
        sv, _ = monitor.observe(event)
        vectors.append(build_features(sv, task, event.timestamp))
    return vectors


def run_predict_eval(spec: ExperimentSpec) -> pd.DataFrame:
    """
    Delay-prediction experiment: random deadlines on trips, evaluated test-then-train in completion order.

    Each trip gets a deadline uniformly drawn between 1 and 30 minutes after its start. The tree
    predicts the outcome from the last vector before completion and then learns one random vector
    of the trip. Trips with fewer than two samples are skipped.

    Args:
        spec: ExperimentSpec: The experiment

    Returns:
        pd.DataFrame: Cumulative accuracy, precision and recall after every trip, also written to prequential.csv
    """
    streams = RandomStreams(spec.seed)
    config = spec.config()
    trips = _load_trips(spec)
    if trips is None:
        trips = synth_traces(spec.trips, config.trace_config(), streams.traces)
    if not trips:
        raise TraceFormatError("Empty trace set")

    events = randomize_starts(trips, streams.traces)
    by_trip: dict[str, list[GpsEvent]] = {}
    for event in events:
        by_trip.setdefault(event.courier_id, []).append(event)

    deadlines = {trip.trip_id: float(streams.deadlines.uniform(MIN_DEADLINE_S, MAX_DEADLINE_S)) for trip in trips}
    order = sorted(
        (tid for tid, evs in by_trip.items() if len(evs) >= 2), key=lambda tid: (by_trip[tid][-1].timestamp, tid)
    )
    skipped = len(by_trip) - len(order)
    if skipped:
        logger.warning(f"Skipped {skipped} trips with a single sample")

    tree = HoeffdingTree()
    buffer = TrainingBuffer()
    metrics = PrequentialMetrics()
    rows = []
    for index, trip_id in enumerate(tqdm(order, desc="Prequential evaluation", disable=len(order) < 1000), start=1):
        trip_events = by_trip[trip_id]
        start, end = trip_events[0], trip_events[-1]
        task = DeliveryTask(
            id=trip_id,
            origin=start.location,
            destination=end.location,
            deadline=start.timestamp + deadlines[trip_id],
            reward=0.0,
            penalty=0.0,
            created_at=start.timestamp,
            state=TaskState.PICKED_UP,
            holder=trip_id,
        )
        vectors = _trip_vectors(trip_events, task)
        actual = Label.DELAY if end.timestamp >= task.deadline else Label.NO_DELAY
        metrics.update(tree.predict(vectors[-1]), actual)
        for fv in vectors:
            buffer.add(trip_id, fv)
        train_on_outcome(tree, buffer, trip_id, actual, streams.training)
        rows.append({"trip_index": index, **metrics.as_row()})

    frame = pd.DataFrame(rows, columns=["trip_index", "accuracy", "precision", "recall"])
    os.makedirs(spec.out, exist_ok=True)
    frame.to_csv(os.path.join(spec.out, "prequential.csv"), index=False)
    with open(os.path.join(spec.out, "model.txt"), "w", encoding="utf-8") as f:
        f.write(tree.describe() + "\n")
    logger.info(
        f"Prequential evaluation over {len(rows)} trips: accuracy {metrics.accuracy}, "
        f"precision {metrics.precision}, recall {metrics.recall}"
    )
    return frame


def _simulate(config: SimConfig, traces: str, tasks: str | None, out: str, dump: bool) -> SimulationResult:
    trips = None if traces == SYNTHETIC else parse_traces(traces)
    if trips is not None and not trips:
        raise TraceFormatError(f"The trace file {traces} contains no trips")
    records = parse_tasks(tasks) if tasks else None
    simulator = Simulator(config, trips=trips, task_records=records)
    result = simulator.run(progress=False)
    write_results(result, out)
    if dump:
        write_traces(simulator.trips, os.path.join(out, "traces.csv"))
        write_tasks(
            [TaskRecord(t.id, t.created_at, t.origin, t.destination) for t in simulator.world.tasks.values()],
            os.path.join(out, "tasks.csv"),
        )
    return result


def run_simulation(spec: ExperimentSpec) -> SimulationResult:
    """
    Run one simulation of the scenario and write results.csv, summary.txt, transfers.csv and model.txt.

    Args:
        spec: ExperimentSpec: The experiment

    Returns:
        SimulationResult: The finished run
    """
    config = spec.config()
    logger.info(f"Simulating scenario {spec.scenario} with {config.strategy.value}, seed {config.seed}")
    return _simulate(config, spec.traces, spec.tasks, spec.out, spec.dump_traces)


def _run_arm(config: SimConfig, traces: str, tasks: str | None, out: str) -> dict[str, Any]:
    result = _simulate(config, traces, tasks, out, dump=False)
    return {
        "strategy": config.strategy.value,
        "seed": config.seed,
        "final_delay_fraction": result.final_delay_fraction,
        "transfers_attempted": result.transfer_log.attempted,
        "transfers_succeeded": result.transfer_log.succeeded,
        "expired": result.expired,
    }


def compare_strategies(spec: ExperimentSpec, seeds: list[int] | None = None) -> pd.DataFrame:
    """
    Run NOT, S_BEST and F_BEST for every seed and aggregate the final delay fractions.

    Arms of the same seed share their trace and task random streams.

    Args:
        spec: ExperimentSpec: The experiment
        seeds: list[int] | None: The seeds, `spec.seeds` if None

    Returns:
        pd.DataFrame: One row per strategy, also written to comparison.csv next to runs.csv
    """
    seeds = list(seeds or spec.seeds or (spec.seed,))
    if not seeds:
        raise ValueError("At least one seed is needed")
    arms = [
        (spec.config(seed=seed, strategy=strategy), os.path.join(spec.out, f"{strategy.value}_seed{seed}"))
        for seed in seeds
        for strategy in Strategy
    ]

    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            futures = [pool.submit(_run_arm, cfg, spec.traces, spec.tasks, out) for cfg, out in arms]
            runs = [f.result() for f in tqdm(futures, desc="Simulation runs")]
    else:
        runs = [_run_arm(cfg, spec.traces, spec.tasks, out) for cfg, out in tqdm(arms, desc="Simulation runs")]

    runs_frame = pd.DataFrame(runs)
    grouped = runs_frame.groupby("strategy", sort=False)
    comparison = pd.DataFrame({
        "strategy": [s.value for s in Strategy],
        "runs": [len(seeds)] * len(Strategy),
    })
    comparison["mean_delay_fraction"] = comparison["strategy"].map(grouped["final_delay_fraction"].mean())
    comparison["std_delay_fraction"] = comparison["strategy"].map(
        grouped["final_delay_fraction"].agg(lambda v: float(np.std(v)))
    )
    comparison["mean_transfers_attempted"] = comparison["strategy"].map(grouped["transfers_attempted"].mean())
    comparison["mean_transfers_succeeded"] = comparison["strategy"].map(grouped["transfers_succeeded"].mean())
    comparison["mean_expired"] = comparison["strategy"].map(grouped["expired"].mean())

    os.makedirs(spec.out, exist_ok=True)
    runs_frame.to_csv(os.path.join(spec.out, "runs.csv"), index=False)
    comparison.to_csv(os.path.join(spec.out, "comparison.csv"), index=False)
    return comparison
