# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import os
from dataclasses import asdict, dataclass, field, replace

import pandas as pd

from ..logger import logger
from ..prediction.evaluation import PrequentialMetrics
from ..provider.negotiation import TransferLog
from .config import SimConfig

__all__ = ["TimelinePoint", "DelayTimeline", "Ledger", "SimulationResult", "write_results", "RESULT_FILES"]

RESULT_FILES = {
    "results": "results.csv",
    "summary": "summary.txt",
    "transfers": "transfers.csv",
    "model": "model.txt",
}


@dataclass(frozen=True)
class TimelinePoint:
    """A completed delivery and the running delay fraction after it"""

    completion_clock: float
    task_id: str
    courier_id: str
    delayed: bool
    cumulative_delay_fraction: float
    transfers_so_far: int


@dataclass
class DelayTimeline:
    """Running share of late deliveries, one point per completed task in completion order"""

    points: list[TimelinePoint] = field(default_factory=list)
    delayed: int = 0

    def __len__(self) -> int:
        return len(self.points)

    def append(
        self, completion_clock: float, task_id: str, courier_id: str, delayed: bool, transfers_so_far: int
    ) -> TimelinePoint:
        """Insert a delivery by completion time, task id on ties, and update the fractions after it"""
        self.delayed += int(delayed)
        key = (completion_clock, task_id)
        i = len(self.points)
        # deliveries of one step come in courier order
        while i > 0 and (self.points[i - 1].completion_clock, self.points[i - 1].task_id) > key:
            i -= 1
        self.points.insert(i, TimelinePoint(completion_clock, task_id, courier_id, delayed, 0.0, transfers_so_far))
        late = self.delayed
        for j in range(len(self.points) - 1, i - 1, -1):
            point = self.points[j]
            self.points[j] = replace(point, cumulative_delay_fraction=late / (j + 1))
            late -= int(point.delayed)
        return self.points[i]

    @property
    def fractions(self) -> list[float]:
        return [p.cumulative_delay_fraction for p in self.points]

    @property
    def final_fraction(self) -> float:
        return self.points[-1].cumulative_delay_fraction if self.points else 0.0

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(p) for p in self.points], columns=list(TimelinePoint.__dataclass_fields__))
        frame["delayed"] = frame["delayed"].astype(int)
        return frame


@dataclass
class Ledger:
    """Money flows of all couriers in EUR"""

    rewards: float = 0.0
    penalties: float = 0.0
    detour_costs: float = 0.0
    bid_payments: float = 0.0
    waiting_costs: float = 0.0

    @property
    def net(self) -> float:
        # bids move money between couriers and cancel out
        return self.rewards - self.penalties - self.detour_costs - self.waiting_costs


@dataclass
class SimulationResult:
    """Everything a finished run reports"""

    config: SimConfig
    timeline: DelayTimeline
    transfer_log: TransferLog
    metrics: PrequentialMetrics
    ledger: Ledger
    spawned: int
    expired: int
    model_report: str
    model_stats: dict[str, int] = field(default_factory=dict)

    @property
    def on_time(self) -> int:
        return len(self.timeline) - self.timeline.delayed

    @property
    def late(self) -> int:
        return self.timeline.delayed

    @property
    def final_delay_fraction(self) -> float:
        return self.timeline.final_fraction

    def summary(self) -> str:
        def fmt(value: float | None) -> str:
            return "n/a" if value is None else f"{value:.4f}"

        lines = [
            f"strategy: {self.config.strategy.value}",
            f"seed: {self.config.seed}",
            f"tasks_per_hour: {self.config.tasks_per_hour:g}",
            f"incident_probability: {self.config.incident_probability:g}",
            f"final_delay_fraction: {self.final_delay_fraction:.4f}",
            f"tasks_spawned: {self.spawned}",
            f"delivered_on_time: {self.on_time}",
            f"delivered_late: {self.late}",
            f"expired_unassigned: {self.expired}",
            f"transfers_attempted: {self.transfer_log.attempted}",
            f"transfers_succeeded: {self.transfer_log.succeeded}",
            f"prequential_accuracy: {fmt(self.metrics.accuracy)}",
            f"prequential_precision: {fmt(self.metrics.precision)}",
            f"prequential_recall: {fmt(self.metrics.recall)}",
            f"rewards_eur: {self.ledger.rewards:.2f}",
            f"penalties_eur: {self.ledger.penalties:.2f}",
            f"detour_costs_eur: {self.ledger.detour_costs:.2f}",
            f"bid_payments_eur: {self.ledger.bid_payments:.2f}",
            f"waiting_costs_eur: {self.ledger.waiting_costs:.2f}",
            f"net_courier_utility_eur: {self.ledger.net:.2f}",
        ]
        lines += [f"{key}: {value}" for key, value in self.model_stats.items()]
        return "\n".join(lines) + "\n"


def write_results(result: SimulationResult, out_dir: str) -> dict[str, str]:
    """
    Write the results, summary, transfer log and model report of a run.

    Args:
        result: SimulationResult: The finished run
        out_dir: str: Output directory, created if missing

    Returns:
        dict[str, str]: Path per written file kind
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {kind: os.path.join(out_dir, name) for kind, name in RESULT_FILES.items()}
    result.timeline.to_frame().to_csv(paths["results"], index=False)
    result.transfer_log.to_frame().to_csv(paths["transfers"], index=False)
    with open(paths["summary"], "w", encoding="utf-8") as f:
        f.write(result.summary())
    with open(paths["model"], "w", encoding="utf-8") as f:
        f.write(result.model_report + "\n")
    logger.info(f"Results written to {out_dir}")
    return paths
