# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

from collections import defaultdict

import numpy as np

from ..agents.courier_model import DeliveryTask, TaskState
from ..logger import logger
from ..monitoring.stream_monitor import SituationVector
from ..utils.geo import Location, distance
from .hoeffding_tree import FeatureVector, HoeffdingTree, Label

__all__ = ["SAMPLE_INTERVAL_S", "TrainingBuffer", "build_features", "record_sample", "train_on_outcome"]

SAMPLE_INTERVAL_S = 60.0


def build_features(
    sv: SituationVector,
    task: DeliveryTask,
    now: float,
    pickup: Location | None = None,
) -> FeatureVector:
    """
    Feature vector of a courier, described by their latest situation vector, for a task.

    Args:
        sv: SituationVector: The courier's latest situation vector
        task: DeliveryTask: The task
        now: float: Current time in seconds
        pickup: Location | None: Where the courier still has to collect the parcel. Defaults to the task
            origin while the parcel has not been picked up and to no detour once it has.

    Returns:
        FeatureVector: Remaining distance and time together with the courier's recent speeds
    """
    if pickup is None and task.state in (TaskState.UNASSIGNED, TaskState.ASSIGNED):
        pickup = task.origin
    if pickup is None:
        remaining = distance(sv.location, task.destination)
    else:
        remaining = distance(sv.location, pickup) + distance(pickup, task.destination)
    return FeatureVector(
        remaining_distance=remaining,
        remaining_time=task.deadline - now,
        avg_speed_5min=sv.avg_speed_5min,
        max_speed_5min=sv.max_speed_5min,
    )


class TrainingBuffer:
    """Feature vectors collected per task while it is being delivered"""

    def __init__(self):
        self._vectors: dict[str, list[FeatureVector]] = defaultdict(list)

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, task_id: str) -> bool:
        return task_id in self._vectors

    def add(self, task_id: str, fv: FeatureVector) -> None:
        self._vectors[task_id].append(fv)

    def get(self, task_id: str) -> list[FeatureVector]:
        return list(self._vectors.get(task_id, []))

    def last(self, task_id: str) -> FeatureVector | None:
        vectors = self._vectors.get(task_id)
        return vectors[-1] if vectors else None

    def pop(self, task_id: str) -> list[FeatureVector]:
        return self._vectors.pop(task_id, [])


def record_sample(buffer: TrainingBuffer, task_id: str, fv: FeatureVector) -> None:
    """Append a feature vector to the task's training samples"""
    buffer.add(task_id, fv)


def train_on_outcome(
    tree: HoeffdingTree,
    buffer: TrainingBuffer,
    task_id: str,
    outcome: Label,
    rng: np.random.Generator,
) -> bool:
    """
    Train the tree with one uniformly chosen vector of the task and clear the task's samples.

    Training on a single vector keeps long deliveries from dominating the learner.

    Args:
        tree: HoeffdingTree: The delay predictor, updated in place
        buffer: TrainingBuffer: The collected samples
        task_id: str: The completed task
        outcome: Label: Its outcome
        rng: np.random.Generator: Source of the random choice

    Returns:
        bool: False if no vector was collected for the task and nothing was learned
    """
    vectors = buffer.pop(task_id)
    if not vectors:
        logger.warning(f"No feature vectors collected for task {task_id}, skipping training")
        return False
    tree.learn_one(vectors[int(rng.integers(len(vectors)))], outcome)
    return True
