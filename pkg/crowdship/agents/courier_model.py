# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..logger import logger
from ..utils.geo import Location, distance, path_length, validate_location

__all__ = [
    "TaskState",
    "DeliveryTask",
    "CourierState",
    "ArrivalEstimate",
    "InvalidTransitionError",
    "MIN_ESTIMATE_SPEED",
    "BID_MARGIN",
    "distance",
    "detour_distance",
    "delivery_cost",
    "utility",
    "estimate_arrival",
    "accepts_task",
    "waiting_cost",
    "candidate_bid",
    "deliverer_accepts_transfer",
]

# Lower bound of the speed used for time estimates, equal to the post-incident speed
MIN_ESTIMATE_SPEED = 0.3
BID_MARGIN = 0.01


class InvalidTransitionError(ValueError):
    """Raised on a task state change outside the task lifecycle"""


class TaskState(str, Enum):
    """Lifecycle of a delivery task"""

    UNASSIGNED = "unassigned"
    ASSIGNED = "assigned"
    PICKED_UP = "picked_up"
    DELIVERED_ON_TIME = "delivered_on_time"
    DELIVERED_LATE = "delivered_late"
    EXPIRED = "expired_unassigned"


_TRANSITIONS = {
    TaskState.UNASSIGNED: {TaskState.ASSIGNED, TaskState.EXPIRED},
    TaskState.ASSIGNED: {TaskState.PICKED_UP},
    TaskState.PICKED_UP: {TaskState.DELIVERED_ON_TIME, TaskState.DELIVERED_LATE},
    TaskState.DELIVERED_ON_TIME: set(),
    TaskState.DELIVERED_LATE: set(),
    TaskState.EXPIRED: set(),
}

FINAL_STATES = frozenset({TaskState.DELIVERED_ON_TIME, TaskState.DELIVERED_LATE, TaskState.EXPIRED})


@dataclass
class DeliveryTask:
    """
    A parcel to deliver from `origin` to `destination` before `deadline`.

    Args:
        id: str: Task identifier
        origin: Location: Pickup location l_p
        destination: Location: Drop-off location d_p
        deadline: float: Deadline tau_p in seconds
        reward: float: Reward r_p in EUR for an on-time delivery
        penalty: float: Penalty s_p in EUR for a late delivery
        created_at: float: Spawn time in seconds
    """

    id: str
    origin: Location
    destination: Location
    deadline: float
    reward: float
    penalty: float
    created_at: float = 0.0
    state: TaskState = TaskState.UNASSIGNED
    courier_id: str | None = None
    # courier physically carrying the parcel
    holder: str | None = None
    transfers: int = 0
    completed_at: float | None = None

    def __post_init__(self):
        if self.reward < 0 or self.penalty < 0:
            raise ValueError(f"Task {self.id}: reward and penalty must be non-negative")
        validate_location(self.origin)
        validate_location(self.destination)

    @property
    def active(self) -> bool:
        return self.state in (TaskState.ASSIGNED, TaskState.PICKED_UP)

    @property
    def finished(self) -> bool:
        return self.state in FINAL_STATES

    def transition(self, new_state: TaskState) -> None:
        if new_state not in _TRANSITIONS[self.state]:
            logger.error(f"Task {self.id}: invalid transition {self.state.value} -> {new_state.value}")
            raise InvalidTransitionError(f"Task {self.id} cannot go from {self.state.value} to {new_state.value}")
        self.state = new_state

    def reassign(self, courier_id: str) -> None:
        """Hand the task to another courier, the only way an active task changes its courier"""
        if not self.active:
            raise InvalidTransitionError(f"Task {self.id} in state {self.state.value} cannot be transferred")
        self.courier_id = courier_id
        self.transfers += 1


@dataclass
class CourierState:
    """
    An autonomous courier travelling from `location` to their personal `destination`.

    Args:
        id: str: Courier identifier
        location: Location: Current position l_i
        destination: Location: Personal destination d_i
        current_speed: float: Travel speed in m/s used for arrival estimates
        cost_per_km: float: Detour cost in EUR per km
        waiting_cost_per_min: float: Cost in EUR of waiting one minute for a handover
        error_bound: float: Bound E in seconds of the arrival-time estimation error
    """

    id: str
    location: Location
    destination: Location
    current_speed: float
    cost_per_km: float = 3.0
    waiting_cost_per_min: float = 0.5
    error_bound: float = 900.0
    assigned_task: str | None = None
    picked_up: bool = False
    incident_active: bool = False

    def __post_init__(self):
        if self.current_speed < 0:
            raise ValueError(f"Courier {self.id}: negative speed {self.current_speed}")
        if self.picked_up and self.assigned_task is None:
            raise ValueError(f"Courier {self.id}: carries a parcel without an assigned task")


@dataclass(frozen=True)
class ArrivalEstimate:
    """True arrival time t and the noisy estimate t + e a courier works with"""

    true_arrival: float
    noise: float

    @property
    def estimate(self) -> float:
        return self.true_arrival + self.noise


def _route(courier: CourierState, task: DeliveryTask, pickup: Location | None) -> list[Location]:
    # pickup None: the courier already carries the parcel
    if pickup is None:
        return [courier.location, task.destination]
    return [courier.location, pickup, task.destination]


def detour_distance(courier: CourierState, task: DeliveryTask, pickup: Location | None) -> float:
    """
    Extra meters of l_i -> pickup -> d_p -> d_i compared to the direct route l_i -> d_i.

    Args:
        courier: CourierState: The courier
        task: DeliveryTask: The task
        pickup: Location | None: Where the parcel is collected, None if the courier already carries it

    Returns:
        float: The detour in meters, never negative
    """
    with_task = path_length(*_route(courier, task, pickup), courier.destination)
    return max(0.0, with_task - distance(courier.location, courier.destination))


def delivery_cost(courier: CourierState, task: DeliveryTask, pickup: Location | None) -> float:
    """Cost C_i(p) in EUR of the detour"""
    return courier.cost_per_km * detour_distance(courier, task, pickup) / 1000.0


def utility(courier: CourierState, task: DeliveryTask, arrival: float, pickup: Location | None) -> float:
    """
    Utility of the courier for delivering `task` at time `arrival`.

    Args:
        courier: CourierState: The courier
        task: DeliveryTask: The task
        arrival: float: Delivery time in seconds, on time only strictly before the deadline
        pickup: Location | None: Where the parcel is collected, None if the courier already carries it

    Returns:
        float: r_p - C_i(p) when on time, -s_p - C_i(p) otherwise
    """
    cost = delivery_cost(courier, task, pickup)
    if arrival < task.deadline:
        return task.reward - cost
    return -task.penalty - cost


def estimate_arrival(
    courier: CourierState,
    task: DeliveryTask,
    pickup: Location | None,
    rng: np.random.Generator,
    now: float = 0.0,
) -> ArrivalEstimate:
    """
    Rough arrival estimate of the courier at the parcel destination.

    Args:
        courier: CourierState: The courier
        task: DeliveryTask: The task
        pickup: Location | None: Where the parcel is collected, None if the courier already carries it
        rng: np.random.Generator: Source of the estimation error, drawn fresh on every call
        now: float: Current time in seconds

    Returns:
        ArrivalEstimate: The true arrival and the uniform error in [-E, +E]
    """
    speed = max(courier.current_speed, MIN_ESTIMATE_SPEED)
    true_arrival = now + path_length(*_route(courier, task, pickup)) / speed
    noise = float(rng.uniform(-courier.error_bound, courier.error_bound)) if courier.error_bound > 0 else 0.0
    return ArrivalEstimate(true_arrival, noise)


def accepts_task(
    courier: CourierState,
    task: DeliveryTask,
    pickup: Location | None,
    rng: np.random.Generator,
    now: float = 0.0,
) -> bool:
    """
    Whether an idle courier accepts the task, i.e. their estimated utility is positive.

    Args:
        courier: CourierState: The courier, without an assigned task
        task: DeliveryTask: The offered task
        pickup: Location | None: Where the parcel is collected
        rng: np.random.Generator: Source of the estimation error
        now: float: Current time in seconds

    Returns:
        bool: True if the utility at the estimated arrival is positive
    """
    if courier.assigned_task is not None:
        raise ValueError(f"Courier {courier.id} already delivers task {courier.assigned_task}")
    estimate = estimate_arrival(courier, task, pickup, rng, now)
    return utility(courier, task, estimate.estimate, pickup) > 0


def waiting_cost(courier: CourierState, delta: float) -> float:
    """
    Cost K(delta) of waiting `delta` seconds for a substitute, zero if no physical handover is needed.

    Args:
        courier: CourierState: The deliverer
        delta: float: Waiting time in seconds

    Returns:
        float: The waiting cost in EUR
    """
    if delta < 0:
        raise ValueError(f"Negative waiting time {delta}")
    if not courier.picked_up:
        return 0.0
    return courier.waiting_cost_per_min * delta / 60.0


def candidate_bid(
    candidate: CourierState,
    task: DeliveryTask,
    pickup: Location | None,
    rng: np.random.Generator,
    now: float = 0.0,
) -> float:
    """
    Truthful bid of a candidate: their estimated surplus from taking the task, less a small margin.

    Args:
        candidate: CourierState: The candidate, without an assigned task
        task: DeliveryTask: The task up for transfer
        pickup: Location | None: Where the candidate collects the parcel
        rng: np.random.Generator: Source of the estimation error
        now: float: Current time in seconds

    Returns:
        float: The bid in EUR, 0 signals no interest
    """
    if candidate.assigned_task is not None:
        raise ValueError(f"Candidate {candidate.id} already delivers task {candidate.assigned_task}")
    estimate = estimate_arrival(candidate, task, pickup, rng, now)
    value = utility(candidate, task, estimate.estimate, pickup)
    return max(0.0, value - BID_MARGIN)


def deliverer_accepts_transfer(
    deliverer: CourierState,
    task: DeliveryTask,
    bid: float,
    delta: float,
    rng: np.random.Generator,
    now: float = 0.0,
    pickup: Location | None = None,
    on_time_probability: float | None = None,
) -> bool:
    """
    Whether the deliverer sells the task for `bid` given a handover wait of `delta` seconds.

    Without `on_time_probability` the deliverer values finishing the delivery at their own noisy
    arrival estimate. With it, they weigh the on-time and the late utility by that probability,
    the one the provider predicted when it opened the transfer session.

    Args:
        deliverer: CourierState: The current deliverer
        task: DeliveryTask: The task
        bid: float: The candidate's bid in EUR, positive
        delta: float: Temporal distance of the candidate in seconds
        rng: np.random.Generator: Source of the deliverer's own estimation error
        now: float: Current time in seconds
        pickup: Location | None: Where the deliverer still has to collect the parcel, None if they carry it
            or if it waits at the task origin
        on_time_probability: float | None: Predicted probability that the deliverer is on time

    Returns:
        bool: True if bid - K(delta) exceeds the estimated utility of finishing the delivery themself
    """
    if bid <= 0:
        raise ValueError(f"Only positive bids are presented to the deliverer, got {bid}")
    if pickup is None and not deliverer.picked_up:
        pickup = task.origin
    if on_time_probability is None:
        estimate = estimate_arrival(deliverer, task, pickup, rng, now)
        own = utility(deliverer, task, estimate.estimate, pickup)
    else:
        if not 0.0 <= on_time_probability <= 1.0:
            raise ValueError(f"On-time probability out of range: {on_time_probability}")
        on_time = utility(deliverer, task, -math.inf, pickup)
        late = utility(deliverer, task, math.inf, pickup)
        own = on_time_probability * on_time + (1.0 - on_time_probability) * late
    return bid - waiting_cost(deliverer, delta) > own
