# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
from tqdm import tqdm

from ..agents.courier_model import (
    MIN_ESTIMATE_SPEED,
    CourierState,
    DeliveryTask,
    TaskState,
    accepts_task,
    candidate_bid,
    delivery_cost,
    deliverer_accepts_transfer,
)
from ..logger import logger
from ..monitoring.stream_monitor import CourierMonitor, GpsEvent, SituationVector
from ..prediction.delay_predictor import TrainingBuffer, build_features, record_sample, train_on_outcome
from ..prediction.evaluation import PrequentialMetrics
from ..prediction.hoeffding_tree import HoeffdingTree, Label
from ..provider.negotiation import (
    GlobalRegistry,
    Role,
    StaleTaskError,
    TransferLog,
    TransferRequest,
    TransferSession,
    TriggerState,
    force_transfer,
    negotiate,
    rank_candidates,
    temporal_distance,
    trigger_check,
)
from ..utils.geo import Location, distance, distances_between, distances_from, intermediate_point, sample_disk
from ..utils.ingest import TaskRecord, Trip, randomize_starts, synth_traces
from ..utils.rng import RandomStreams
from .config import SimConfig, Strategy
from .reporting import DelayTimeline, Ledger, SimulationResult, TimelinePoint

__all__ = [
    "Mode",
    "Action",
    "Waypoint",
    "Engagement",
    "CourierAgent",
    "WorldState",
    "Simulator",
    "spawn_tasks",
    "assign_task",
    "step_movement",
    "step_incidents",
    "step_strategy",
    "record_outcome",
    "transfer_task",
]

DAY_S = 86_400.0
MINUTE_S = 60.0


class Mode(str, Enum):
    """How a courier moves: along their trace or along task waypoints"""

    TRACE = "trace"
    TASK = "task"


class Action(str, Enum):
    """What happens when a courier reaches a waypoint"""

    PICKUP = "pickup"
    HANDOVER = "handover"
    DROPOFF = "dropoff"
    HOME = "home"


class Waypoint(NamedTuple):
    """Target of a courier on a task"""

    location: Location
    action: Action


@dataclass
class Engagement:
    """One courier delivering one task, from acceptance until the dropoff or a transfer away"""

    task_id: str
    courier_id: str
    start: float
    end: float | None = None
    incident_at: float | None = None


class CourierAgent:
    """
    A courier in the simulated world.

    In trace mode the courier follows their recorded GPS trace, in task mode they move along
    waypoints at their current speed. A courier who finished a task before the end of their trace
    stays parked at their personal destination until the trace ends.

    Args:
        courier_id: str: The courier, equal to the trip id of the trace
        timestamps: list[float]: Absolute times of the trace samples
        locations: list[Location]: Trace positions
        config: SimConfig: Simulation parameters
    """

    def __init__(self, courier_id: str, timestamps: list[float], locations: list[Location], config: SimConfig):
        if not timestamps or len(timestamps) != len(locations):
            raise ValueError(f"Courier {courier_id} needs a non-empty trace")
        self.trace_ts = timestamps
        self.trace_locations = locations
        self.state = CourierState(
            id=courier_id,
            location=locations[0],
            destination=locations[-1],
            current_speed=config.default_speed,
            cost_per_km=config.cost_per_km,
            waiting_cost_per_min=config.waiting_cost_per_min,
            error_bound=config.error_bound,
        )
        self.monitor = CourierMonitor(courier_id)
        self.mode = Mode.TRACE
        self.parked = False
        self.waypoints: deque[Waypoint] = deque()
        self.engaged_at: float | None = None
        self.next_trial = math.inf
        self.next_gps = math.inf
        self.waiting_since: float | None = None
        self.incident_rng: np.random.Generator | None = None
        self.exited = False
        self._segment = 0
        self._located_at = -math.inf

    @property
    def id(self) -> str:
        return self.state.id

    @property
    def trace_end(self) -> float:
        return self.trace_ts[-1]

    @property
    def available(self) -> bool:
        return not self.exited and self.mode is Mode.TRACE and self.state.assigned_task is None

    @property
    def waiting(self) -> bool:
        return self.waiting_since is not None

    def position(self, clock: float) -> Location:
        """Location at `clock`, linearly interpolated between trace samples in trace mode"""
        if self.mode is Mode.TASK or self.parked:
            return self.state.location
        ts = self.trace_ts
        if clock <= ts[0]:
            return self.trace_locations[0]
        if clock >= ts[-1]:
            return self.trace_locations[-1]
        i = self._segment
        while ts[i + 1] <= clock:
            i += 1
        self._segment = i
        fraction = (clock - ts[i]) / (ts[i + 1] - ts[i])
        (lat1, lon1), (lat2, lon2) = self.trace_locations[i], self.trace_locations[i + 1]
        return lat1 + fraction * (lat2 - lat1), lon1 + fraction * (lon2 - lon1)

    def locate(self, clock: float) -> Location:
        if clock != self._located_at or self.mode is Mode.TASK:
            self.state.location = self.position(clock)
            self._located_at = clock
        return self.state.location

    def engage(self, now: float, waypoints: list[Waypoint], speed: float) -> None:
        """Start a fresh engagement: task mode, no incident, trials and GPS events counted from `now`"""
        self.mode = Mode.TASK
        self.parked = False
        self.waypoints = deque(waypoints)
        self.engaged_at = now
        self.next_trial = now + MINUTE_S
        self.next_gps = now
        self.waiting_since = None
        self.state.current_speed = speed
        self.state.incident_active = False
        self.incident_rng = None

    def release(self, speed: float) -> None:
        """End the engagement at the personal destination"""
        self.mode = Mode.TRACE
        self.parked = True
        self.waypoints.clear()
        self.engaged_at = None
        self.next_trial = math.inf
        self.next_gps = math.inf
        self.state.current_speed = speed
        self.state.incident_active = False
        self.incident_rng = None
        self.state.picked_up = False


def _collect_traces(events: list[GpsEvent]) -> dict[str, tuple[list[float], list[Location]]]:
    traces: dict[str, tuple[list[float], list[Location]]] = {}
    for event in events:
        ts, locations = traces.setdefault(event.courier_id, ([], []))
        ts.append(event.timestamp)
        locations.append(event.location)
    return traces


class WorldState:
    """
    Everything the simulation mutates: clock, couriers, tasks, provider registries and metrics.

    Args:
        config: SimConfig: Simulation parameters
        events: list[GpsEvent]: Timestamp-sorted trace events
        streams: RandomStreams: Named random sources
        tree: HoeffdingTree | None: Delay predictor, a fresh tree if None
        task_records: list[TaskRecord] | None: Tasks to replay instead of Poisson arrivals
    """

    def __init__(
        self,
        config: SimConfig,
        events: list[GpsEvent],
        streams: RandomStreams,
        tree: HoeffdingTree | None = None,
        task_records: list[TaskRecord] | None = None,
    ):
        self.config = config
        self.streams = streams
        self.clock = 0.0
        self.events = events
        self.cursor = 0
        self.traces = _collect_traces(events)
        self.couriers: dict[str, CourierAgent] = {}
        self.engaged: dict[str, CourierAgent] = {}
        self.exited: set[str] = set()
        self.tasks: dict[str, DeliveryTask] = {}
        self.pending: list[str] = []
        self.task_records = deque(task_records) if task_records is not None else None
        self.registry = GlobalRegistry(config.stale_after)
        self.tree = tree or HoeffdingTree()
        self.buffer = TrainingBuffer()
        self.next_sample: dict[str, float] = {}
        self.trigger_state = TriggerState(config.trigger_cooldown)
        self.transfer_log = TransferLog()
        self.metrics = PrequentialMetrics()
        self.timeline = DelayTimeline()
        self.ledger = Ledger()
        self.updates: list[tuple[str, SituationVector]] = []
        self.engagements: dict[tuple[str, str], Engagement] = {}
        self.spawned = 0
        self.expired = 0
        self.transfers = 0
        self.open_tasks = 0
        self._pool: tuple[float, list[CourierAgent], np.ndarray, np.ndarray] | None = None

    def advance(self, clock: float) -> None:
        if clock < self.clock:
            raise ValueError(f"The clock cannot go back from {self.clock} to {clock}")
        self.clock = clock

    def add_courier(self, agent: CourierAgent) -> CourierAgent:
        self.couriers[agent.id] = agent
        return agent

    def add_task(self, task: DeliveryTask) -> DeliveryTask:
        if task.id in self.tasks:
            raise ValueError(f"Duplicate task id {task.id}")
        self.tasks[task.id] = task
        self.pending.append(task.id)
        self.spawned += 1
        self.open_tasks += 1
        return task

    def available_couriers(self) -> list[CourierAgent]:
        return [a for a in self.couriers.values() if a.available]

    def candidate_pool(self) -> tuple[list[CourierAgent], np.ndarray, np.ndarray]:
        """Available couriers with their current locations and personal destinations, cached per clock"""
        if self._pool is None or self._pool[0] != self.clock:
            agents = self.available_couriers()
            locations = np.array([a.locate(self.clock) for a in agents]).reshape(-1, 2)
            homes = np.array([a.state.destination for a in agents]).reshape(-1, 2)
            self._pool = (self.clock, agents, locations, homes)
        return self._pool[1], self._pool[2], self._pool[3]

    def invalidate_pool(self) -> None:
        self._pool = None

    def close_engagement(self, task_id: str, courier_id: str, at: float) -> None:
        engagement = self.engagements.get((task_id, courier_id))
        if engagement is not None and engagement.end is None:
            engagement.end = at

    def role_of(self, agent: CourierAgent) -> Role:
        if agent.available:
            return Role.AVAILABLE
        return Role.DELIVERER if agent.state.assigned_task is not None else Role.BUSY

    def deliverer_pickup(self, task: DeliveryTask, agent: CourierAgent) -> Location | None:
        """Where the courier still collects the parcel, None if they carry it"""
        if task.holder == agent.id:
            return None
        if task.state is TaskState.ASSIGNED:
            return task.origin
        return self.couriers[task.holder].state.location if task.holder else task.destination

    def substitute_pickup(self, task: DeliveryTask) -> Location:
        """Where a substitute would collect the parcel"""
        if task.state is TaskState.PICKED_UP and task.holder is not None:
            return self.couriers[task.holder].state.location
        return task.origin


def _observe(world: WorldState, agent: CourierAgent, event: GpsEvent) -> None:
    sv, forward = agent.monitor.observe(event)
    if not forward:
        return
    speed = event.speed if agent.mode is Mode.TRACE else agent.state.current_speed
    world.registry.update(sv, role=world.role_of(agent), speed=speed)
    if agent.state.assigned_task is not None:
        world.updates.append((agent.id, sv))


def _exit(world: WorldState, agent: CourierAgent) -> None:
    agent.exited = True
    world.registry.remove(agent.id)
    world.couriers.pop(agent.id, None)
    world.exited.add(agent.id)


def process_events(world: WorldState) -> None:
    """Feed trace events up to the clock to the couriers' monitors, couriers appear with their first event"""
    events = world.events
    while world.cursor < len(events) and events[world.cursor].timestamp <= world.clock:
        event = events[world.cursor]
        world.cursor += 1
        agent = world.couriers.get(event.courier_id)
        if agent is None:
            if event.courier_id in world.exited:
                continue
            ts, locations = world.traces[event.courier_id]
            agent = world.add_courier(CourierAgent(event.courier_id, ts, locations, world.config))
        # couriers on a task produce their own events
        if agent.mode is Mode.TASK:
            continue
        if agent.parked:
            lat, lon = agent.state.location
            event = GpsEvent(agent.id, event.timestamp, lat, lon, 0.0)
        else:
            agent.state.location = event.location
        _observe(world, agent, event)
        if event.timestamp >= agent.trace_end:
            _exit(world, agent)


def spawn_tasks(config: SimConfig, rng: np.random.Generator, clock: float, first_index: int = 0) -> list[DeliveryTask]:
    """
    New tasks of one time step: Poisson arrivals with uniformly drawn endpoints in the operating disk.

    Args:
        config: SimConfig: Simulation parameters
        rng: np.random.Generator: The task stream
        clock: float: End of the time step, creation time of the tasks
        first_index: int: Number used for the first task id

    Returns:
        list[DeliveryTask]: The tasks, possibly none
    """
    count = int(rng.poisson(config.tasks_per_hour * config.dt / 3600.0))
    tasks = []
    for k in range(count):
        origin = sample_disk(config.center, config.radius, rng)
        destination = sample_disk(config.center, config.radius, rng)
        tasks.append(
            DeliveryTask(
                id=f"p{first_index + k:06d}",
                origin=origin,
                destination=destination,
                deadline=clock + config.deadline,
                reward=config.reward,
                penalty=config.penalty,
                created_at=clock,
            )
        )
    return tasks


def _engage(world: WorldState, agent: CourierAgent, task: DeliveryTask, route: list[Waypoint]) -> None:
    cfg = world.config
    agent.engage(world.clock, route, cfg.default_speed)
    # same engagement, same incident trials, whatever the strategy
    agent.incident_rng = world.streams.keyed("incidents", task.id, agent.id)
    world.engagements[(task.id, agent.id)] = Engagement(task.id, agent.id, world.clock)
    world.invalidate_pool()
    agent.state.assigned_task = task.id
    agent.state.picked_up = task.holder == agent.id
    world.engaged[agent.id] = agent
    pickup = route[0].location if route[0].action in (Action.PICKUP, Action.HANDOVER) else None
    world.ledger.detour_costs += delivery_cost(agent.state, task, pickup)
    world.registry.set_role(agent.id, Role.DELIVERER, speed=cfg.default_speed)
    world.next_sample.setdefault(task.id, world.clock + cfg.sample_interval)


def assign_task(world: WorldState, task: DeliveryTask, rng: np.random.Generator | None = None) -> str | None:
    """
    Offer a task to the available couriers by ascending distance to its origin.

    Couriers who cannot have a positive utility whatever their estimation error are skipped
    without asking.

    Args:
        world: WorldState: The world
        task: DeliveryTask: An unassigned task
        rng: np.random.Generator | None: Source of the couriers' estimation errors. If None, every
            offer draws from a generator keyed by task, courier and second, so that runs of
            different strategies make the same offers with the same errors.

    Returns:
        str | None: The accepting courier, None if nobody accepted
    """
    if task.state is not TaskState.UNASSIGNED:
        raise ValueError(f"Task {task.id} is {task.state.value}, only unassigned tasks can be assigned")
    candidates, locations, homes = world.candidate_pool()
    if not candidates:
        return None

    cfg = world.config
    now = world.clock
    to_pickup = distances_from(task.origin, locations[:, 0], locations[:, 1])
    carry = distance(task.origin, task.destination)
    to_home = distances_from(task.destination, homes[:, 0], homes[:, 1])
    direct = distances_between(locations[:, 0], locations[:, 1], homes[:, 0], homes[:, 1])
    cost = cfg.cost_per_km * np.maximum(0.0, to_pickup + carry + to_home - direct) / 1000.0
    arrival = now + (to_pickup + carry) / max(cfg.default_speed, MIN_ESTIMATE_SPEED)
    feasible = (task.reward - cost > -1e-9) & (arrival - cfg.error_bound < task.deadline)

    for i in sorted(np.flatnonzero(feasible), key=lambda i: (to_pickup[i], candidates[i].id)):
        agent = candidates[i]
        offer_rng = rng if rng is not None else world.streams.keyed("decisions", task.id, agent.id, int(now))
        if accepts_task(agent.state, task, task.origin, offer_rng, now):
            task.transition(TaskState.ASSIGNED)
            task.courier_id = agent.id
            route = [
                Waypoint(task.origin, Action.PICKUP),
                Waypoint(task.destination, Action.DROPOFF),
                Waypoint(agent.state.destination, Action.HOME),
            ]
            _engage(world, agent, task, route)
            logger.debug(f"Task {task.id} assigned to {agent.id}")
            return agent.id
    return None


def transfer_task(world: WorldState, task: DeliveryTask, substitute_id: str, bid: float | None) -> None:
    """
    Reassign an active task to a substitute.

    A deliverer carrying the parcel waits in place for the substitute, who collects it there.
    Otherwise the former deliverer heads straight to their personal destination.

    Args:
        world: WorldState: The world
        task: DeliveryTask: The task
        substitute_id: str: The new deliverer, an available courier
        bid: float | None: Payment of the substitute to the former deliverer, None for forced transfers
    """
    old = world.couriers[task.courier_id]
    new = world.couriers[substitute_id]
    if not new.available:
        raise ValueError(f"Courier {substitute_id} cannot take over task {task.id}")
    now = world.clock

    world.close_engagement(task.id, old.id, now)
    task.reassign(substitute_id)
    world.transfers += 1
    if bid:
        world.ledger.bid_payments += bid
    old.state.assigned_task = None
    old.state.picked_up = False

    home = Waypoint(old.state.destination, Action.HOME)
    if task.state is TaskState.PICKED_UP and task.holder is not None:
        holder = world.couriers[task.holder]
        if holder is old:
            old.waypoints.clear()
            old.waiting_since = now
        else:
            old.waypoints = deque([home])
        route = [Waypoint(holder.state.location, Action.HANDOVER)]
    else:
        old.waypoints = deque([home])
        route = [Waypoint(task.origin, Action.PICKUP)]
    world.registry.set_role(old.id, Role.BUSY)

    new.locate(now)
    route += [Waypoint(task.destination, Action.DROPOFF), Waypoint(new.state.destination, Action.HOME)]
    _engage(world, new, task, route)
    logger.debug(f"Task {task.id} transferred from {old.id} to {substitute_id}")


def record_outcome(world: WorldState, task: DeliveryTask) -> TimelinePoint:
    """
    Account a completed delivery: prequential test, training, ledger and delay timeline.

    Args:
        world: WorldState: The world
        task: DeliveryTask: The task, delivered on time or late

    Returns:
        TimelinePoint: The new point of the delay timeline
    """
    if task.state not in (TaskState.DELIVERED_ON_TIME, TaskState.DELIVERED_LATE):
        raise ValueError(f"Task {task.id} is {task.state.value}, not delivered")
    delayed = task.state is TaskState.DELIVERED_LATE
    label = Label.DELAY if delayed else Label.NO_DELAY

    last = world.buffer.last(task.id)
    if last is not None:
        world.metrics.update(world.tree.predict(last), label)
    train_on_outcome(world.tree, world.buffer, task.id, label, world.streams.training)

    if delayed:
        world.ledger.penalties += task.penalty
    else:
        world.ledger.rewards += task.reward
    world.next_sample.pop(task.id, None)
    world.trigger_state.forget(task.id)
    world.open_tasks -= 1
    completed = task.completed_at if task.completed_at is not None else world.clock
    return world.timeline.append(completed, task.id, task.courier_id or "", delayed, world.transfers)


def _arrive(world: WorldState, agent: CourierAgent, action: Action, at: float) -> None:
    cfg = world.config
    if action is Action.HOME:
        world.engaged.pop(agent.id, None)
        agent.release(cfg.default_speed)
        if at >= agent.trace_end:
            _exit(world, agent)
        else:
            world.registry.set_role(agent.id, Role.AVAILABLE, speed=0.0)
        return

    task = world.tasks[agent.state.assigned_task]  # type: ignore[index]
    if action is Action.PICKUP:
        task.transition(TaskState.PICKED_UP)
        task.holder = agent.id
        agent.state.picked_up = True
    elif action is Action.HANDOVER:
        holder = world.couriers[task.holder]  # type: ignore[index]
        world.ledger.waiting_costs += holder.state.waiting_cost_per_min * (at - (holder.waiting_since or at)) / 60.0
        holder.waiting_since = None
        holder.waypoints = deque([Waypoint(holder.state.destination, Action.HOME)])
        task.holder = agent.id
        agent.state.picked_up = True
    elif action is Action.DROPOFF:
        task.transition(TaskState.DELIVERED_ON_TIME if at < task.deadline else TaskState.DELIVERED_LATE)
        task.completed_at = at
        task.holder = None
        world.close_engagement(task.id, agent.id, at)
        agent.state.assigned_task = None
        agent.state.picked_up = False
        world.registry.set_role(agent.id, Role.BUSY)
        record_outcome(world, task)


def step_movement(world: WorldState, dt: float) -> None:
    """
    Move every courier on a task along their waypoints during the step ending at the clock.

    The remaining budget of a step carries over to the next leg when a waypoint is reached.

    Args:
        world: WorldState: The world
        dt: float: Step length in seconds
    """
    if dt <= 0:
        raise ValueError(f"The time step must be positive, got {dt}")
    for agent in list(world.engaged.values()):
        left = dt
        at = world.clock - dt
        while agent.waypoints and left > 0:
            speed = agent.state.current_speed
            if speed <= 0:
                break
            target = agent.waypoints[0]
            remaining = distance(agent.state.location, target.location)
            needed = remaining / speed
            if needed <= left:
                agent.state.location = target.location
                left -= needed
                at += needed
                agent.waypoints.popleft()
                _arrive(world, agent, target.action, at)
                if agent.mode is not Mode.TASK:
                    break
            else:
                agent.state.location = intermediate_point(agent.state.location, target.location, left * speed / remaining)
                left = 0.0


def step_incidents(world: WorldState, rng: np.random.Generator, dt: float) -> None:
    """
    Bernoulli incident trials, one per full minute since acceptance, for couriers delivering a task.

    An incident slows the courier to the incident speed for the rest of the engagement.
    Engagements started by the simulation draw their trials from their own keyed generator,
    so an engagement has the same incidents under every strategy.

    Args:
        world: WorldState: The world
        rng: np.random.Generator: The incident stream of couriers engaged without a keyed generator
        dt: float: Step length in seconds, trials that fell due within it are drawn
    """
    if dt <= 0:
        raise ValueError(f"The time step must be positive, got {dt}")
    p = world.config.incident_probability
    for agent in world.engaged.values():
        if agent.state.assigned_task is None or agent.state.incident_active:
            continue
        trials = agent.incident_rng if agent.incident_rng is not None else rng
        while agent.next_trial <= world.clock:
            agent.next_trial += MINUTE_S
            if trials.random() < p:
                agent.state.incident_active = True
                agent.state.current_speed = world.config.incident_speed
                engagement = world.engagements.get((agent.state.assigned_task, agent.id))
                if engagement is not None:
                    engagement.incident_at = world.clock
                break


class _SessionParticipants:
    """Decision functions of the couriers of one transfer session, evaluated at the session's clock"""

    def __init__(self, world: WorldState, task: DeliveryTask, deliverer: CourierAgent, sigma: float):
        self.world = world
        self.task = task
        self.deliverer = deliverer
        self.pickup = world.substitute_pickup(task)
        self.deliverer_pickup = world.deliverer_pickup(task, deliverer)
        self.sigma = sigma
        self.rng = world.streams.negotiation

    def task_active(self) -> bool:
        return self.task.active and self.task.courier_id == self.deliverer.id

    def candidate_bid(self, candidate_id: str) -> float:
        agent = self.world.couriers.get(candidate_id)
        if agent is None or not agent.available:
            return 0.0
        agent.locate(self.world.clock)
        return candidate_bid(agent.state, self.task, self.pickup, self.rng, self.world.clock)

    def temporal_distance(self, candidate_id: str) -> float:
        return temporal_distance(self.world.registry, candidate_id, self.deliverer.state.location, self.world.clock)

    def deliverer_accepts(self, candidate_id: str, bid: float, delta: float) -> bool:
        return deliverer_accepts_transfer(
            self.deliverer.state,
            self.task,
            bid,
            delta,
            self.rng,
            self.world.clock,
            pickup=self.deliverer_pickup,
            on_time_probability=self.sigma,
        )

    def transfer(self, candidate_id: str, bid: float | None) -> None:
        transfer_task(self.world, self.task, candidate_id, bid)


def _run_session(world: WorldState, task: DeliveryTask, deliverer: CourierAgent) -> TransferSession:
    now = world.clock
    world.trigger_state.start(task.id, now)
    try:
        entry = world.registry.get(deliverer.id)
        sv = entry.vector if entry is not None else deliverer.monitor.latest
        sigma = world.tree.predict_on_time(build_features(sv, task, now, world.deliverer_pickup(task, deliverer)))
        exclude = {deliverer.id} | ({task.holder} if task.holder else set())
        ranking = rank_candidates(
            world.registry, world.tree, task, sigma, now, pickup=world.substitute_pickup(task), exclude=exclude
        )
        session = TransferSession(TransferRequest(task.id, deliverer.id, sigma, now), ranking)
        participants = _SessionParticipants(world, task, deliverer, sigma)
        try:
            if world.config.strategy is Strategy.F_BEST:
                force_transfer(session, participants)
            else:
                negotiate(session, participants)
        except StaleTaskError:
            logger.warning(f"Transfer session of task {task.id} aborted")
        world.transfer_log.append(session)
        return session
    finally:
        world.trigger_state.finish(task.id)


def step_strategy(world: WorldState) -> None:
    """
    Evaluate the trigger policy on the deliverer updates of the step and run transfer sessions.

    Without transfers (NOT) the updates are discarded. Tasks whose deadline passed are not transferred,
    nor are transferred tasks whose substitute is still on the way to collect the parcel.

    Args:
        world: WorldState: The world
    """
    updates, world.updates = world.updates, []
    if world.config.strategy is Strategy.NOT:
        return
    for courier_id, sv in updates:
        agent = world.couriers.get(courier_id)
        if agent is None or agent.state.assigned_task is None:
            continue
        task = world.tasks[agent.state.assigned_task]
        if not task.active or world.clock >= task.deadline:
            continue
        if task.transfers and task.holder != agent.id:
            continue
        fv = build_features(sv, task, world.clock, world.deliverer_pickup(task, agent))
        sigma = world.tree.predict_on_time(fv)
        if trigger_check(sigma, world.config.trigger_threshold, world.trigger_state, task.id, world.clock):
            _run_session(world, task, agent)


def _emit_task_events(world: WorldState) -> None:
    interval = world.config.gps_interval
    for agent in list(world.engaged.values()):
        if agent.next_gps > world.clock:
            continue
        while agent.next_gps <= world.clock:
            agent.next_gps += interval
        speed = agent.state.current_speed if agent.waypoints else 0.0
        lat, lon = agent.state.location
        _observe(world, agent, GpsEvent(agent.id, world.clock, lat, lon, speed))


def _sample_features(world: WorldState) -> None:
    interval = world.config.sample_interval
    for task_id, due in world.next_sample.items():
        if due > world.clock:
            continue
        task = world.tasks[task_id]
        agent = world.couriers.get(task.courier_id or "")
        sv = agent.monitor.latest if agent is not None else None
        if sv is not None:
            record_sample(world.buffer, task_id, build_features(sv, task, world.clock, world.deliverer_pickup(task, agent)))
        world.next_sample[task_id] = due + interval


def _assign_pending(world: WorldState) -> None:
    waiting = []
    for task_id in world.pending:
        task = world.tasks[task_id]
        if world.clock >= task.deadline:
            task.transition(TaskState.EXPIRED)
            world.expired += 1
            world.open_tasks -= 1
            logger.warning(f"Task {task_id} expired without a courier")
            continue
        if assign_task(world, task) is None:
            waiting.append(task_id)
    world.pending = waiting


def step(world: WorldState, spawn: bool) -> None:
    """Advance the world by one time step ending at the current clock"""
    cfg = world.config
    # couriers on their trips report first, tasks appear after
    process_events(world)
    if spawn and world.task_records is None:
        for task in spawn_tasks(cfg, world.streams.tasks, world.clock, first_index=world.spawned):
            world.add_task(task)
    # replayed tasks arrive regardless of the window
    while world.task_records and world.task_records[0].created_s <= world.clock:
        record = world.task_records.popleft()
        world.add_task(
            DeliveryTask(
                id=record.task_id,
                origin=record.origin,
                destination=record.destination,
                deadline=record.created_s + cfg.deadline,
                reward=cfg.reward,
                penalty=cfg.penalty,
                created_at=record.created_s,
            )
        )
    _assign_pending(world)
    # incidents drawn at the start of the step already slow this step's movement
    step_incidents(world, world.streams.incidents, cfg.dt)
    step_movement(world, cfg.dt)
    # the provider only sees what couriers on a task reported up to now
    _emit_task_events(world)
    step_strategy(world)
    _sample_features(world)


class Simulator:
    """
    Deterministic fixed-step crowdshipping simulation.

    Each day runs through the task window and then drains until every task is resolved.

    Args:
        config: SimConfig: Simulation parameters
        trips: list[Trip] | None: Courier traces, synthetic ones if None
        task_records: list[TaskRecord] | None: Tasks to replay, Poisson arrivals if None
        tree: HoeffdingTree | None: A (pre-trained) delay predictor, a fresh tree if None
    """

    def __init__(
        self,
        config: SimConfig,
        trips: list[Trip] | None = None,
        task_records: list[TaskRecord] | None = None,
        tree: HoeffdingTree | None = None,
    ):
        self.config = config
        self.streams = RandomStreams(config.seed)
        if trips is None:
            trips = [
                trip
                for day in range(config.days)
                for trip in synth_traces(config.couriers_per_day, config.trace_config(), self.streams.traces, day=day)
            ]
        self.trips = trips
        events = randomize_starts(trips, self.streams.traces)
        self.world = WorldState(config, events, self.streams, tree=tree, task_records=task_records)

    def run(self, progress: bool = False) -> SimulationResult:
        cfg = self.config
        world = self.world
        for day in tqdm(range(cfg.days), desc="Simulating days", disable=not progress):
            start = day * DAY_S + cfg.window_start_hour * 3600.0
            end = day * DAY_S + cfg.window_end_hour * 3600.0
            k = 0
            # window first, then the drain without new tasks
            while True:
                k += 1
                clock = start + k * cfg.dt
                in_window = clock <= end
                if not in_window and world.open_tasks == 0:
                    break
                # a task can hold the drain open past its deadline, but not forever
                if clock - end > cfg.max_drain:
                    logger.error(f"{world.open_tasks} tasks still open {cfg.max_drain} s after the end of day {day}")
                    raise RuntimeError(f"Day {day} did not drain within {cfg.max_drain} s")
                world.advance(clock)
                step(world, spawn=in_window)
            logger.info(
                f"Day {day}: {world.spawned} tasks, delay fraction {world.timeline.final_fraction:.4f}, "
                f"{world.transfers} transfers"
            )

        return SimulationResult(
            config=cfg,
            timeline=world.timeline,
            transfer_log=world.transfer_log,
            metrics=world.metrics,
            ledger=world.ledger,
            spawned=world.spawned,
            expired=world.expired,
            model_report=world.tree.describe(),
            model_stats={
                "model_examples": world.tree.n_examples,
                "model_nodes": world.tree.node_count,
                "model_leaves": world.tree.leaf_count,
                "model_depth": world.tree.depth,
            },
        )
