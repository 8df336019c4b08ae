# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

from collections import deque
from dataclasses import dataclass, field

from ..logger import logger
from ..utils.geo import Location, distance, validate_location

__all__ = [
    "GpsEvent",
    "SituationVector",
    "WindowState",
    "CourierMonitor",
    "OrderingError",
    "ingest_event",
    "significant_change",
]

WINDOW_S = 600.0
SPEED_WINDOW_S = 300.0
STOP_SPEED = 0.1

SPEED_CHANGE = 0.5
DISPLACEMENT_M = 50.0
HEARTBEAT_S = 60.0


class OrderingError(ValueError):
    """Raised when a courier's GPS events arrive with decreasing timestamps"""


@dataclass(frozen=True, slots=True)
class GpsEvent:
    """A single GPS sample of a courier's smartphone"""

    courier_id: str
    timestamp: float
    lat: float
    lon: float
    speed: float

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError(f"Negative speed {self.speed} for courier {self.courier_id}")
        validate_location((self.lat, self.lon))

    @property
    def location(self) -> Location:
        return self.lat, self.lon


@dataclass(frozen=True, slots=True)
class SituationVector:
    """Windowed summary of a courier's GPS stream"""

    courier_id: str
    timestamp: float
    location: Location
    avg_speed_5min: float
    max_speed_5min: float
    stop_count_10min: int
    # speed of the most recent sample
    speed: float = 0.0


@dataclass
class WindowState:
    """Samples of one courier covering the last 10 minutes"""

    courier_id: str
    samples: deque[tuple[float, float, Location]] = field(default_factory=deque)
    last_timestamp: float | None = None

    def prune(self, now: float) -> None:
        while self.samples and self.samples[0][0] <= now - WINDOW_S:
            self.samples.popleft()


def ingest_event(state: WindowState, event: GpsEvent) -> SituationVector:
    """
    Add a GPS event to the courier's window and summarize the window.

    Args:
        state: WindowState: The courier's window, updated in place
        event: GpsEvent: The new sample

    Returns:
        SituationVector: Aggregates over the 5 minute (speeds) and 10 minute (stops) windows ending at the event
    """
    if event.courier_id != state.courier_id:
        raise ValueError(f"Event of courier {event.courier_id} fed to window of {state.courier_id}")
    if state.last_timestamp is not None and event.timestamp < state.last_timestamp:
        logger.error(
            f"Out-of-order event for courier {event.courier_id}: {event.timestamp} < {state.last_timestamp}"
        )
        raise OrderingError(
            f"Event at {event.timestamp} is older than the last ingested event at {state.last_timestamp}"
        )

    state.samples.append((event.timestamp, event.speed, event.location))
    state.last_timestamp = event.timestamp
    state.prune(event.timestamp)

    recent = [speed for ts, speed, _ in state.samples if ts > event.timestamp - SPEED_WINDOW_S]
    stops = sum(1 for _, speed, _ in state.samples if speed < STOP_SPEED)

    return SituationVector(
        courier_id=event.courier_id,
        timestamp=event.timestamp,
        location=event.location,
        avg_speed_5min=min(sum(recent) / len(recent), max(recent)),
        max_speed_5min=max(recent),
        stop_count_10min=stops,
        speed=event.speed,
    )


def significant_change(prev: SituationVector, next: SituationVector) -> bool:
    """
    Decide whether `next` differs enough from the last forwarded vector `prev` to be communicated.

    Args:
        prev: SituationVector: The last forwarded vector
        next: SituationVector: The latest vector of the same courier

    Returns:
        bool: True on a speed change of at least 0.5 m/s, a displacement of at least 50 m or after 60 s
    """
    if abs(next.avg_speed_5min - prev.avg_speed_5min) >= SPEED_CHANGE:
        return True
    if next.timestamp - prev.timestamp >= HEARTBEAT_S:
        return True
    return distance(prev.location, next.location) >= DISPLACEMENT_M


class CourierMonitor:
    """
    Local situation monitoring of a single courier agent.

    Keeps the courier's window and the last vector that was forwarded to the logistics provider.

    Args:
        courier_id: str: The monitored courier
    """

    def __init__(self, courier_id: str):
        self.window = WindowState(courier_id)
        self.latest: SituationVector | None = None
        self.forwarded: SituationVector | None = None

    def observe(self, event: GpsEvent) -> tuple[SituationVector, bool]:
        """
        Ingest an event and report whether the resulting vector has to be forwarded.

        Args:
            event: GpsEvent: The new sample

        Returns:
            tuple[SituationVector, bool]: The updated vector and the forward decision
        """
        self.latest = ingest_event(self.window, event)
        forward = self.forwarded is None or significant_change(self.forwarded, self.latest)
        if forward:
            self.forwarded = self.latest
        return self.latest, forward
