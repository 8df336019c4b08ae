# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import math
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..logger import logger
from ..monitoring.stream_monitor import GpsEvent
from .geo import Location, distance, intermediate_point, sample_disk

__all__ = [
    "TRACE_COLUMNS",
    "TASK_COLUMNS",
    "MAX_MALFORMED_FRACTION",
    "Trip",
    "TaskRecord",
    "SyntheticTraceConfig",
    "TraceFormatError",
    "parse_traces",
    "write_traces",
    "randomize_starts",
    "synth_traces",
    "parse_tasks",
    "write_tasks",
]

TRACE_COLUMNS = ["trip_id", "user_id", "hour", "offset_s", "lat", "lon", "speed_mps"]
TASK_COLUMNS = ["task_id", "created_s", "origin_lat", "origin_lon", "dest_lat", "dest_lon"]
MAX_MALFORMED_FRACTION = 0.05
DAY_S = 86_400.0


class TraceFormatError(ValueError):
    """Raised when an input file does not follow its documented schema"""


@dataclass(frozen=True)
class Trip:
    """
    One GPS trace with times relative to its (obscured) start.

    Args:
        trip_id: str: Trip identifier, unique over all days of a file
        user_id: str: User identifier
        hour: int: Hour of the day the trip started in, 0-23
        samples: tuple: (offset_s, lat, lon, speed_mps) with strictly increasing offsets starting at 0
        day: int: Day index of the trip within the data set
    """

    trip_id: str
    user_id: str
    hour: int
    samples: tuple[tuple[float, float, float, float], ...]
    day: int = 0

    def __post_init__(self):
        if not self.samples:
            raise ValueError(f"Trip {self.trip_id} has no samples")
        if not 0 <= self.hour <= 23:
            raise ValueError(f"Trip {self.trip_id}: hour {self.hour} outside 0-23")
        offsets = [s[0] for s in self.samples]
        if offsets[0] != 0 or any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ValueError(f"Trip {self.trip_id}: offsets must increase strictly from 0")

    @property
    def duration(self) -> float:
        return self.samples[-1][0]

    @property
    def start(self) -> Location:
        return self.samples[0][1], self.samples[0][2]

    @property
    def end(self) -> Location:
        return self.samples[-1][1], self.samples[-1][2]


@dataclass(frozen=True)
class TaskRecord:
    """A task to replay: identifier, spawn time and endpoints"""

    task_id: str
    created_s: float
    origin: Location
    destination: Location


@dataclass(frozen=True)
class SyntheticTraceConfig:
    """
    Parameters of the synthetic trace generator.

    Args:
        center: Location: Center of the operating disk
        radius: float: Disk radius in meters
        min_speed: float: Lowest sampled speed in m/s
        max_speed: float: Highest sampled speed in m/s
        interval: float: Seconds between two samples
        min_duration: float: Shortest trip in seconds
        max_duration: float: Longest trip in seconds
        first_hour: int: Earliest start hour
        last_hour: int: Latest start hour
    """

    center: Location = (40.4168, -3.7038)
    radius: float = 1500.0
    min_speed: float = 2.5
    max_speed: float = 6.5
    interval: float = 60.0
    min_duration: float = 300.0
    max_duration: float = 2400.0
    first_hour: int = 8
    last_hour: int = 19


def _read_csv(path: str, columns: list[str], optional: tuple[str, ...] = ()) -> pd.DataFrame:
    if not os.path.isfile(path):
        logger.error(f"File {path} does not exist")
        raise FileNotFoundError(f"File {path} does not exist")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        logger.error(f"Could not read {path}: {e}")
        raise TraceFormatError(f"Could not read {path}: {e}") from e
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        logger.error(f"File {path} lacks the columns {missing}")
        raise TraceFormatError(f"File {path} lacks the columns {missing}, expected {columns + list(optional)}")
    return frame


def _check_malformed(path: str, malformed: int, total: int) -> None:
    if malformed:
        logger.warning(f"Skipped {malformed} of {total} malformed rows in {path}")
    if total and malformed / total > MAX_MALFORMED_FRACTION:
        logger.error(f"Too many malformed rows in {path}: {malformed} of {total}")
        raise TraceFormatError(
            f"{malformed} of {total} rows of {path} are malformed (more than {MAX_MALFORMED_FRACTION:.0%})"
        )


def parse_traces(path: str) -> list[Trip]:
    """
    Parse a trace file in the canonical schema `trip_id,user_id,hour,offset_s,lat,lon,speed_mps[,day]`.

    Malformed rows (non-numeric values, negative offsets or speeds, coordinates or hours out of range,
    duplicated offsets) are counted and skipped.

    Args:
        path: str: Path to the comma-separated trace file

    Returns:
        list[Trip]: One trip per trip id in order of first appearance, samples sorted by offset
    """
    frame = _read_csv(path, TRACE_COLUMNS, optional=("day",))
    total = len(frame)

    numeric = pd.DataFrame({
        c: pd.to_numeric(frame[c], errors="coerce") for c in ["hour", "offset_s", "lat", "lon", "speed_mps"]
    })
    numeric["day"] = pd.to_numeric(frame["day"], errors="coerce") if "day" in frame.columns else 0
    numeric["trip_id"] = frame["trip_id"].str.strip()
    numeric["user_id"] = frame["user_id"].str.strip()

    valid = (
        numeric[["hour", "offset_s", "lat", "lon", "speed_mps", "day"]].notna().all(axis=1)
        & (numeric["trip_id"] != "")
        & (numeric["offset_s"] >= 0)
        & (numeric["speed_mps"] >= 0)
        & numeric["lat"].between(-90, 90)
        & numeric["lon"].between(-180, 180)
        & numeric["hour"].between(0, 23)
    )
    numeric = numeric[valid]
    duplicated = numeric.duplicated(subset=["trip_id", "offset_s"], keep="first")
    numeric = numeric[~duplicated]
    _check_malformed(path, total - len(numeric), total)

    trips = []
    for trip_id, group in numeric.groupby("trip_id", sort=False):
        group = group.sort_values("offset_s", kind="stable")
        base = float(group["offset_s"].iloc[0])
        samples = tuple(
            (float(o) - base, float(la), float(lo), float(s))
            for o, la, lo, s in zip(group["offset_s"], group["lat"], group["lon"], group["speed_mps"])
        )
        trips.append(
            Trip(
                trip_id=str(trip_id),
                user_id=str(group["user_id"].iloc[0]),
                hour=int(group["hour"].iloc[0]),
                samples=samples,
                day=int(group["day"].iloc[0]),
            )
        )
    logger.info(f"Parsed {len(trips)} trips from {path}")
    return trips


def write_traces(trips: list[Trip], path: str) -> None:
    """Dump trips in the canonical trace schema (with the `day` column)"""
    rows = [
        (t.trip_id, t.user_id, t.hour, o, la, lo, s, t.day) for t in trips for o, la, lo, s in t.samples
    ]
    pd.DataFrame(rows, columns=TRACE_COLUMNS + ["day"]).to_csv(path, index=False)


def randomize_starts(trips: list[Trip], rng: np.random.Generator, day_epoch: float = 0.0) -> list[GpsEvent]:
    """
    Give every trip an absolute start drawn uniformly within its hour and merge all samples into one stream.

    Args:
        trips: list[Trip]: The trips, one random draw is consumed per trip in this order
        rng: np.random.Generator: Source of the start offsets
        day_epoch: float: Timestamp of midnight of the trips' day 0

    Returns:
        list[GpsEvent]: All samples sorted by timestamp, the courier id of a sample is its trip id
    """
    events = []
    for trip in trips:
        start = day_epoch + trip.day * DAY_S + trip.hour * 3600.0 + float(rng.uniform(0.0, 3600.0))
        events.extend(
            GpsEvent(courier_id=trip.trip_id, timestamp=start + o, lat=la, lon=lo, speed=s)
            for o, la, lo, s in trip.samples
        )
    events.sort(key=lambda e: (e.timestamp, e.courier_id))
    return events


def synth_traces(
    count: int,
    config: SyntheticTraceConfig,
    rng: np.random.Generator,
    day: int = 0,
    id_prefix: str = "t",
) -> list[Trip]:
    """
    Generate bike-trip-like traces inside the operating disk.

    Couriers ride piecewise straight legs between random points of the disk at a per-trip cruising
    speed with per-interval jitter, sampled every `config.interval` seconds.

    Args:
        count: int: Number of trips
        config: SyntheticTraceConfig: Generator parameters
        rng: np.random.Generator: The random source
        day: int: Day index stored on the trips
        id_prefix: str: Prefix of the trip ids

    Returns:
        list[Trip]: The generated trips
    """
    if count <= 0:
        raise ValueError(f"The number of trips must be positive, got {count}")

    trips = []
    for index in range(count):
        cruise = float(rng.uniform(config.min_speed, config.max_speed))
        duration = float(rng.uniform(config.min_duration, config.max_duration))
        hour = int(rng.integers(config.first_hour, config.last_hour + 1))
        n_samples = int(math.floor(duration / config.interval)) + 1

        position = sample_disk(config.center, config.radius, rng)
        target = sample_disk(config.center, config.radius, rng)
        samples = []
        for k in range(n_samples):
            speed = float(np.clip(cruise * rng.uniform(0.85, 1.15), config.min_speed, config.max_speed))
            samples.append((k * config.interval, position[0], position[1], speed))
            if k == n_samples - 1:
                break
            budget = speed * config.interval
            while budget > 0:
                leg = distance(position, target)
                if leg <= budget:
                    budget -= leg
                    position = target
                    target = sample_disk(config.center, config.radius, rng)
                else:
                    position = intermediate_point(position, target, budget / leg)
                    budget = 0.0

        trips.append(
            Trip(
                trip_id=f"{id_prefix}{day}-{index:05d}",
                user_id=f"u{day}-{index:05d}",
                hour=hour,
                samples=tuple(samples),
                day=day,
            )
        )
    return trips


def parse_tasks(path: str) -> list[TaskRecord]:
    """
    Parse a task file `task_id,created_s,origin_lat,origin_lon,dest_lat,dest_lon` for replay.

    Args:
        path: str: Path to the comma-separated task file

    Returns:
        list[TaskRecord]: Valid tasks sorted by creation time
    """
    frame = _read_csv(path, TASK_COLUMNS)
    total = len(frame)
    numeric = pd.DataFrame({c: pd.to_numeric(frame[c], errors="coerce") for c in TASK_COLUMNS[1:]})
    numeric["task_id"] = frame["task_id"].str.strip()
    valid = (
        numeric[TASK_COLUMNS[1:]].notna().all(axis=1)
        & (numeric["task_id"] != "")
        & numeric["origin_lat"].between(-90, 90)
        & numeric["dest_lat"].between(-90, 90)
        & numeric["origin_lon"].between(-180, 180)
        & numeric["dest_lon"].between(-180, 180)
    )
    numeric = numeric[valid].drop_duplicates(subset=["task_id"], keep="first")
    _check_malformed(path, total - len(numeric), total)
    numeric = numeric.sort_values(["created_s", "task_id"], kind="stable")
    return [
        TaskRecord(str(row.task_id), float(row.created_s), (row.origin_lat, row.origin_lon), (row.dest_lat, row.dest_lon))
        for row in numeric.itertuples(index=False)
    ]


def write_tasks(records: list[TaskRecord], path: str) -> None:
    """Dump tasks in the replay schema"""
    rows = [(r.task_id, r.created_s, *r.origin, *r.destination) for r in records]
    pd.DataFrame(rows, columns=TASK_COLUMNS).to_csv(path, index=False)
