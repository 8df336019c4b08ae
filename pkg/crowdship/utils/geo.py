# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

import math

import numpy as np

__all__ = [
    "EARTH_RADIUS_M",
    "Location",
    "distance",
    "distances_from",
    "distances_between",
    "path_length",
    "destination_point",
    "intermediate_point",
    "sample_disk",
    "validate_location",
]

EARTH_RADIUS_M = 6_371_000.0

Location = tuple[float, float]


def validate_location(location: Location) -> None:
    """Raise a ValueError if a (lat, lon) pair is outside the WGS84 ranges"""
    lat, lon = location
    if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
        raise ValueError(f"Invalid coordinates: {location}")


def distance(a: Location, b: Location) -> float:
    """
    Great-circle distance between two points with the haversine formula.

    Args:
        a: Location: (lat, lon) in degrees
        b: Location: (lat, lon) in degrees

    Returns:
        float: The distance in meters
    """
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.atan2(math.sqrt(h), math.sqrt(max(0.0, 1 - h)))


def distances_from(origin: Location, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """
    Vectorized haversine distance from one point to many points.

    Args:
        origin: Location: (lat, lon) in degrees
        lats: np.ndarray: Latitudes of the targets in degrees
        lons: np.ndarray: Longitudes of the targets in degrees

    Returns:
        np.ndarray: Distances in meters
    """
    return distances_between(np.asarray(origin[0]), np.asarray(origin[1]), lats, lons)


def distances_between(lats1: np.ndarray, lons1: np.ndarray, lats2: np.ndarray, lons2: np.ndarray) -> np.ndarray:
    """Element-wise haversine distances in meters between two broadcastable sets of points"""
    lat1, lon1 = np.radians(lats1), np.radians(lons1)
    lat2, lon2 = np.radians(lats2), np.radians(lons2)
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arctan2(np.sqrt(h), np.sqrt(np.clip(1 - h, 0.0, None)))


def path_length(*points: Location) -> float:
    """Length in meters of the polyline through the given points"""
    return sum(distance(a, b) for a, b in zip(points, points[1:]))


def destination_point(origin: Location, bearing: float, dist: float) -> Location:
    """
    Point reached from `origin` after travelling `dist` meters along the great circle with initial `bearing`.

    Args:
        origin: Location: (lat, lon) in degrees
        bearing: float: Initial bearing in radians, clockwise from north
        dist: float: Distance in meters

    Returns:
        Location: The destination (lat, lon) in degrees
    """
    lat1, lon1 = math.radians(origin[0]), math.radians(origin[1])
    ang = dist / EARTH_RADIUS_M
    lat2 = math.asin(math.sin(lat1) * math.cos(ang) + math.cos(lat1) * math.sin(ang) * math.cos(bearing))
    lon2 = lon1 + math.atan2(
        math.sin(bearing) * math.sin(ang) * math.cos(lat1),
        math.cos(ang) - math.sin(lat1) * math.sin(lat2),
    )
    return math.degrees(lat2), (math.degrees(lon2) + 540.0) % 360.0 - 180.0


def intermediate_point(a: Location, b: Location, fraction: float) -> Location:
    """
    Point at `fraction` of the way from `a` to `b` along the great circle.

    Args:
        a: Location: Start (lat, lon) in degrees
        b: Location: End (lat, lon) in degrees
        fraction: float: Position along the segment in [0, 1]

    Returns:
        Location: The intermediate (lat, lon) in degrees
    """
    if fraction <= 0.0:
        return a
    if fraction >= 1.0:
        return b
    ang = distance(a, b) / EARTH_RADIUS_M
    if ang == 0.0:
        return a
    lat1, lon1, lat2, lon2 = map(math.radians, (a[0], a[1], b[0], b[1]))
    wa = math.sin((1 - fraction) * ang) / math.sin(ang)
    wb = math.sin(fraction * ang) / math.sin(ang)
    x = wa * math.cos(lat1) * math.cos(lon1) + wb * math.cos(lat2) * math.cos(lon2)
    y = wa * math.cos(lat1) * math.sin(lon1) + wb * math.cos(lat2) * math.sin(lon2)
    z = wa * math.sin(lat1) + wb * math.sin(lat2)
    return math.degrees(math.atan2(z, math.hypot(x, y))), math.degrees(math.atan2(y, x))


def sample_disk(center: Location, radius: float, rng: np.random.Generator) -> Location:
    """
    Draw a point uniformly over the disk of `radius` meters around `center`.

    Polar sampling with a square-root radius keeps the density uniform over the area.

    Args:
        center: Location: Disk center (lat, lon) in degrees
        radius: float: Disk radius in meters
        rng: np.random.Generator: The random source

    Returns:
        Location: The sampled (lat, lon) in degrees
    """
    r = radius * math.sqrt(rng.random())
    bearing = 2 * math.pi * rng.random()
    return destination_point(center, bearing, r)
