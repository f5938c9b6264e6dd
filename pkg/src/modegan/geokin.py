"""Geodesic and kinematic math for GPS trajectories.

Great-circle distance, initial bearing, bearing rate, and the per-point
channel derivation (distance to previous point, speed, acceleration, jerk,
bearing rate) that turns an ordered list of GPS fixes into the five-channel
matrix all downstream models consume.

All functions here are pure; coordinates are radians internally (degrees
only at file boundaries).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

CHANNEL_ORDER = ("dist_prev", "speed", "accel", "jerk", "bearing_rate")
NUM_CHANNELS = len(CHANNEL_ORDER)


class TripTooShortError(ValueError):
    """Raised when a trip has too few usable points for channel derivation."""


@dataclass(frozen=True)
class GpsPoint:
    """A single GPS fix: latitude/longitude in radians, epoch seconds."""

    lat: float
    lon: float
    t: float

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float, t: float) -> "GpsPoint":
        if not (-90.0 <= lat_deg <= 90.0):
            raise ValueError(f"latitude {lat_deg} out of [-90, 90]")
        if not (-180.0 <= lon_deg <= 180.0):
            raise ValueError(f"longitude {lon_deg} out of [-180, 180]")
        if not math.isfinite(t):
            raise ValueError(f"non-finite timestamp {t}")
        return cls(math.radians(lat_deg), math.radians(lon_deg), float(t))


@dataclass(frozen=True)
class ChannelClamps:
    """Physical bounds applied per channel before anything downstream.

    Unclamped GPS glitches (multipath jumps, clock hiccups) otherwise
    dominate channel statistics.
    """

    dist_max_m: float = 5_000.0
    speed_max_ms: float = 50.0
    accel_max_ms2: float = 10.0
    jerk_max_ms3: float = 10.0


DEFAULT_CLAMPS = ChannelClamps()


class ChannelResult(NamedTuple):
    values: np.ndarray  # (n_points, 5) float64
    dropped: int  # points discarded for non-increasing timestamps


def coincident(p1: GpsPoint, p2: GpsPoint) -> bool:
    """True when two fixes share exact coordinates (bearing is degenerate)."""
    return p1.lat == p2.lat and p1.lon == p2.lon


def haversine_distance(p1: GpsPoint, p2: GpsPoint) -> float:
    """Great-circle distance in meters on the mean-radius sphere."""
    dlat = p2.lat - p1.lat
    dlon = p2.lon - p1.lon
    a = (
        math.sin(dlat / 2.0) ** 2
        + math.cos(p1.lat) * math.cos(p2.lat) * math.sin(dlon / 2.0) ** 2
    )
    return EARTH_RADIUS_M * 2.0 * math.asin(min(1.0, math.sqrt(a)))


def bearing(p1: GpsPoint, p2: GpsPoint) -> float:
    """Initial bearing from p1 toward p2, degrees in [0, 360).

    North is 0, east is 90.  Coincident coordinates are degenerate and
    return 0.0; callers that care should test :func:`coincident` (the
    channel derivation repeats the previous bearing in that case).
    """
    if coincident(p1, p2):
        return 0.0
    dlon = p2.lon - p1.lon
    y = math.sin(dlon) * math.cos(p2.lat)
    x = math.cos(p1.lat) * math.sin(p2.lat) - math.sin(p1.lat) * math.cos(
        p2.lat
    ) * math.cos(dlon)
    return math.degrees(math.atan2(y, x)) % 360.0


def fold_bearing_delta(delta_deg: float) -> float:
    """Fold an absolute bearing change into [0, 180].

    A heading crossing north (350 -> 10 degrees) is a 20-degree turn, not
    340; the fold takes the short way around the circle.
    """
    d = abs(delta_deg) % 360.0
    return min(d, 360.0 - d)


def bearing_rate(
    p1: GpsPoint, p2: GpsPoint, p3: GpsPoint, *, fold: bool = True
) -> float:
    """Absolute change in bearing across three consecutive points, degrees.

    With ``fold=True`` (default) the change is folded into [0, 180];
    ``fold=False`` keeps the plain |b2 - b1| for exact-paper behavior.
    Degenerate legs (coincident fixes) repeat the surviving bearing, so a
    stationary stretch contributes zero turn.
    """
    b1 = None if coincident(p1, p2) else bearing(p1, p2)
    b2 = None if coincident(p2, p3) else bearing(p2, p3)
    if b1 is None and b2 is None:
        return 0.0
    if b1 is None:
        b1 = b2
    if b2 is None:
        b2 = b1
    delta = abs(b2 - b1)
    return fold_bearing_delta(delta) if fold else delta


def clean_points(points: Sequence[GpsPoint]) -> tuple[list[GpsPoint], int]:
    """Drop points whose timestamp does not strictly increase.

    Returns the surviving points and the number dropped.
    """
    kept: list[GpsPoint] = []
    dropped = 0
    for p in points:
        if kept and p.t <= kept[-1].t:
            dropped += 1
            continue
        kept.append(p)
    return kept, dropped


def derive_channels(
    points: Sequence[GpsPoint],
    *,
    fold_bearing: bool = True,
    clamps: ChannelClamps = DEFAULT_CLAMPS,
) -> ChannelResult:
    """Derive the five kinematic channels for every point of a trip.

    Per point i: ``dist_prev`` is the great-circle distance from point
    i-1, ``speed`` its time derivative, ``accel`` and ``jerk`` the next two
    finite differences, and ``bearing_rate`` the absolute change between
    the bearings of the two legs ending at i.  Leading entries a finite
    difference cannot reach are zero, consistent with the zero-padding of
    short segments.  Channels are clamped to physical bounds at output.

    Points with non-increasing timestamps are dropped first; fewer than 4
    survivors raise :class:`TripTooShortError`.
    """
    pts, dropped = clean_points(points)
    n = len(pts)
    if n < 4:
        raise TripTooShortError(
            f"trip too short: {n} usable points after dropping {dropped} "
            "(need at least 4)"
        )

    out = np.zeros((n, NUM_CHANNELS), dtype=np.float64)
    dt = np.empty(n)
    dt[0] = np.nan
    for i in range(1, n):
        dt[i] = pts[i].t - pts[i - 1].t

    dist = np.zeros(n)
    speed = np.zeros(n)
    accel = np.zeros(n)
    jerk = np.zeros(n)
    brate = np.zeros(n)

    for i in range(1, n):
        dist[i] = haversine_distance(pts[i - 1], pts[i])
        speed[i] = dist[i] / dt[i]
    # accel needs two speeds, jerk two accels; earlier slots stay zero
    for i in range(2, n):
        accel[i] = (speed[i] - speed[i - 1]) / dt[i]
    for i in range(3, n):
        jerk[i] = (accel[i] - accel[i - 1]) / dt[i]

    # Bearings per leg; a degenerate leg repeats the last defined bearing.
    last_b: float | None = None
    leg_b: list[float | None] = [None]  # leg_b[i] = bearing of leg (i-1, i)
    for i in range(1, n):
        if coincident(pts[i - 1], pts[i]):
            leg_b.append(last_b)
        else:
            last_b = bearing(pts[i - 1], pts[i])
            leg_b.append(last_b)
    for i in range(2, n):
        b1, b2 = leg_b[i - 1], leg_b[i]
        if b1 is None or b2 is None:
            brate[i] = 0.0
        else:
            delta = abs(b2 - b1)
            brate[i] = fold_bearing_delta(delta) if fold_bearing else delta

    out[:, 0] = np.clip(dist, 0.0, clamps.dist_max_m)
    out[:, 1] = np.clip(speed, 0.0, clamps.speed_max_ms)
    out[:, 2] = np.clip(accel, -clamps.accel_max_ms2, clamps.accel_max_ms2)
    out[:, 3] = np.clip(jerk, -clamps.jerk_max_ms3, clamps.jerk_max_ms3)
    out[:, 4] = brate
    return ChannelResult(out, dropped)
