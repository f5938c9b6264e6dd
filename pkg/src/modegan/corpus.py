"""Trajectory corpus handling: CSV ingestion, trip splitting, segmentation.

The points CSV schema is ``trip_id,t_epoch_s,lat_deg,lon_deg,mode`` with
mode one of walk/bike/transit/car or empty for unlabeled rows.  Streams are
split into trips at time gaps, trips are turned into fixed-size 70x5
segments (zero-padded tails), and segments are normalized and dealt into
cross-validation folds grouped by source trip.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import geokin
from .geokin import ChannelClamps, DEFAULT_CLAMPS, GpsPoint, TripTooShortError

SEG_LEN = 70
MIN_POINTS = 10
GAP_SECONDS = 180.0

CSV_HEADER = "trip_id,t_epoch_s,lat_deg,lon_deg,mode"


class CorpusFormatError(ValueError):
    """Malformed points CSV (bad header, row, coordinate, or mode)."""


class Mode(enum.IntEnum):
    """The four real transport classes; index 4 is reserved for fakes."""

    walk = 0
    bike = 1
    transit = 2
    car = 3


FAKE_CLASS_INDEX = len(Mode)  # 4
NUM_MODES = len(Mode)

_MODE_BY_NAME = {m.name: m for m in Mode}


@dataclass
class Trip:
    trip_id: str
    points: list[GpsPoint]
    label: Mode | None = None


@dataclass
class Segment:
    """A fixed-size 70x5 slice of one trip.

    Rows past ``valid_len`` are exactly zero; columns follow
    :data:`geokin.CHANNEL_ORDER`.
    """

    values: np.ndarray  # (SEG_LEN, 5) float32
    valid_len: int
    label: Mode | None
    source_trip: str


@dataclass(frozen=True)
class NormStats:
    """Per-channel mean / population stddev fitted on training data."""

    mean: np.ndarray  # (5,)
    std: np.ndarray  # (5,), floored at 1e-8

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64))


@dataclass
class FoldAssignment:
    k: int
    fold_of_segment: np.ndarray  # (n_segments,) int
    seed: int

    def val_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_segment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_segment != fold)


def parse_points_csv(data: bytes | str) -> list[tuple[str, GpsPoint, Mode | None]]:
    """Parse a points CSV into (trip_id, point, label) rows in file order.

    Degrees are converted to radians here.  Any malformed row raises
    :class:`CorpusFormatError` with its line number.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != CSV_HEADER:
        raise CorpusFormatError(f"line 1: expected header '{CSV_HEADER}'")

    rows: list[tuple[str, GpsPoint, Mode | None]] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.strip() == "":
            continue
        fields = line.split(",")
        if len(fields) != 5:
            raise CorpusFormatError(
                f"line {lineno}: expected 5 fields, got {len(fields)}"
            )
        trip_id, t_s, lat_s, lon_s, mode_s = (f.strip() for f in fields)
        if not trip_id:
            raise CorpusFormatError(f"line {lineno}: empty trip_id")
        try:
            t = float(t_s)
            lat = float(lat_s)
            lon = float(lon_s)
        except ValueError as exc:
            raise CorpusFormatError(f"line {lineno}: {exc}") from None
        if not math.isfinite(t):
            raise CorpusFormatError(f"line {lineno}: non-finite timestamp")
        try:
            point = GpsPoint.from_degrees(lat, lon, t)
        except ValueError as exc:
            raise CorpusFormatError(f"line {lineno}: {exc}") from None
        if mode_s == "":
            label = None
        elif mode_s in _MODE_BY_NAME:
            label = _MODE_BY_NAME[mode_s]
        else:
            raise CorpusFormatError(f"line {lineno}: unknown mode '{mode_s}'")
        rows.append((trip_id, point, label))
    return rows


def write_points_csv(trips: Iterable[Trip]) -> str:
    """Serialize trips back to the points CSV schema (LF line endings)."""
    out = [CSV_HEADER]
    for trip in trips:
        mode_s = trip.label.name if trip.label is not None else ""
        for p in trip.points:
            out.append(
                f"{trip.trip_id},{p.t!r},{math.degrees(p.lat)!r},"
                f"{math.degrees(p.lon)!r},{mode_s}"
            )
    return "\n".join(out) + "\n"


def split_trips(
    rows: Sequence[tuple[str, GpsPoint, Mode | None]],
    gap_s: float = GAP_SECONDS,
) -> list[Trip]:
    """Split per-stream point sequences into trips at time gaps.

    A new trip starts whenever the time step strictly exceeds ``gap_s``
    (a gap of exactly ``gap_s`` stays in one trip).  A trip keeps its rows'
    label only when it is uniform; mixed or partially missing labels drop
    to None.  Trips split out of one stream get ids ``<stream>#<n>``.
    """
    by_stream: dict[str, list[tuple[GpsPoint, Mode | None]]] = {}
    for trip_id, point, label in rows:
        by_stream.setdefault(trip_id, []).append((point, label))

    trips: list[Trip] = []
    for stream_id, entries in by_stream.items():
        chunks: list[list[tuple[GpsPoint, Mode | None]]] = [[entries[0]]]
        for prev, cur in zip(entries, entries[1:]):
            if cur[0].t - prev[0].t > gap_s:
                chunks.append([])
            chunks[-1].append(cur)
        for i, chunk in enumerate(chunks):
            labels = {label for _, label in chunk}
            label = labels.pop() if len(labels) == 1 else None
            trip_id = stream_id if len(chunks) == 1 else f"{stream_id}#{i}"
            trips.append(Trip(trip_id, [p for p, _ in chunk], label))
    return trips


def segmentize(
    trip: Trip,
    seg_len: int = SEG_LEN,
    min_points: int = MIN_POINTS,
    *,
    fold_bearing: bool = True,
    clamps: ChannelClamps = DEFAULT_CLAMPS,
) -> list[Segment]:
    """Chunk a trip's channel matrix into fixed-size segments.

    Consecutive non-overlapping windows of ``seg_len`` rows; the final
    partial window is zero-padded, and windows shorter than ``min_points``
    are discarded.  Trips too short to derive channels yield an empty list.
    """
    try:
        channels, _ = geokin.derive_channels(
            trip.points, fold_bearing=fold_bearing, clamps=clamps
        )
    except TripTooShortError:
        return []
    return segmentize_channels(
        channels, trip.trip_id, trip.label, seg_len=seg_len, min_points=min_points
    )


def segmentize_channels(
    channels: np.ndarray,
    trip_id: str,
    label: Mode | None,
    *,
    seg_len: int = SEG_LEN,
    min_points: int = MIN_POINTS,
) -> list[Segment]:
    segments: list[Segment] = []
    n = channels.shape[0]
    for start in range(0, n, seg_len):
        window = channels[start : start + seg_len]
        valid = window.shape[0]
        if valid < min_points:
            continue
        values = np.zeros((seg_len, geokin.NUM_CHANNELS), dtype=np.float32)
        values[:valid] = window.astype(np.float32)
        segments.append(Segment(values, valid, label, trip_id))
    return segments


def trips_to_segments(
    trips: Iterable[Trip],
    seg_len: int = SEG_LEN,
    min_points: int = MIN_POINTS,
    *,
    fold_bearing: bool = True,
    clamps: ChannelClamps = DEFAULT_CLAMPS,
) -> list[Segment]:
    out: list[Segment] = []
    for trip in trips:
        out.extend(
            segmentize(
                trip, seg_len, min_points, fold_bearing=fold_bearing, clamps=clamps
            )
        )
    return out


def _valid_rows(segments: Sequence[Segment]) -> np.ndarray:
    rows = [seg.values[: seg.valid_len] for seg in segments]
    return np.concatenate(rows, axis=0).astype(np.float64)


def fit_norm_stats(segments: Sequence[Segment]) -> NormStats:
    """Per-channel mean/std over valid rows only (padding rows excluded)."""
    if not segments:
        raise ValueError("cannot fit normalization stats on an empty corpus")
    rows = _valid_rows(segments)
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), 1e-8)
    return NormStats(mean, std)


def normalize(segment: Segment, stats: NormStats) -> Segment:
    """Z-score the valid rows per channel; padding rows stay exactly zero."""
    values = np.zeros_like(segment.values)
    v = segment.valid_len
    values[:v] = (
        (segment.values[:v].astype(np.float64) - stats.mean) / stats.std
    ).astype(np.float32)
    return Segment(values, segment.valid_len, segment.label, segment.source_trip)


def normalize_all(segments: Sequence[Segment], stats: NormStats) -> list[Segment]:
    return [normalize(seg, stats) for seg in segments]


def assign_folds(segments: Sequence[Segment], k: int = 5, seed: int = 0) -> FoldAssignment:
    """Deal source trips round-robin into k folds after a seeded shuffle.

    All of a trip's segments share its fold, so near-identical consecutive
    segments never leak between training and validation.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    trip_ids: list[str] = []
    seen: set[str] = set()
    for seg in segments:
        if seg.source_trip not in seen:
            seen.add(seg.source_trip)
            trip_ids.append(seg.source_trip)
    if len(trip_ids) < k:
        raise ValueError(f"only {len(trip_ids)} trips for {k} folds")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(trip_ids))
    fold_of_trip = {trip_ids[j]: i % k for i, j in enumerate(order)}
    fold_of_segment = np.array(
        [fold_of_trip[seg.source_trip] for seg in segments], dtype=np.int64
    )
    return FoldAssignment(k, fold_of_segment, seed)
