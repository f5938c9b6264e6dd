"""Segment bundle files: a JSON sidecar plus a raw float32 blob.

``<name>.json`` carries counts, labels, valid lengths, channel order,
source trips, and optional normalization stats; ``<name>.f32`` holds
little-endian 32-bit floats, row-major ``[segment][row][channel]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import geokin
from .corpus import Mode, NormStats, Segment

FORMAT_SEG_LEN = 70
FORMAT_CHANNELS = 5


class BundleFormatError(ValueError):
    """Sidecar/blob mismatch or malformed bundle metadata."""


@dataclass
class SegmentBundle:
    """In-memory form of a bundle: stacked arrays instead of Segment objects."""

    values: np.ndarray  # (n, seg_len, channels) float32
    labels: np.ndarray  # (n,) int64, -1 for unlabeled
    valid_lens: np.ndarray  # (n,) int64
    source_trips: list[str]
    norm_stats: NormStats | None = None

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def seg_len(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @classmethod
    def from_segments(
        cls, segments: Sequence[Segment], norm_stats: NormStats | None = None
    ) -> "SegmentBundle":
        if not segments:
            raise ValueError("empty segment list")
        values = np.stack([s.values for s in segments]).astype(np.float32)
        labels = np.array(
            [s.label.value if s.label is not None else -1 for s in segments],
            dtype=np.int64,
        )
        valid_lens = np.array([s.valid_len for s in segments], dtype=np.int64)
        trips = [s.source_trip for s in segments]
        return cls(values, labels, valid_lens, trips, norm_stats)

    def to_segments(self) -> list[Segment]:
        out = []
        for i in range(len(self)):
            label = Mode(int(self.labels[i])) if self.labels[i] >= 0 else None
            out.append(
                Segment(self.values[i], int(self.valid_lens[i]), label,
                        self.source_trips[i])
            )
        return out


def write_bundle(base: str | Path, bundle: SegmentBundle) -> tuple[Path, Path]:
    """Write ``<base>.json`` and ``<base>.f32``; returns the two paths."""
    base = Path(base)
    sidecar = {
        "segment_count": len(bundle),
        "seg_len": bundle.seg_len,
        "channels": bundle.channels,
        "labels": [int(v) for v in bundle.labels],
        "valid_lens": [int(v) for v in bundle.valid_lens],
        "channel_order": list(geokin.CHANNEL_ORDER[: bundle.channels]),
        "source_trips": list(bundle.source_trips),
    }
    if bundle.norm_stats is not None:
        sidecar["norm_stats"] = bundle.norm_stats.to_dict()
    json_path = base.with_suffix(".json")
    blob_path = base.with_suffix(".f32")
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    blob = np.ascontiguousarray(bundle.values, dtype="<f4")
    blob_path.write_bytes(blob.tobytes())
    return json_path, blob_path


def read_bundle(base: str | Path) -> SegmentBundle:
    base = Path(base)
    json_path = base.with_suffix(".json")
    blob_path = base.with_suffix(".f32")
    try:
        sidecar = json.loads(json_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleFormatError(f"cannot read sidecar {json_path}: {exc}") from None
    try:
        n = int(sidecar["segment_count"])
        seg_len = int(sidecar["seg_len"])
        channels = int(sidecar["channels"])
        labels = np.asarray(sidecar["labels"], dtype=np.int64)
        valid_lens = np.asarray(sidecar["valid_lens"], dtype=np.int64)
        source_trips = [str(t) for t in sidecar.get("source_trips", [""] * n)]
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleFormatError(f"malformed sidecar {json_path}: {exc}") from None
    if labels.shape != (n,) or valid_lens.shape != (n,) or len(source_trips) != n:
        raise BundleFormatError(f"sidecar {json_path}: array lengths disagree")

    raw = blob_path.read_bytes()
    expected = n * seg_len * channels * 4
    if len(raw) != expected:
        raise BundleFormatError(
            f"blob {blob_path}: {len(raw)} bytes, expected {expected}"
        )
    values = np.frombuffer(raw, dtype="<f4").reshape(n, seg_len, channels).copy()
    stats = None
    if "norm_stats" in sidecar:
        stats = NormStats.from_dict(sidecar["norm_stats"])
    return SegmentBundle(values, labels, valid_lens, source_trips, stats)
