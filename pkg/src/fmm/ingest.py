"""Telemetry loading and standardization.

Positions are centered per coordinate and scaled by the pooled standard
deviation of both coordinates, so the aspect ratio of the track is kept.
Time is mapped affinely from the observed ``[t_min, t_max]`` onto ``[0, 1]``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class TrackError(ValueError):
    """Raised for malformed or degenerate telemetry input."""


@dataclass(frozen=True)
class TelemetryRecord:
    time: float
    x: float
    y: float


@dataclass(frozen=True)
class Standardization:
    mean_x: float
    mean_y: float
    pooled_sd: float
    t_min: float
    t_max: float

    def __post_init__(self):
        if not self.pooled_sd > 0:
            raise TrackError(f"pooled_sd must be positive, got {self.pooled_sd}")
        if not self.t_max > self.t_min:
            raise TrackError("t_max must exceed t_min")

    @classmethod
    def identity(cls) -> "Standardization":
        return cls(0.0, 0.0, 1.0, 0.0, 1.0)

    def time_to_unit(self, t):
        return (np.asarray(t, dtype=float) - self.t_min) / (self.t_max - self.t_min)

    def time_from_unit(self, u):
        return self.t_min + np.asarray(u, dtype=float) * (self.t_max - self.t_min)


@dataclass(frozen=True)
class Track:
    """Observation times and 2-D positions on the model scale."""

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        positions = np.asarray(self.positions, dtype=float)
        if times.ndim != 1 or positions.shape != (times.size, 2):
            raise TrackError(
                f"positions must be (n, 2) matching times; got {positions.shape} for n={times.size}"
            )
        if np.any(np.diff(times) <= 0):
            raise TrackError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)

    @property
    def n(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class StandardizedTrack(Track):
    std: Standardization = Standardization.identity()


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise TrackError(f"row {row}: cannot parse {column}={text!r}") from None
    if not np.isfinite(value):
        raise TrackError(f"row {row}: non-finite {column}")
    return value


def load_track(path, format: str = "csv") -> list[TelemetryRecord]:
    """Read ``time,x,y`` records from a CSV file with a header row.

    Records are returned sorted by time. Row numbers in error messages count
    the header as row 1.
    """
    if format != "csv":
        raise TrackError(f"unsupported format {format!r}")
    path = Path(path)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TrackError(f"{path}: empty file")
        header = [h.strip().lower() for h in header]
        try:
            cols = [header.index(name) for name in ("time", "x", "y")]
        except ValueError:
            raise TrackError(f"{path}: header must contain time,x,y; got {header}") from None
        for row_num, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise TrackError(f"row {row_num}: expected {len(header)} fields, got {len(row)}")
            t, x, y = (_parse_float(row[c], row_num, name) for c, name in zip(cols, ("time", "x", "y")))
            records.append(TelemetryRecord(t, x, y))

    records.sort(key=lambda r: r.time)
    for a, b in zip(records, records[1:]):
        if a.time == b.time:
            raise TrackError(f"duplicate timestamp {a.time}")
    if len(records) < 3:
        raise TrackError(f"need at least 3 records, got {len(records)}")
    return records


def standardize(records) -> StandardizedTrack:
    """Center and scale positions, and map times onto ``[0, 1]``."""
    records = sorted(records, key=lambda r: r.time)
    times = np.array([r.time for r in records], dtype=float)
    xy = np.array([[r.x, r.y] for r in records], dtype=float)
    if times.size < 2 or np.any(np.diff(times) <= 0):
        raise TrackError("times must be strictly increasing with at least two records")
    if not np.all(np.isfinite(xy)):
        raise TrackError("positions must be finite")

    means = xy.mean(axis=0)
    centered = xy - means
    dof = 2 * times.size - 2
    pooled_sd = float(np.sqrt(np.sum(centered**2) / dof))
    if not pooled_sd > 0:
        raise TrackError("zero pooled variance: all positions identical")

    std = Standardization(float(means[0]), float(means[1]), pooled_sd, float(times[0]), float(times[-1]))
    unit = std.time_to_unit(times)
    # exact endpoints regardless of rounding in the affine map
    unit[0], unit[-1] = 0.0, 1.0
    return StandardizedTrack(unit, centered / pooled_sd, std)


def destandardize(positions, std: Standardization) -> np.ndarray:
    """Map model-scale positions (k x 2) back to raw units."""
    positions = np.asarray(positions, dtype=float)
    if not np.all(np.isfinite(positions)):
        raise TrackError("positions must be finite")
    return positions * std.pooled_sd + np.array([std.mean_x, std.mean_y])


def track_to_records(times, positions) -> list[TelemetryRecord]:
    return [TelemetryRecord(float(t), float(p[0]), float(p[1])) for t, p in zip(times, positions)]
