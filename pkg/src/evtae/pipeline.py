"""Meter-data ingestion and preprocessing: smooth -> scale -> windowize."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

CADENCE = timedelta(minutes=30)
CSV_HEADER = ["consumer_id", "timestamp", "kwh"]
DEFAULT_START = datetime(2021, 3, 1)


@dataclass
class ConsumerSeries:
    """Half-hourly kWh readings of one consumer. ``label`` is 1 for EV, 0 for
    non-EV and ``None`` when unknown."""

    consumer_id: str
    readings: np.ndarray
    label: int | None = None
    start: datetime = DEFAULT_START

    def __post_init__(self):
        self.readings = np.asarray(self.readings, dtype=np.float64)
        if self.readings.ndim != 1 or self.readings.size == 0:
            raise DataError(f"consumer {self.consumer_id}: readings must be a non-empty 1-D series")
        if not np.all(np.isfinite(self.readings)) or np.any(self.readings < 0):
            raise DataError(f"consumer {self.consumer_id}: readings must be finite and >= 0")
        if self.label not in (None, 0, 1):
            raise DataError(f"consumer {self.consumer_id}: label must be 0, 1 or None")


@dataclass
class SequenceBatch:
    windows: np.ndarray
    origin: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        if self.windows.ndim != 2:
            raise DataError(f"windows must be a 2-D array, got shape {self.windows.shape}")
        if len(self.origin) != len(self.windows):
            raise DataError("provenance list must have one entry per window")

    def __len__(self) -> int:
        return len(self.windows)

    @classmethod
    def concat(cls, batches: Sequence["SequenceBatch"], width: int) -> "SequenceBatch":
        if not batches:
            return cls(np.empty((0, width)), [])
        return cls(
            np.concatenate([b.windows for b in batches]),
            [o for b in batches for o in b.origin],
        )


@dataclass(frozen=True)
class ScalerParams:
    data_min: float
    data_max: float

    def __post_init__(self):
        if not self.data_max > self.data_min:
            raise DataError(
                f"scaler needs data_max > data_min, got ({self.data_min}, {self.data_max})"
            )


def ingest_csv(path) -> list[ConsumerSeries]:
    """Read ``consumer_id,timestamp,kwh`` rows into per-consumer series.

    Rows may come in any order. Consumers are returned sorted by id.
    """
    rows: dict[str, list[tuple[datetime, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise DataError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            cid, ts, kwh = row
            try:
                stamp = datetime.fromisoformat(ts)
                value = float(kwh)
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if not cid or not math.isfinite(value) or value < 0:
                raise DataError(f"{path}: line {lineno}: invalid consumer id or kWh value")
            rows.setdefault(cid, []).append((stamp, value))

    out = []
    for cid in sorted(rows):
        readings = sorted(rows[cid])
        stamps = [r[0] for r in readings]
        for a, b in zip(stamps, stamps[1:]):
            if a == b:
                raise DataError(f"consumer {cid}: duplicate timestamp {a.isoformat()}")
            if b - a != CADENCE:
                raise DataError(
                    f"consumer {cid}: non-uniform cadence between {a.isoformat()} and {b.isoformat()}"
                )
        out.append(ConsumerSeries(cid, np.array([r[1] for r in readings]), None, stamps[0]))
    return out


def write_csv(series: Iterable[ConsumerSeries], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in series:
            for i, v in enumerate(s.readings):
                w.writerow([s.consumer_id, (s.start + i * CADENCE).isoformat(), f"{v:.6f}"])


def read_labels(path) -> dict[str, int]:
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                label = int(row["label"])
            except (KeyError, TypeError, ValueError):
                raise DataError(f"{path}: line {lineno}: bad label row") from None
            if label not in (0, 1):
                raise DataError(f"{path}: line {lineno}: label must be 0 or 1")
            labels[row["consumer_id"]] = label
    return labels


def write_labels(series: Iterable[ConsumerSeries], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["consumer_id", "label"])
        for s in series:
            w.writerow([s.consumer_id, "" if s.label is None else s.label])


def attach_labels(series: list[ConsumerSeries], labels: dict[str, int]) -> list[ConsumerSeries]:
    for s in series:
        s.label = labels.get(s.consumer_id, s.label)
    return series


def smooth(readings) -> np.ndarray:
    """Sum non-overlapping pairs, halving the series; a trailing odd sample is dropped."""
    x = np.asarray(readings, dtype=np.float64)
    if x.size < 2:
        raise DataError("smoothing needs at least two readings")
    n = x.size // 2
    return x[0 : 2 * n : 2] + x[1 : 2 * n : 2]


def fit_scaler(training: Iterable) -> ScalerParams:
    """Min-max parameters over every reading of the training series."""
    lo, hi = math.inf, -math.inf
    for r in training:
        r = np.asarray(getattr(r, "readings", r))
        if r.size:
            lo = min(lo, float(r.min()))
            hi = max(hi, float(r.max()))
    if not math.isfinite(lo):
        raise DataError("cannot fit scaler on an empty training set")
    if not hi > lo:
        raise DataError("training data is constant; min-max scaling is undefined")
    return ScalerParams(lo, hi)


def apply_scaler(readings, params: ScalerParams) -> np.ndarray:
    x = np.asarray(readings, dtype=np.float64)
    return np.clip((x - params.data_min) / (params.data_max - params.data_min), 0.0, 1.0)


def invert_scaler(scaled, params: ScalerParams) -> np.ndarray:
    return np.asarray(scaled, dtype=np.float64) * (params.data_max - params.data_min) + params.data_min


def windowize(readings, window: int, consumer_id: str = "?") -> np.ndarray:
    """Split into floor(T / W) consecutive non-overlapping windows."""
    if window <= 0:
        raise DataError("window length must be positive")
    x = np.asarray(readings, dtype=np.float64)
    m = x.size // window
    if m == 0:
        raise DataError(
            f"consumer {consumer_id}: series of length {x.size} is shorter than one window ({window})"
        )
    return x[: m * window].reshape(m, window)


def smoothed_readings(series: ConsumerSeries, smoothing: bool = True) -> np.ndarray:
    return smooth(series.readings) if smoothing else series.readings


def preprocess(
    series: ConsumerSeries, scaler: ScalerParams, window: int, smoothing: bool = True
) -> SequenceBatch:
    """Fixed pipeline order: smooth, then scale, then windowize."""
    x = smoothed_readings(series, smoothing)
    w = windowize(apply_scaler(x, scaler), window, series.consumer_id)
    return SequenceBatch(w, [(series.consumer_id, j) for j in range(len(w))])


def build_batch(
    series: Sequence[ConsumerSeries], scaler: ScalerParams, window: int, smoothing: bool = True
) -> SequenceBatch:
    return SequenceBatch.concat([preprocess(s, scaler, window, smoothing) for s in series], window)


def fit_scaler_on(series: Sequence[ConsumerSeries], smoothing: bool = True) -> ScalerParams:
    """Fit on the smoothed readings so scaling sees the same values the model will."""
    return fit_scaler(smoothed_readings(s, smoothing) for s in series)


def write_windows(batch: SequenceBatch, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["consumer_id", "window_index"] + [f"t{i}" for i in range(batch.windows.shape[1])])
        for (cid, j), row in zip(batch.origin, batch.windows):
            w.writerow([cid, j] + [format(v, ".17g") for v in row])
