"""Reconstruction-based EV detection.

Each window gets a score AS, the sum of squared reconstruction errors. A
consumer's score AT is the sum of its AS**2 over all windows, and the
consumer is flagged when AT exceeds a threshold calibrated as the mean AT of
the validation consumers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .losses import combined_loss
from .model import TaeModel, forward
from .pipeline import ConsumerSeries, ScalerParams, build_batch

SCORE_MODES = ("l2", "loss")
REPORT_HEADER = ["consumer_id", "n_windows", "at_score", "threshold", "decision"]


@dataclass
class AnomalyReport:
    consumer_id: str
    window_scores: list[float]
    total_score: float
    threshold: float
    decision: int

    @property
    def n_windows(self) -> int:
        return len(self.window_scores)


def window_score(x, xhat) -> float:
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise ShapeError(f"window shapes differ: {x.shape} vs {xhat.shape}")
    r = x - xhat
    return float(np.sum(r * r))


def consumer_score(window_scores: Sequence[float]) -> float:
    if len(window_scores) == 0:
        raise DataError("consumer has no window scores")
    total = 0.0
    for s in window_scores:
        total += float(s) * float(s)
    return total


def calibrate_threshold(validation_scores: Sequence[float]) -> float:
    """Mean consumer score over the (non-EV) validation consumers."""
    if len(validation_scores) == 0:
        raise DataError("threshold calibration needs at least one validation consumer")
    return float(np.mean(np.asarray(validation_scores, dtype=np.float64)))


def decide(total_score: float, threshold: float) -> int:
    # ties resolve to non-EV
    return int(total_score > threshold)


def score_windows(model: TaeModel, windows: np.ndarray, mode: str = "l2", chunk: int = 256) -> np.ndarray:
    """Per-window AS under ``model`` in inference mode.

    ``mode="l2"`` is the squared-error score. ``mode="loss"`` scores each
    window with the model's own training objective instead.
    """
    if mode not in SCORE_MODES:
        raise ConfigError(f"score mode must be one of {SCORE_MODES}, got {mode!r}")
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2 or windows.shape[1] != model.config.window_length:
        raise ConfigError(
            f"windows of length {windows.shape[-1]} do not match the model's "
            f"window_length {model.config.window_length}"
        )
    out = np.empty(len(windows))
    cfg = model.config
    for start in range(0, len(windows), chunk):
        x = windows[start : start + chunk]
        xhat = np.asarray(forward(model, x), dtype=np.float64)
        if mode == "l2":
            r = x - xhat
            out[start : start + len(x)] = np.sum(r * r, axis=1)
        else:
            for i in range(len(x)):
                out[start + i] = combined_loss(x[i : i + 1], xhat[i : i + 1], cfg.loss_weights, cfg.gamma)[0]
    return out


def classify_consumers(
    series: Sequence[ConsumerSeries],
    model: TaeModel,
    scaler: ScalerParams,
    threshold: float,
    smoothing: bool = True,
    mode: str = "l2",
) -> list[AnomalyReport]:
    """Score a whole population in one batched pass."""
    batch = build_batch(series, scaler, model.config.window_length, smoothing)
    scores = score_windows(model, batch.windows, mode)
    per: dict[str, list[float]] = {s.consumer_id: [] for s in series}
    for (cid, _), s in zip(batch.origin, scores):
        per[cid].append(float(s))
    reports = []
    for s in series:
        ws = per[s.consumer_id]
        at = consumer_score(ws)
        reports.append(AnomalyReport(s.consumer_id, ws, at, float(threshold), decide(at, threshold)))
    return reports


def classify_consumer(
    series: ConsumerSeries,
    model: TaeModel,
    scaler: ScalerParams,
    threshold: float,
    smoothing: bool = True,
    mode: str = "l2",
) -> AnomalyReport:
    """Classify one household: windows -> reconstruct -> AT -> decision."""
    return classify_consumers([series], model, scaler, threshold, smoothing, mode)[0]


def write_reports(reports: Sequence[AnomalyReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in reports:
            w.writerow([r.consumer_id, r.n_windows, format(r.total_score, ".17g"),
                        format(r.threshold, ".17g"), r.decision])


def write_window_scores(reports: Sequence[AnomalyReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["consumer_id", "window_index", "as_score"])
        for r in reports:
            for j, s in enumerate(r.window_scores):
                w.writerow([r.consumer_id, j, format(s, ".17g")])


def read_reports(path, window_scores_path=None) -> list[AnomalyReport]:
    scores: dict[str, list[float]] = {}
    if window_scores_path is not None:
        with open(window_scores_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                scores.setdefault(row["consumer_id"], []).append(float(row["as_score"]))
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REPORT_HEADER:
            raise DataError(f"{path}: expected header {','.join(REPORT_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(AnomalyReport(
                    row["consumer_id"],
                    scores.get(row["consumer_id"], []),
                    float(row["at_score"]),
                    float(row["threshold"]),
                    int(row["decision"]),
                ))
            except (TypeError, ValueError):
                raise DataError(f"{path}: line {lineno}: malformed report row") from None
    return out
