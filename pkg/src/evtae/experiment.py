"""End-to-end experiment: split, preprocess, train, calibrate, classify, score."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import detect, evaluate, model as tae
from .errors import ConfigError, DataError
from .losses import LossWeights
from .pipeline import ConsumerSeries, ScalerParams, build_batch, fit_scaler_on

log = logging.getLogger(__name__)

# the four mixed (rec, dtw, cos) weightings compared in the ablation
MIXED_LOSS_GRID = (
    LossWeights(1.0, 0.0, 1.0),
    LossWeights(1.0, 1.0, 0.0),
    LossWeights(0.0, 1.0, 1.0),
    LossWeights(1.0, 1.0, 1.0),
)
SINGLE_LOSS_GRID = (
    LossWeights(0.0, 0.0, 1.0),
    LossWeights(0.0, 1.0, 0.0),
    LossWeights(1.0, 0.0, 0.0),
)


@dataclass(frozen=True)
class SplitConfig:
    """Fractions apply to non-EV consumers only; every EV consumer is a test case.

    ``val_fraction`` is taken from what remains after the test split.
    """

    test_fraction: float = 0.3
    val_fraction: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.test_fraction < 1 and 0 <= self.val_fraction < 1):
            raise ConfigError("split fractions must lie in [0, 1)")


# 160 train / 40 validation / 60 test out of 260 non-EV consumers
SMALL_SPLIT = SplitConfig(test_fraction=60 / 260, val_fraction=40 / 200)


@dataclass
class Split:
    train: list[ConsumerSeries]
    val: list[ConsumerSeries]
    test: list[ConsumerSeries]

    def assignments(self) -> list[tuple[str, int, str]]:
        rows = [(s.consumer_id, s.label, name)
                for name, group in (("train", self.train), ("val", self.val), ("test", self.test))
                for s in group]
        return sorted(rows)


def split_consumers(series: Sequence[ConsumerSeries], config: SplitConfig) -> Split:
    if any(s.label is None for s in series):
        raise DataError("every consumer needs a label to build an experiment split")
    non_ev = sorted((s for s in series if s.label == 0), key=lambda s: s.consumer_id)
    ev = sorted((s for s in series if s.label == 1), key=lambda s: s.consumer_id)
    rng = np.random.default_rng(config.seed)
    order = [non_ev[i] for i in rng.permutation(len(non_ev))]
    n_test = int(round(len(order) * config.test_fraction))
    test, rest = order[:n_test], order[n_test:]
    n_val = int(round(len(rest) * config.val_fraction))
    val, train = rest[:n_val], rest[n_val:]
    if not train:
        raise DataError("split leaves no non-EV consumers for training")
    by_id = lambda s: s.consumer_id  # noqa: E731
    return Split(sorted(train, key=by_id), sorted(val, key=by_id), sorted(test + ev, key=by_id))


@dataclass(frozen=True)
class ExperimentConfig:
    model: tae.TaeConfig = field(default_factory=tae.TaeConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    smoothing: bool = True
    score_mode: str = "l2"


@dataclass
class ExperimentResult:
    eval: evaluate.EvalReport
    model: tae.TaeModel
    train_report: tae.TrainReport
    scaler: ScalerParams
    threshold: float
    split: Split
    reports: list[detect.AnomalyReport]
    val_reports: list[detect.AnomalyReport]

    @property
    def train_seconds(self) -> float:
        return self.train_report.wall_time_seconds

    def labels(self) -> list[int]:
        by_id = {s.consumer_id: s.label for s in self.split.test}
        return [by_id[r.consumer_id] for r in self.reports]


def fit_detector(
    train: Sequence[ConsumerSeries],
    val: Sequence[ConsumerSeries],
    config: ExperimentConfig,
) -> tuple[tae.TaeModel, tae.TrainReport, ScalerParams, float, list[detect.AnomalyReport]]:
    """Train on non-EV consumers and calibrate the threshold on the validation ones.

    The returned model carries scaler, threshold and smoothing flag in its
    calibration record so it can be used for detection on its own.
    """
    if any(s.label == 1 for s in list(train) + list(val)):
        raise DataError("training and validation consumers must all be non-EV")
    if not val:
        raise DataError("threshold calibration needs validation consumers")
    cfg = config.model
    scaler = fit_scaler_on(train, config.smoothing)
    x_train = build_batch(train, scaler, cfg.window_length, config.smoothing)
    x_val = build_batch(val, scaler, cfg.window_length, config.smoothing)
    model, report = tae.train(x_train, cfg, x_val)
    val_reports = detect.classify_consumers(val, model, scaler, 0.0, config.smoothing, config.score_mode)
    threshold = detect.calibrate_threshold([r.total_score for r in val_reports])
    for r in val_reports:
        r.threshold, r.decision = threshold, detect.decide(r.total_score, threshold)
    model = tae.with_calibration(
        model,
        threshold=threshold,
        scaler_min=scaler.data_min,
        scaler_max=scaler.data_max,
        smoothing=float(config.smoothing),
    )
    return model, report, scaler, threshold, val_reports


def run_experiment(
    series: Sequence[ConsumerSeries], config: ExperimentConfig, out_dir=None
) -> ExperimentResult:
    split = split_consumers(series, config.split)
    if not any(s.label == 1 for s in split.test):
        raise DataError("test split has no EV consumers; AUC is undefined")
    model, report, scaler, threshold, val_reports = fit_detector(split.train, split.val, config)
    reports = detect.classify_consumers(
        split.test, model, scaler, threshold, config.smoothing, config.score_mode
    )
    labels = {s.consumer_id: s.label for s in split.test}
    y = [labels[r.consumer_id] for r in reports]
    ev = evaluate.evaluate([r.decision for r in reports], [r.total_score for r in reports], y)
    log.info("experiment: AUC %.4f F1 %s train %.1fs", ev.auc, evaluate.pct(ev.f1), report.wall_time_seconds)
    result = ExperimentResult(ev, model, report, scaler, threshold, split, reports, val_reports)
    if out_dir is not None:
        write_experiment(result, out_dir)
    return result


def write_train_report(report: tae.TrainReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, tl in enumerate(report.train_loss):
            vl = report.val_loss[i] if i < len(report.val_loss) else ""
            w.writerow([i + 1, format(tl, ".17g"), vl if vl == "" else format(vl, ".17g")])


def write_split(split: Split, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["consumer_id", "label", "split"])
        w.writerows(split.assignments())


def write_score_histogram(scores: Sequence[float], threshold: float, path, bins: int = 20) -> None:
    counts, edges = np.histogram(np.asarray(scores, dtype=np.float64), bins=bins)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count", "threshold"])
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            w.writerow([format(lo, ".17g"), format(hi, ".17g"), int(c), format(threshold, ".17g")])


def write_experiment(result: ExperimentResult, out_dir) -> Path:
    """Every file written here is a deterministic function of data and config.

    Wall-clock timings are deliberately left out of the files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tae.save(result.model, out / "model.tae")
    write_train_report(result.train_report, out / "train_report.csv")
    write_split(result.split, out / "split.csv")
    detect.write_reports(result.reports, out / "reports.csv")
    detect.write_window_scores(result.reports, out / "window_scores.csv")
    detect.write_reports(result.val_reports, out / "val_reports.csv")
    write_score_histogram([r.total_score for r in result.val_reports], result.threshold,
                          out / "val_score_histogram.csv")
    evaluate.write_eval_csv(result.eval, out / "eval.csv")
    evaluate.write_roc_csv(result.eval.roc_points, out / "roc.csv")
    (out / "eval.txt").write_text(
        evaluate.format_table([("TAE", result.eval)]) + "\n"
        + f"confusion: tp={result.eval.tp} fp={result.eval.fp} tn={result.eval.tn} fn={result.eval.fn}\n",
        encoding="utf-8",
    )
    return out


@dataclass
class AblationRow:
    weights: LossWeights
    gamma: float
    eval: evaluate.EvalReport
    train_seconds: float


def run_ablation(
    series: Sequence[ConsumerSeries],
    config: ExperimentConfig,
    grid: Sequence[tuple[LossWeights, float]],
) -> list[AblationRow]:
    """One experiment per (weights, gamma) entry, all with the same seed."""
    rows = []
    for weights, gamma in grid:
        cfg = replace(config, model=replace(config.model, loss_weights=weights, gamma=gamma))
        res = run_experiment(series, cfg)
        rows.append(AblationRow(weights, gamma, res.eval, res.train_seconds))
    return rows


def loss_label(w: LossWeights) -> str:
    singles = {(1.0, 0.0, 0.0): "L_rec", (0.0, 1.0, 0.0): "L_DTW", (0.0, 0.0, 1.0): "L_cos"}
    return singles.get(w.as_tuple(), f"l1={w.rec:g};l2={w.dtw:g};l3={w.cos:g}")


def write_ablation(rows: Sequence[AblationRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loss", "lambda1", "lambda2", "lambda3", "gamma",
                    "precision_pct", "recall_pct", "f1_pct", "auc_pct", "train_seconds"])
        for r in rows:
            w.writerow([loss_label(r.weights), f"{r.weights.rec:g}", f"{r.weights.dtw:g}",
                        f"{r.weights.cos:g}", f"{r.gamma:g}",
                        evaluate.pct(r.eval.precision), evaluate.pct(r.eval.recall),
                        evaluate.pct(r.eval.f1), evaluate.pct(r.eval.auc), f"{r.train_seconds:.2f}"])
