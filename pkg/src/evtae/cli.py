"""``evtae`` command-line driver.

Subcommands: gen, preprocess, train, detect, eval, ablate, gradcheck. Every
command writes its outputs plus a resolved ``config.ini`` into ``--out-dir``.
Exit codes: 0 success, 1 failed check, 2 config, 3 data, 4 numeric,
5 model-file format.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from . import detect, evaluate, experiment, gradsuite, pipeline, synth
from . import model as tae
from .errors import ConfigError, DataError, EvtaeError

log = logging.getLogger("evtae")

DATA_FILE = "consumption.csv"
LABELS_FILE = "labels.csv"
INJECTIONS_FILE = "injections.csv"


def _labels_path(data: Path, explicit: str | None) -> Path | None:
    if explicit:
        return Path(explicit)
    sibling = data.parent / LABELS_FILE
    return sibling if sibling.exists() else None


def _load_series(data: str, labels: str | None, required: bool = False) -> list[pipeline.ConsumerSeries]:
    path = Path(data)
    series = pipeline.ingest_csv(path)
    lpath = _labels_path(path, labels)
    if lpath is None:
        if required:
            raise DataError(f"no labels for {path}; pass --labels or place {LABELS_FILE} next to it")
        return series
    return pipeline.attach_labels(series, pipeline.read_labels(lpath))


def _non_ev(series: list[pipeline.ConsumerSeries]) -> list[pipeline.ConsumerSeries]:
    """Unlabelled consumers are assumed to be non-EV training households."""
    if all(s.label is None for s in series):
        log.warning("no labels given; treating every consumer as non-EV")
        return [replace(s, label=0) for s in series]
    return [s for s in series if s.label == 0]


def cmd_gen(run: cfgmod.RunConfig, args) -> int:
    out = run.out_dir
    out.mkdir(parents=True, exist_ok=True)
    series, injections = synth.generate(run.synth_config(), workers=run["workers"])
    pipeline.write_csv(series, out / DATA_FILE)
    pipeline.write_labels(series, out / LABELS_FILE)
    synth.write_injection_log(injections, out / INJECTIONS_FILE)
    n_ev = sum(s.label == 1 for s in series)
    n_events = sum(len(v) for v in injections.values())
    print(f"generated {len(series)} consumers ({len(series) - n_ev} non-EV, {n_ev} EV), "
          f"{n_events} charging events -> {out}")
    return 0


def cmd_preprocess(run: cfgmod.RunConfig, args) -> int:
    series = _load_series(args.data, args.labels)
    fit_on = _non_ev(series) or series
    scaler = pipeline.fit_scaler_on(fit_on, run["smoothing"])
    batch = pipeline.build_batch(series, scaler, run.tae_config().window_length, run["smoothing"])
    out = run.out_dir
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_windows(batch, out / "windows.csv")
    with open(out / "scaler.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["data_min", "data_max"])
        w.writerow([format(scaler.data_min, ".17g"), format(scaler.data_max, ".17g")])
    print(f"{len(batch.windows)} windows of length {batch.windows.shape[1]} from {len(series)} consumers")
    return 0


def cmd_train(run: cfgmod.RunConfig, args) -> int:
    series = _non_ev(_load_series(args.data, args.labels))
    if not series:
        raise DataError("training needs non-EV consumers")
    exp = run.experiment_config()
    split = experiment.split_consumers(series, exp.split)
    model, report, _, threshold, val_reports = experiment.fit_detector(split.train, split.val, exp)
    out = run.out_dir
    out.mkdir(parents=True, exist_ok=True)
    tae.save(model, out / "model.tae")
    experiment.write_train_report(report, out / "train_report.csv")
    experiment.write_split(split, out / "split.csv")
    detect.write_reports(val_reports, out / "val_reports.csv")
    experiment.write_score_histogram([r.total_score for r in val_reports], threshold,
                                     out / "val_score_histogram.csv")
    last = f"{report.train_loss[-1]:.6g}" if report.train_loss else "n/a"
    print(f"trained on {len(split.train)} consumers for {exp.model.epochs} epochs "
          f"(final train loss {last}, threshold {threshold:.6g}) in {report.wall_time_seconds:.2f} s")
    return 0


def cmd_detect(run: cfgmod.RunConfig, args) -> int:
    model = tae.load(args.model)
    cal = model.calibration
    if "scaler_min" not in cal or "scaler_max" not in cal:
        raise ConfigError(f"{args.model} has no scaler calibration")
    scaler = pipeline.ScalerParams(cal["scaler_min"], cal["scaler_max"])
    smoothing = bool(cal.get("smoothing", float(run["smoothing"])))
    mode = run["score_mode"]
    if args.validation_data:
        val = _non_ev(_load_series(args.validation_data, args.validation_labels))
        val_reports = detect.classify_consumers(val, model, scaler, 0.0, smoothing, mode)
        threshold = detect.calibrate_threshold([r.total_score for r in val_reports])
    elif "threshold" in cal:
        threshold = cal["threshold"]
    else:
        raise ConfigError("model carries no threshold; pass --validation-data")
    series = pipeline.ingest_csv(args.data)
    reports = detect.classify_consumers(series, model, scaler, threshold, smoothing, mode)
    out = run.out_dir
    out.mkdir(parents=True, exist_ok=True)
    detect.write_reports(reports, out / "reports.csv")
    detect.write_window_scores(reports, out / "window_scores.csv")
    flagged = sum(r.decision for r in reports)
    print(f"{flagged} of {len(reports)} consumers flagged as EV (threshold {threshold:.6g})")
    return 0


def cmd_eval(run: cfgmod.RunConfig, args) -> int:
    reports = detect.read_reports(args.reports)
    labels = pipeline.read_labels(args.labels)
    missing = [r.consumer_id for r in reports if r.consumer_id not in labels]
    if missing:
        raise DataError(f"no label for {len(missing)} consumers, e.g. {missing[0]}")
    y = [labels[r.consumer_id] for r in reports]
    result = evaluate.evaluate([r.decision for r in reports], [r.total_score for r in reports], y)
    out = run.out_dir
    out.mkdir(parents=True, exist_ok=True)
    evaluate.write_eval_csv(result, out / "eval.csv")
    evaluate.write_roc_csv(result.roc_points, out / "roc.csv")
    table = evaluate.format_table([("TAE", result)])
    (out / "eval.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def _ablation_row(job) -> experiment.AblationRow:
    series, exp, weights, gamma = job
    return experiment.run_ablation(series, exp, [(weights, gamma)])[0]


def cmd_ablate(run: cfgmod.RunConfig, args) -> int:
    series = _load_series(args.data, args.labels, required=True)
    exp = run.experiment_config()
    grid = run.grid()
    jobs = [(series, exp, w, g) for w, g in grid]
    if run["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(run["workers"]) as pool:
            rows = list(pool.map(_ablation_row, jobs))
    else:
        rows = [_ablation_row(j) for j in jobs]
    out = run.out_dir
    out.mkdir(parents=True, exist_ok=True)
    experiment.write_ablation(rows, out / "ablation.csv")
    print(evaluate.format_table([(experiment.loss_label(r.weights), r.eval) for r in rows]))
    for r in rows:
        print(f"{experiment.loss_label(r.weights)}: trained in {r.train_seconds:.2f} s")
    return 0


def cmd_gradcheck(run: cfgmod.RunConfig, args) -> int:
    outcomes = gradsuite.run_suite(args.instances, run["seed"])
    out = run.out_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "gradcheck.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "max_relative_error", "tolerance", "instances", "skipped", "passed"])
        for o in outcomes:
            w.writerow([o.name, format(o.max_relative_error, ".3e"), format(o.tolerance, "g"),
                        o.instances, o.skipped, int(o.passed)])
    for o in outcomes:
        print(f"{'PASS' if o.passed else 'FAIL'} {o.name}: {o.max_relative_error:.3e} < {o.tolerance:g}")
    return 0 if all(o.passed for o in outcomes) else 1


COMMANDS = {
    "gen": (cmd_gen, "generate a synthetic population"),
    "preprocess": (cmd_preprocess, "smooth, scale and window a dataset"),
    "train": (cmd_train, "train a TAE on non-EV consumers and calibrate its threshold"),
    "detect": (cmd_detect, "score and classify every consumer in a dataset"),
    "eval": (cmd_eval, "precision, recall, F1 and ROC/AUC for a report"),
    "ablate": (cmd_ablate, "run one experiment per loss weighting"),
    "gradcheck": (cmd_gradcheck, "finite-difference gradient checks"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    cfgmod.add_flags(common)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress")
    parser = argparse.ArgumentParser(prog="evtae", description="EV detection from smart-meter data")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {name: sub.add_parser(name, parents=[common], help=text, description=text)
            for name, (_, text) in COMMANDS.items()}
    for name in ("preprocess", "train", "ablate"):
        subs[name].add_argument("--data", required=True, help="consumption CSV")
        subs[name].add_argument("--labels", help=f"labels CSV (default: {LABELS_FILE} next to the data)")
    subs["detect"].add_argument("--model", required=True, help="model file")
    subs["detect"].add_argument("--data", required=True, help="consumption CSV to classify")
    subs["detect"].add_argument("--validation-data", help="non-EV CSV to recompute the threshold from")
    subs["detect"].add_argument("--validation-labels", help="labels for --validation-data")
    subs["eval"].add_argument("--reports", required=True, help="reports CSV from detect")
    subs["eval"].add_argument("--labels", required=True, help="labels CSV")
    subs["gradcheck"].add_argument("--instances", type=int, default=20, help="random instances per check")
    return parser


_INPUT_ARGS = ("data", "labels", "model", "validation_data", "validation_labels", "reports", "instances")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    command = {"name": args.command}
    command.update({k: str(getattr(args, k)) for k in _INPUT_ARGS if getattr(args, k, None) is not None})
    try:
        run = cfgmod.from_namespace(args, command)
        run.write_snapshot(run.out_dir)
        return COMMANDS[args.command][0](run, args)
    except EvtaeError as exc:
        print(f"evtae {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"evtae {args.command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
