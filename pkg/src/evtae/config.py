"""Run configuration: INI file plus command-line overrides.

Every key lives in exactly one section and has a matching ``--flag``
(underscores become dashes). Precedence is built-in default, then config
file, then flag. Keys whose default is ``None`` are derived from the chosen
synthetic preset or from library defaults at resolve time, and the snapshot
written next to every output records the resolved value.
"""

from __future__ import annotations

import argparse
import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import synth
from .errors import ConfigError
from .experiment import MIXED_LOSS_GRID, SMALL_SPLIT, ExperimentConfig, SplitConfig
from .losses import LossWeights
from .model import TaeConfig


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Option:
    section: str
    key: str
    parse: Callable[[str], Any]
    default: Any
    help: str

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")


OPTIONS: tuple[Option, ...] = (
    Option("run", "seed", int, 0, "master seed; synth, split and model seeds derive from it"),
    Option("run", "out_dir", str, "out", "output directory"),
    Option("run", "workers", int, 1, "worker processes for generation and ablation"),
    Option("synth", "preset", str, "full", f"population preset: {', '.join(synth.PRESETS)}"),
    Option("synth", "n_non_ev", int, None, "non-EV consumers (default: from preset)"),
    Option("synth", "n_ev", int, None, "EV consumers (default: from preset)"),
    Option("synth", "days", int, None, "simulated days (default: from preset)"),
    Option("synth", "high_demand_share", float, None, "share of EV owners charging at high power"),
    Option("synth", "charge_prob", float, None, "daily charging probability; 0 removes the EV signal"),
    Option("synth", "low_kw", float, None, "low-demand charger power"),
    Option("synth", "high_kw", float, None, "high-demand charger power"),
    Option("synth", "offpeak_share", float, None, "share of charging sessions started off-peak"),
    Option("model", "window_length", int, None, "window length after smoothing"),
    Option("model", "kernel_size", int, None, "temporal kernel size"),
    Option("model", "filters", _ints, None, "filters per residual block, comma separated"),
    Option("model", "dilations", _ints, None, "dilation per residual block, comma separated"),
    Option("model", "dropout_rate", float, None, "dropout rate"),
    Option("model", "learning_rate", float, None, "Adam learning rate"),
    Option("model", "epochs", int, None, "training epochs (0 saves the initial model)"),
    Option("model", "batch_size", int, None, "mini-batch size"),
    Option("model", "loss", str, "", "shortcut for a single loss: l2, dtw or cos (overrides lambdas)"),
    Option("model", "lambda_rec", float, 1.0, "weight of the reconstruction loss"),
    Option("model", "lambda_dtw", float, 0.0, "weight of the soft-DTW loss"),
    Option("model", "lambda_cos", float, 0.0, "weight of the cosine loss"),
    Option("model", "gamma", float, None, "soft-DTW smoothing"),
    Option("split", "test_fraction", float, None, "share of non-EV consumers held out for test"),
    Option("split", "val_fraction", float, None, "share of the remaining non-EV consumers used for validation"),
    Option("pipeline", "smoothing", _bool, True, "sum adjacent 30-minute readings before scaling"),
    Option("detect", "score_mode", str, "l2", "window score: l2 (squared error) or loss (training objective)"),
    Option("ablation", "grid", str, "", "entries 'rec,dtw,cos,gamma' separated by ';' (default: current lambdas)"),
    Option("ablation", "paper_grid", _bool, False, "use the four mixed weightings (1,0,1) (1,1,0) (0,1,1) (1,1,1)"),
)
_BY_KEY = {o.key: o for o in OPTIONS}
SECTIONS = tuple(dict.fromkeys(o.section for o in OPTIONS))


def add_flags(parser: argparse.ArgumentParser) -> None:
    """Add one flag per option; unset flags stay absent from the namespace."""
    parser.add_argument("--config", default=argparse.SUPPRESS, help="INI config file")
    for o in OPTIONS:
        if o.parse is _bool:
            parser.add_argument(o.flag, action=argparse.BooleanOptionalAction,
                                default=argparse.SUPPRESS, help=o.help)
        else:
            parser.add_argument(o.flag, default=argparse.SUPPRESS, help=o.help)


def _parse(option: Option, raw, origin: str):
    if raw is None or isinstance(raw, (bool, tuple)):
        return raw
    try:
        return option.parse(raw) if isinstance(raw, str) else option.parse(str(raw))
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad value for {option.key}: {exc}") from None


def read_file(path) -> dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section == "command":
            continue
        for key, raw in parser.items(section):
            option = _BY_KEY.get(key)
            if option is None or option.section != section:
                raise ConfigError(f"{path}: unknown key [{section}] {key}")
            if raw.strip() in ("", "none") and option.default is None:
                continue
            values[key] = _parse(option, raw, str(path))
    return values


@dataclass
class RunConfig:
    values: dict[str, Any]
    command: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def seeds(self) -> tuple[int, int, int]:
        """(synth, split, model) seeds derived from the master seed."""
        s = np.random.SeedSequence(self.values["seed"]).generate_state(3)
        return int(s[0]), int(s[1]), int(s[2])

    @property
    def out_dir(self) -> Path:
        return Path(self.values["out_dir"])

    def synth_config(self) -> synth.SynthConfig:
        v = self.values
        pop = {k: v[k] for k in ("n_non_ev", "n_ev", "days")}
        cfg = synth.preset(v["preset"], seed=self.seeds[0], **pop)
        ev = {k: v[k] for k in ("high_demand_share", "charge_prob", "low_kw", "high_kw", "offpeak_share")}
        return synth.with_ev(cfg, **ev)

    def loss_weights(self) -> LossWeights:
        if self.values["loss"]:
            return LossWeights.named(self.values["loss"])
        v = self.values
        return LossWeights(v["lambda_rec"], v["lambda_dtw"], v["lambda_cos"])

    def tae_config(self) -> TaeConfig:
        keys = ("window_length", "kernel_size", "filters", "dilations", "dropout_rate",
                "learning_rate", "epochs", "batch_size", "gamma")
        kw = {k: self.values[k] for k in keys}
        return TaeConfig(**kw, loss_weights=self.loss_weights(), seed=self.seeds[2])

    def split_config(self) -> SplitConfig:
        return SplitConfig(self.values["test_fraction"], self.values["val_fraction"], self.seeds[1])

    def experiment_config(self) -> ExperimentConfig:
        mode = self.values["score_mode"]
        return ExperimentConfig(self.tae_config(), self.split_config(), self.values["smoothing"], mode)

    def grid(self) -> list[tuple[LossWeights, float]]:
        gamma = self.values["gamma"]
        if self.values["paper_grid"]:
            return [(w, gamma) for w in MIXED_LOSS_GRID]
        text = self.values["grid"].strip()
        if not text:
            return [(self.loss_weights(), gamma)]
        rows = []
        for entry in text.split(";"):
            parts = [p for p in entry.replace(" ", "").split(",") if p]
            if len(parts) not in (3, 4):
                raise ConfigError(f"grid entry {entry!r} must be 'rec,dtw,cos[,gamma]'")
            try:
                nums = [float(p) for p in parts]
            except ValueError:
                raise ConfigError(f"grid entry {entry!r} is not numeric") from None
            rows.append((LossWeights(*nums[:3]), nums[3] if len(nums) == 4 else gamma))
        return rows

    def to_ini(self) -> str:
        lines = []
        for section in SECTIONS:
            lines.append(f"[{section}]")
            lines += [f"{o.key} = {_fmt(self.values[o.key])}" for o in OPTIONS if o.section == section]
            lines.append("")
        if self.command:
            lines.append("[command]")
            lines += [f"{k} = {v}" for k, v in self.command.items()]
            lines.append("")
        return "\n".join(lines)

    def write_snapshot(self, directory) -> Path:
        path = Path(directory) / "config.ini"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_ini(), encoding="utf-8")
        return path


def _derived_defaults(values: dict[str, Any]) -> dict[str, Any]:
    """Fill ``None`` entries from the preset and the library dataclasses."""
    out = dict(values)
    name = out["preset"]
    if name not in synth.PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(synth.PRESETS)}")
    for k, v in synth.PRESETS[name].items():
        if out[k] is None:
            out[k] = v
    for source in (synth.EvProfile(), TaeConfig()):
        for k in list(out):
            if out[k] is None and hasattr(source, k):
                out[k] = getattr(source, k)
    split = SMALL_SPLIT if name == "small" else SplitConfig()
    for k in ("test_fraction", "val_fraction"):
        if out[k] is None:
            out[k] = getattr(split, k)
    return out


def resolve(file_values: dict[str, Any] | None = None, flags: dict[str, Any] | None = None,
            command: dict[str, str] | None = None) -> RunConfig:
    values = {o.key: o.default for o in OPTIONS}
    for origin, layer in (("config file", file_values or {}), ("flag", flags or {})):
        for key, raw in layer.items():
            if key not in _BY_KEY:
                raise ConfigError(f"unknown setting {key!r}")
            values[key] = _parse(_BY_KEY[key], raw, origin)
    values = _derived_defaults(values)
    run = RunConfig(values, dict(command or {}))
    # fail early on invalid combinations
    run.synth_config()
    run.experiment_config()
    if values["score_mode"] not in ("l2", "loss"):
        raise ConfigError(f"score_mode must be l2 or loss, got {values['score_mode']!r}")
    if values["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    return run


def from_namespace(ns: argparse.Namespace, command: dict[str, str] | None = None) -> RunConfig:
    given = vars(ns)
    file_values = read_file(given["config"]) if "config" in given else {}
    flags = {o.key: given[o.key] for o in OPTIONS if o.key in given}
    return resolve(file_values, flags, command)


def with_values(run: RunConfig, **values) -> RunConfig:
    return replace(run, values={**run.values, **values})
