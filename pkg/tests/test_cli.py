import configparser
import csv
import re

import numpy as np
import pytest

from evtae import config as cfgmod, detect, model as tae, pipeline
from evtae.cli import main
from evtae.errors import ConfigError

FAST = ["--window-length", "24", "--kernel-size", "3", "--filters", "4,2", "--dilations", "1,2",
        "--epochs", "2", "--batch-size", "16"]


def files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["gen", "--preset", "tiny", "--days", "7", "--seed", "4", "--out-dir", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(generated, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    args = ["train", "--config", str(generated / "config.ini"), "--data", str(generated / "consumption.csv"),
            "--out-dir", str(out)] + FAST
    assert main(args) == 0
    return out


class TestConfig:
    def test_precedence(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[model]\nepochs = 3\ngamma = 0.5\n[synth]\npreset = small\n")
        ns = cfgmod.argparse.Namespace(config=str(ini), epochs="7")
        run = cfgmod.from_namespace(ns)
        assert run["epochs"] == 7 and run["gamma"] == 0.5 and run["batch_size"] == 32
        assert run["n_non_ev"] == 260 and run.split_config().test_fraction == 60 / 260

    def test_snapshot_round_trips(self, tmp_path):
        run = cfgmod.resolve(flags={"preset": "tiny", "filters": "8,4", "dilations": "1,3", "loss": "cos"})
        path = run.write_snapshot(tmp_path)
        again = cfgmod.resolve(cfgmod.read_file(path))
        assert again.values == run.values
        assert again.tae_config() == run.tae_config()

    def test_unknown_key(self, tmp_path):
        (tmp_path / "c.ini").write_text("[model]\nepochz = 3\n")
        with pytest.raises(ConfigError, match="epochz"):
            cfgmod.read_file(tmp_path / "c.ini")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            cfgmod.resolve(flags={"epochs": "ten"})

    def test_seeds_derived_from_master(self):
        a, b = cfgmod.resolve(flags={"seed": "1"}), cfgmod.resolve(flags={"seed": "2"})
        assert len(set(a.seeds)) == 3 and a.seeds != b.seeds
        assert a.seeds == cfgmod.resolve(flags={"seed": "1"}).seeds

    def test_grid(self):
        run = cfgmod.resolve(flags={"grid": "1,0,0; 0,1,0,0.1", "gamma": "2"})
        assert [(w.as_tuple(), g) for w, g in run.grid()] == [((1, 0, 0), 2.0), ((0, 1, 0), 0.1)]
        mixed = cfgmod.resolve(flags={"paper_grid": True})
        assert [w.as_tuple() for w, _ in mixed.grid()] == [(1, 0, 1), (1, 1, 0), (0, 1, 1), (1, 1, 1)]

    def test_every_option_has_a_flag(self):
        parser = cfgmod.argparse.ArgumentParser()
        cfgmod.add_flags(parser)
        flags = {a for action in parser._actions for a in action.option_strings}
        assert all(o.flag in flags for o in cfgmod.OPTIONS)


class TestGen:
    def test_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["gen", "--seed", "7", "--preset", "small", "--days", "3",
                         "--out-dir", str(tmp_path / name)]) == 0
        a, b = files(tmp_path / "a"), files(tmp_path / "b")
        a.pop("config.ini"), b.pop("config.ini")
        assert a == b and set(a) == {"consumption.csv", "labels.csv", "injections.csv"}

    def test_no_ev(self, tmp_path):
        assert main(["gen", "--preset", "tiny", "--days", "2", "--n-ev", "0", "--out-dir", str(tmp_path)]) == 0
        assert set(pipeline.read_labels(tmp_path / "labels.csv").values()) == {0}

    def test_default_population(self):
        run = cfgmod.resolve()
        cfg = run.synth_config()
        assert cfg.n_non_ev + cfg.n_ev == 1245 and cfg.n_ev == 139

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        assert main(["gen", "--charge-prob", "3", "--out-dir", str(tmp_path)]) == 2
        assert "error" in capsys.readouterr().err

    def test_snapshot_written(self, generated):
        parser = configparser.ConfigParser()
        parser.read(generated / "config.ini")
        assert parser["synth"]["preset"] == "tiny" and parser["command"]["name"] == "gen"


class TestTrain:
    def test_outputs(self, trained):
        assert {"model.tae", "train_report.csv", "config.ini", "split.csv"} <= set(files(trained))
        m = tae.load(trained / "model.tae")
        assert m.config.window_length == 24 and "threshold" in m.calibration
        assert len((trained / "train_report.csv").read_text().splitlines()) == 3

    def test_zero_epochs(self, generated, tmp_path):
        args = ["train", "--data", str(generated / "consumption.csv"), "--out-dir", str(tmp_path)] + FAST
        assert main(args + ["--epochs", "0"]) == 0
        m = tae.load(tmp_path / "model.tae")
        init = tae.init_model(m.config, np.random.SeedSequence(m.config.seed).spawn(3)[0])
        assert all((m.params[k] == init.params[k]).all() for k in init.params)
        assert (tmp_path / "train_report.csv").read_text() == "epoch,train_loss,val_loss\n"

    def test_dtw_slower_than_l2(self, generated, tmp_path, capsys):
        seconds = {}
        for loss in ("l2", "dtw"):
            args = ["train", "--data", str(generated / "consumption.csv"), "--out-dir", str(tmp_path / loss),
                    "--epochs", "1", "--loss", loss]
            assert main(args) == 0
            seconds[loss] = float(re.search(r"in ([0-9.]+) s", capsys.readouterr().out).group(1))
        assert seconds["dtw"] > seconds["l2"]


class TestDetectEval:
    def test_detect_and_eval(self, generated, trained, tmp_path):
        d, e = tmp_path / "d", tmp_path / "e"
        assert main(["detect", "--model", str(trained / "model.tae"), "--data",
                     str(generated / "consumption.csv"), "--out-dir", str(d)]) == 0
        reports = detect.read_reports(d / "reports.csv", d / "window_scores.csv")
        assert len(reports) == 90
        for r in reports:
            assert detect.consumer_score(r.window_scores) == pytest.approx(r.total_score, rel=1e-12)
        assert main(["eval", "--reports", str(d / "reports.csv"), "--labels", str(generated / "labels.csv"),
                     "--out-dir", str(e)]) == 0
        assert {"eval.csv", "roc.csv", "eval.txt", "config.ini"} <= set(files(e))

    def test_training_users_mostly_negative(self, generated, trained, tmp_path):
        train_ids = {row["consumer_id"] for row in csv.DictReader(open(trained / "split.csv"))
                     if row["split"] == "train"}
        series = [s for s in pipeline.ingest_csv(generated / "consumption.csv") if s.consumer_id in train_ids]
        pipeline.write_csv(series, tmp_path / "train.csv")
        assert main(["detect", "--model", str(trained / "model.tae"), "--data", str(tmp_path / "train.csv"),
                     "--out-dir", str(tmp_path / "d")]) == 0
        decisions = [r.decision for r in detect.read_reports(tmp_path / "d" / "reports.csv")]
        assert sum(decisions) < len(decisions) / 2

    def test_validation_threshold(self, generated, trained, tmp_path):
        series = [s for s in pipeline.attach_labels(pipeline.ingest_csv(generated / "consumption.csv"),
                                                    pipeline.read_labels(generated / "labels.csv"))
                  if s.label == 0][:10]
        pipeline.write_csv(series, tmp_path / "val.csv")
        assert main(["detect", "--model", str(trained / "model.tae"), "--data", str(tmp_path / "val.csv"),
                     "--validation-data", str(tmp_path / "val.csv"), "--out-dir", str(tmp_path / "d")]) == 0
        reports = detect.read_reports(tmp_path / "d" / "reports.csv")
        assert reports[0].threshold == pytest.approx(sum(r.total_score for r in reports) / len(reports))

    def test_missing_model(self, generated, tmp_path):
        assert main(["detect", "--model", str(tmp_path / "none.tae"), "--data",
                     str(generated / "consumption.csv"), "--out-dir", str(tmp_path)]) != 0

    def test_corrupt_model(self, generated, tmp_path):
        (tmp_path / "bad.tae").write_text("evtae-model\nformat_version 1\n")
        assert main(["detect", "--model", str(tmp_path / "bad.tae"), "--data",
                     str(generated / "consumption.csv"), "--out-dir", str(tmp_path)]) == 5

    def test_bad_data_exit_code(self, trained, tmp_path):
        (tmp_path / "x.csv").write_text("consumer_id,timestamp,kwh\na,never,1\n")
        assert main(["detect", "--model", str(trained / "model.tae"), "--data", str(tmp_path / "x.csv"),
                     "--out-dir", str(tmp_path)]) == 3


class TestAblateGradcheck:
    def test_mixed_grid_flag(self, generated, tmp_path):
        args = ["ablate", "--config", str(generated / "config.ini"), "--data", str(generated / "consumption.csv"),
                "--paper-grid", "--out-dir", str(tmp_path)] + FAST + ["--epochs", "1"]
        assert main(args) == 0
        rows = list(csv.DictReader(open(tmp_path / "ablation.csv")))
        assert [(r["lambda1"], r["lambda2"], r["lambda3"]) for r in rows] == [
            ("1", "0", "1"), ("1", "1", "0"), ("0", "1", "1"), ("1", "1", "1")]
        assert set(rows[0]) >= {"precision_pct", "recall_pct", "f1_pct", "auc_pct", "train_seconds"}

    def test_single_entry(self, generated, tmp_path):
        args = ["ablate", "--data", str(generated / "consumption.csv"), "--out-dir", str(tmp_path)] + FAST
        assert main(args) == 0
        assert len((tmp_path / "ablation.csv").read_text().splitlines()) == 2

    def test_gradcheck(self, tmp_path, capsys):
        assert main(["gradcheck", "--instances", "1", "--out-dir", str(tmp_path)]) == 0
        assert capsys.readouterr().out.count("PASS") == 9
        assert (tmp_path / "config.ini").exists()
