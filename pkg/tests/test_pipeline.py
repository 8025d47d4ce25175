import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evtae import pipeline
from evtae.errors import DataError
from evtae.pipeline import ConsumerSeries, ScalerParams

HEADER = "consumer_id,timestamp,kwh\n"


def rows(cid, values, day="2021-03-01"):
    out = []
    for i, v in enumerate(values):
        h, m = divmod(30 * i, 60)
        d = int(day[-2:]) + h // 24
        out.append(f"{cid},{day[:-2]}{d:02d}T{h % 24:02d}:{m:02d}:00,{v}\n")
    return out


@pytest.fixture
def csv_file(tmp_path):
    def make(lines):
        path = tmp_path / "data.csv"
        path.write_text(HEADER + "".join(lines))
        return path
    return make


class TestIngest:
    def test_two_consumers(self, csv_file):
        series = pipeline.ingest_csv(csv_file(rows("b", range(96)) + rows("a", range(96))))
        assert [s.consumer_id for s in series] == ["a", "b"]
        assert all(len(s.readings) == 96 for s in series)
        assert series[0].readings[5] == 5.0

    def test_order_independent(self, csv_file, rng):
        lines = rows("a", rng.uniform(size=20)) + rows("b", rng.uniform(size=20))
        ordered = pipeline.ingest_csv(csv_file(lines))
        shuffled = pipeline.ingest_csv(csv_file([lines[i] for i in rng.permutation(len(lines))]))
        for s, t in zip(ordered, shuffled):
            assert s.consumer_id == t.consumer_id
            np.testing.assert_array_equal(s.readings, t.readings)

    def test_duplicate_timestamp(self, csv_file):
        lines = rows("a", [1, 2, 3])
        with pytest.raises(DataError, match="consumer a: duplicate"):
            pipeline.ingest_csv(csv_file(lines + lines[1:2]))

    def test_gap(self, csv_file):
        lines = rows("a", [1, 2, 3, 4])
        with pytest.raises(DataError, match="cadence"):
            pipeline.ingest_csv(csv_file(lines[:2] + lines[3:]))

    @pytest.mark.parametrize("bad", ["a,2021-03-01T00:00:00,-1\n", "a,yesterday,1\n",
                                     "a,2021-03-01T00:00:00,nan\n", "a,2021-03-01T00:00:00\n"])
    def test_bad_rows_report_line(self, csv_file, bad):
        with pytest.raises(DataError, match="line 2"):
            pipeline.ingest_csv(csv_file([bad]))

    def test_bad_header(self, tmp_path):
        (tmp_path / "x.csv").write_text("id,time,value\n")
        with pytest.raises(DataError, match="header"):
            pipeline.ingest_csv(tmp_path / "x.csv")

    def test_round_trip(self, tmp_path, tiny_population):
        series, _ = tiny_population
        pipeline.write_csv(series[:3], tmp_path / "c.csv")
        back = pipeline.ingest_csv(tmp_path / "c.csv")
        for s, b in zip(series[:3], back):
            np.testing.assert_allclose(b.readings, s.readings, atol=5e-7)
            assert b.start == s.start

    def test_labels(self, tmp_path):
        series = [ConsumerSeries("a", [1.0], 1), ConsumerSeries("b", [1.0], 0)]
        pipeline.write_labels(series, tmp_path / "l.csv")
        assert pipeline.read_labels(tmp_path / "l.csv") == {"a": 1, "b": 0}
        fresh = pipeline.attach_labels([ConsumerSeries("a", [2.0])], {"a": 1})
        assert fresh[0].label == 1

    def test_series_validation(self):
        with pytest.raises(DataError):
            ConsumerSeries("a", [])
        with pytest.raises(DataError):
            ConsumerSeries("a", [1.0], label=2)


class TestSmooth:
    def test_examples(self):
        np.testing.assert_array_equal(pipeline.smooth([1, 2, 3, 4]), [3, 7])
        np.testing.assert_array_equal(pipeline.smooth([5, 2.5]), [7.5])
        with pytest.raises(DataError):
            pipeline.smooth([5])

    def test_odd_tail_dropped(self):
        np.testing.assert_array_equal(pipeline.smooth([1, 2, 3]), [3])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 100), min_size=1, max_size=40).map(lambda v: v + v))
    def test_energy_conserved(self, values):
        assert np.sum(pipeline.smooth(values)) == pytest.approx(np.sum(values), rel=1e-12, abs=1e-12)


class TestScaler:
    def test_examples(self):
        p = pipeline.fit_scaler([[0.0, 5.0], [10.0]])
        np.testing.assert_array_equal(pipeline.apply_scaler([0, 5, 10], p), [0, 0.5, 1])
        assert pipeline.apply_scaler([20.0], p)[0] == 1.0
        assert pipeline.apply_scaler([-3.0], p)[0] == 0.0

    def test_constant_rejected(self):
        with pytest.raises(DataError):
            pipeline.fit_scaler([[2.0, 2.0]])

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-100, 100), st.floats(0.01, 100), st.lists(st.floats(0, 1), min_size=1, max_size=20))
    def test_invert_round_trip(self, lo, width, fractions):
        p = ScalerParams(lo, lo + width)
        x = lo + width * np.array(fractions)
        x = np.clip(x, lo, lo + width)
        np.testing.assert_allclose(pipeline.invert_scaler(pipeline.apply_scaler(x, p), p), x, atol=1e-12)

    def test_fit_on_smoothed(self):
        series = [ConsumerSeries("a", [1.0, 1.0, 4.0, 4.0])]
        assert pipeline.fit_scaler_on(series, True) == ScalerParams(2.0, 8.0)
        assert pipeline.fit_scaler_on(series, False) == ScalerParams(1.0, 4.0)


class TestWindowize:
    def test_exact(self):
        assert pipeline.windowize(np.arange(504.0), 168).shape == (3, 168)

    def test_remainder_dropped(self):
        w = pipeline.windowize(np.arange(500.0), 168)
        assert w.shape == (2, 168)
        np.testing.assert_array_equal(w.ravel(), np.arange(336.0))

    def test_too_short(self):
        with pytest.raises(DataError, match="c7"):
            pipeline.windowize(np.arange(100.0), 168, "c7")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 50), st.integers(1, 300))
    def test_concatenation_is_prefix(self, width, extra):
        x = np.arange(width + extra, dtype=float)
        w = pipeline.windowize(x, width)
        np.testing.assert_array_equal(w.ravel(), x[: len(w) * width])

    def test_preprocess_order_and_provenance(self):
        s = ConsumerSeries("a", np.arange(16.0))
        batch = pipeline.preprocess(s, ScalerParams(0.0, 30.0), 4)
        assert batch.origin == [("a", 0), ("a", 1)]
        np.testing.assert_allclose(batch.windows[0], np.array([1, 5, 9, 13]) / 30.0)

    def test_write_windows(self, tmp_path):
        batch = pipeline.SequenceBatch(np.array([[0.5, 0.25]]), [("a", 0)])
        pipeline.write_windows(batch, tmp_path / "w.csv")
        assert (tmp_path / "w.csv").read_text() == "consumer_id,window_index,t0,t1\na,0,0.5,0.25\n"
