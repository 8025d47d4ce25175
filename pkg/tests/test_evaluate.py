import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evtae import evaluate
from evtae.errors import DataError
from oracles import mann_whitney_auc

labelled = st.lists(st.tuples(st.integers(0, 20).map(float), st.integers(0, 1)), min_size=2, max_size=60).filter(
    lambda rows: 0 < sum(y for _, y in rows) < len(rows))


class TestConfusion:
    def test_examples(self):
        assert evaluate.confusion([1, 0], [1, 0]) == (1, 0, 1, 0)
        assert evaluate.confusion([0, 0, 0, 0], [1, 1, 0, 0]) == (0, 0, 2, 2)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=30))
    def test_swap_transposes(self, pairs):
        d, y = zip(*pairs)
        tp, fp, tn, fn = evaluate.confusion(d, y)
        assert evaluate.confusion(y, d) == (tp, fn, tn, fp)

    def test_rejects(self):
        with pytest.raises(DataError):
            evaluate.confusion([1, 0], [1])
        with pytest.raises(DataError):
            evaluate.confusion([1], [2])


class TestPrf:
    def test_f1_from_rates(self):
        assert abs(evaluate.f1_score(0.6966, 0.7266) - 0.7113) < 1e-4

    def test_recall_from_counts(self):
        _, recall, _ = evaluate.prf(101, 0, 38)
        assert evaluate.pct(recall) == "72.66"

    def test_undefined_precision(self):
        p, r, f = evaluate.prf(0, 0, 5)
        assert p is None and r == 0.0 and f is None
        assert evaluate.pct(p) == "undefined"

    def test_zero_sum(self):
        assert evaluate.f1_score(0.0, 0.0) is None


class TestRoc:
    def test_examples(self):
        assert evaluate.roc_auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])[1] == 0.75
        assert evaluate.roc_auc([3, 4, 1, 2], [1, 1, 0, 0])[1] == 1.0
        assert evaluate.roc_auc([7, 7, 7, 7, 7], [1, 0, 0, 1, 0])[1] == 0.5

    def test_curve_shape(self):
        points, _ = evaluate.roc_auc([0.9, 0.8, 0.8, 0.1], [1, 1, 0, 0])
        assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)
        assert points == [(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]

    @settings(max_examples=60, deadline=None)
    @given(labelled)
    def test_matches_pairwise_oracle(self, rows):
        s, y = zip(*rows)
        assert abs(evaluate.roc_auc(s, y)[1] - mann_whitney_auc(s, y)) < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(labelled, st.floats(0.1, 10), st.floats(-5, 5))
    def test_invariant_to_monotone_maps(self, rows, a, b):
        s, y = zip(*rows)
        s = np.array(s)
        base = evaluate.roc_auc(s, y)[1]
        assert evaluate.roc_auc(a * s + b, y)[1] == pytest.approx(base, abs=1e-12)
        assert evaluate.roc_auc(np.exp(s / 10), y)[1] == pytest.approx(base, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(labelled)
    def test_flipping_labels_complements(self, rows):
        s, y = zip(*rows)
        flipped = [1 - v for v in y]
        assert evaluate.roc_auc(s, y)[1] + evaluate.roc_auc(s, flipped)[1] == pytest.approx(1.0, abs=1e-12)

    def test_single_class(self):
        with pytest.raises(DataError):
            evaluate.roc_auc([1, 2], [1, 1])


class TestOutputs:
    def test_files_and_table(self, tmp_path):
        report = evaluate.evaluate([1, 0, 1, 0], [0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
        assert (report.tp, report.fp, report.tn, report.fn, report.n) == (2, 0, 2, 0, 4)
        evaluate.write_eval_csv(report, tmp_path / "e.csv")
        evaluate.write_roc_csv(report.roc_points, tmp_path / "r.csv")
        assert (tmp_path / "e.csv").read_text().splitlines()[1] == "2,0,2,0,1,1,1,0.75"
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "fpr,tpr"
        table = evaluate.format_table([("TAE", report)])
        assert "100.00" in table and "75.00" in table
