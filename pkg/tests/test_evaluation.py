import collections
import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from published import MATRICES, RECALL_ROWS, REPORTED
from sleepyco.evaluation import (
    METRIC_COLUMNS,
    ConfusionMatrix,
    FoldResult,
    compute_metrics,
    confusion,
    pool,
    read_confusion_csv,
    read_metrics_csv,
    render_report,
    write_metrics_csv,
)

count_matrices = arrays(np.int64, (5, 5), elements=st.integers(0, 500)).filter(lambda c: c.sum() > 0)


class TestConfusion:
    def test_perfect_is_diagonal(self):
        y = [0, 1, 2, 3, 4, 4, 2]
        cm = confusion(y, y)
        assert (cm.counts == np.diag(np.bincount(y, minlength=5))).all()

    def test_single_pair(self):
        cm = confusion([1], [0])  # predicted N1 for an actual W epoch
        assert cm.counts[0, 1] == 1 and cm.n == 1

    def test_counting_oracle(self):
        rng = np.random.default_rng(0)
        labels, preds = rng.integers(0, 5, 1000), rng.integers(0, 5, 1000)
        tally = collections.Counter(zip(labels.tolist(), preds.tolist()))
        cm = confusion(preds, labels)
        for a in range(5):
            for p in range(5):
                assert cm.counts[a, p] == tally[(a, p)]
        np.testing.assert_array_equal(cm.support, np.bincount(labels, minlength=5))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([0, 1], [0])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            confusion([5], [0])
        with pytest.raises(ValueError):
            ConfusionMatrix(-np.eye(5))
        with pytest.raises(ValueError):
            ConfusionMatrix(np.eye(4))


class TestPublishedMatrices:
    @pytest.mark.parametrize("name", sorted(MATRICES))
    def test_reported_metrics(self, name):
        report = compute_metrics(ConfusionMatrix(MATRICES[name]))
        acc, mf1, kappa, f1 = REPORTED[name]
        assert abs(100 * report.acc - acc) <= 0.1
        assert abs(100 * report.mf1 - mf1) <= 0.1
        assert abs(report.kappa - kappa) <= 0.001
        np.testing.assert_allclose(100 * report.per_class_f1, f1, atol=0.1)

    @pytest.mark.parametrize("name", sorted(MATRICES))
    def test_printed_recall(self, name):
        report = compute_metrics(ConfusionMatrix(MATRICES[name]))
        np.testing.assert_allclose(100 * report.per_class_recall, RECALL_ROWS[name], atol=0.05)

    def test_sleep_edf_wake_row_total(self):
        # the printed matrix has 68,447 wake epochs, not the 69,824 of the dataset summary
        assert MATRICES["Sleep-EDF"][0].sum() == 68447


class TestMetrics:
    def test_perfect(self):
        r = compute_metrics(ConfusionMatrix(np.diag([3, 4, 5, 6, 7])))
        assert (r.acc, r.mf1, r.kappa) == (1.0, 1.0, 1.0)

    def test_constant_predictor(self):
        counts = np.zeros((5, 5), int)
        counts[:, 2] = [5, 3, 20, 4, 8]
        r = compute_metrics(ConfusionMatrix(counts))
        assert r.kappa == pytest.approx(0.0, abs=1e-15)
        assert r.p_e == pytest.approx(r.acc, abs=1e-15)

    def test_absent_class_counts_as_zero_f1(self):
        counts = np.diag([5, 5, 5, 5, 0])
        r = compute_metrics(ConfusionMatrix(counts))
        assert r.per_class_f1[4] == 0.0
        assert r.mf1 == pytest.approx(0.8)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics(ConfusionMatrix(np.zeros((5, 5))))

    @settings(max_examples=60)
    @given(count_matrices)
    def test_invariants(self, counts):
        r = compute_metrics(ConfusionMatrix(counts))
        n = counts.sum()
        errors = n - np.trace(counts)
        assert abs(r.acc - (1 - errors / n)) <= 1e-12
        assert 0.0 <= r.acc <= 1.0 and r.kappa <= 1.0 + 1e-12
        assert r.mf1 == pytest.approx(r.per_class_f1.mean(), abs=1e-15)
        defined = (r.per_class_precision + r.per_class_recall) > 0
        hm = 2 * r.per_class_precision * r.per_class_recall / np.where(defined, r.per_class_precision + r.per_class_recall, 1)
        np.testing.assert_allclose(r.per_class_f1[defined], hm[defined], rtol=1e-12)
        tp = np.diag(counts)
        direct = np.where(defined, 2 * tp / np.maximum(counts.sum(0) + counts.sum(1), 1), 0)
        np.testing.assert_allclose(r.per_class_f1, direct, rtol=1e-12, atol=1e-15)

    @settings(max_examples=60)
    @given(count_matrices)
    def test_kappa_one_iff_diagonal(self, counts):
        r = compute_metrics(ConfusionMatrix(counts))
        if r.p_e < 1:
            off = counts.sum() - np.trace(counts)
            assert (abs(r.kappa - 1) < 1e-12) == (off == 0)

    @settings(max_examples=40)
    @given(count_matrices, st.permutations(range(5)))
    def test_mf1_relabeling_invariant(self, counts, perm):
        perm = np.asarray(perm)
        a = compute_metrics(ConfusionMatrix(counts))
        b = compute_metrics(ConfusionMatrix(counts[np.ix_(perm, perm)]))
        assert b.mf1 == pytest.approx(a.mf1, abs=1e-12)
        assert b.kappa == pytest.approx(a.kappa, abs=1e-12)


class TestPooling:
    def test_identical_folds_double(self):
        cm = ConfusionMatrix(MATRICES["MASS"])
        np.testing.assert_array_equal(pool([cm, cm]).counts, 2 * cm.counts)
        assert compute_metrics(pool([cm, cm])).acc == compute_metrics(cm).acc

    def test_empty(self):
        with pytest.raises(ValueError):
            pool([])


def sample_results():
    rng = np.random.default_rng(4)
    out = []
    for fold in range(2):
        y = rng.integers(0, 5, 80)
        p = np.where(rng.random(80) < 0.8, y, rng.integers(0, 5, 80))
        out.append(FoldResult(fold, confusion(p, y), {f"s{fold}": (y, p)}))
    return out


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestReport:
    def test_files_and_round_trip(self, tmp_path):
        results = sample_results()
        files = render_report(results, tmp_path)
        for key in ("metrics_csv", "confusion_csv", "metrics_json", "confusion_svg", "hypnogram_svg"):
            assert files[key].is_file()
        header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
        assert header == "fold,acc,mf1,kappa,f1_W,f1_N1,f1_N2,f1_N3,f1_REM"
        rows = read_metrics_csv(tmp_path / "metrics.csv")
        assert sorted(rows) == ["0", "1", "all"]
        for fold, res in enumerate(results):
            r = compute_metrics(res.cm)
            assert rows[str(fold)]["acc"] == r.acc and rows[str(fold)]["kappa"] == r.kappa
            assert [rows[str(fold)][f"f1_{s}"] for s in ("W", "N1", "N2", "N3", "REM")] == list(r.per_class_f1)
        pooled = read_confusion_csv(tmp_path / "confusion.csv")
        np.testing.assert_array_equal(pooled.counts, results[0].cm.counts + results[1].cm.counts)
        assert (tmp_path / "confusion.csv").read_text().splitlines()[0] == ",W,N1,N2,N3,REM"
        doc = json.loads((tmp_path / "metrics.json").read_text())
        assert doc["aggregate"]["n"] == 160

    def test_byte_stable(self, tmp_path):
        render_report(sample_results(), tmp_path / "a")
        render_report(sample_results(), tmp_path / "b")
        for name in ("metrics.csv", "confusion.csv", "metrics.json", "confusion.svg", "hypnogram.svg"):
            assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name), name

    def test_svg_has_no_timestamp(self, tmp_path):
        render_report(sample_results(), tmp_path)
        text = (tmp_path / "confusion.svg").read_text()
        assert "<dc:date>" not in text

    def test_needs_a_fold(self, tmp_path):
        with pytest.raises(ValueError):
            render_report([], tmp_path)

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            render_report(sample_results(), blocker / "sub")

    def test_csv_rejects_wrong_columns(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("fold,acc\n0,1.0\n")
        with pytest.raises(ValueError):
            read_metrics_csv(path)
        write_metrics_csv([], path)
        assert path.read_text().strip().split(",") == METRIC_COLUMNS
