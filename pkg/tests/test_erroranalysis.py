import csv
from types import SimpleNamespace

import numpy as np
import pytest

from busclass import data as dat
from busclass import erroranalysis as err
from busclass import metrics as met
from busclass import model as mod
from busclass.data import ClassLabel

from conftest import make_tree

PAPER_MATRIX = ((35, 1, 1), (6, 34, 9), (2, 4, 37))


def fake_classifier():
    return SimpleNamespace(
        spec=mod.ClassifierSpec(),
        preprocessing=mod.PreprocessingContract(target_size=(150, 150), rescale_factor=1 / 255),
        version="test",
    )


def patch_predictions(monkeypatch, rows):
    """Make predict_batch hand out ``rows`` sequentially, sized per call."""
    rows = np.asarray(rows, dtype=np.float64)
    cursor = {"at": 0}

    def fake_predict(classifier, pixels):
        n = pixels.shape[0]
        start = cursor["at"]
        cursor["at"] += n
        return rows[start:start + n]

    monkeypatch.setattr(err.mod, "predict_batch", fake_predict)


def soft_one_hot(index, confidence=0.9):
    row = np.full(3, (1 - confidence) / 2)
    row[index] = confidence
    return row


@pytest.fixture()
def matrix_manifest(tmp_path):
    """Manifest whose test split realizes the published confusion matrix row sums."""
    make_tree(tmp_path, {"normal": 37, "benign": 49, "malignant": 43}, size=(12, 12))
    manifest = dat.ingest(tmp_path)
    records = tuple(
        dat.ImageRecord(r.path, r.label, "test", r.is_mask, r.byte_digest)
        for r in manifest.records
    )
    return dat.DatasetManifest(records=records)


class TestAnalyze:
    def test_perfect_predictions_empty_report(self, monkeypatch, matrix_manifest):
        records = matrix_manifest.split_records("test")
        patch_predictions(monkeypatch, [soft_one_hot(int(r.label)) for r in records])
        report = err.analyze(fake_classifier(), matrix_manifest, "test")
        assert report.entries == ()
        assert report.pair_counts == {}
        assert report.sample_count == 129
        assert all(rate == 0.0 for rate in report.per_class_error_rate.values())

    def test_paper_matrix_realization(self, monkeypatch, matrix_manifest):
        # per-class predicted labels following the published matrix rows
        records = matrix_manifest.split_records("test")
        by_label = {label: iter([]) for label in ClassLabel}
        for label in ClassLabel:
            sequence = []
            for predicted, count in enumerate(PAPER_MATRIX[int(label)]):
                sequence.extend([predicted] * count)
            by_label[label] = iter(sequence)
        rows = [soft_one_hot(next(by_label[r.label])) for r in records]
        patch_predictions(monkeypatch, rows)

        report = err.analyze(fake_classifier(), matrix_manifest, "test")
        assert len(report.entries) == 23  # off-diagonal mass
        assert report.pair_counts[(ClassLabel.BENIGN, ClassLabel.MALIGNANT)] == 9

        # off-diagonals agree exactly with the metrics engine on the same predictions
        truth = [int(r.label) for r in records]
        predicted = [int(np.argmax(row)) for row in rows]
        matrix = met.confusion(truth, predicted)
        for (true_label, pred_label), count in report.pair_counts.items():
            assert matrix.array[int(true_label), int(pred_label)] == count
        assert sum(report.pair_counts.values()) == matrix.total - matrix.trace

    def test_single_misclassification_fields(self, monkeypatch, tmp_path):
        make_tree(tmp_path, {"malignant": 1}, size=(10, 10))
        manifest = dat.ingest(tmp_path)
        records = tuple(
            dat.ImageRecord(r.path, r.label, "test", r.is_mask, r.byte_digest)
            for r in manifest.records
        )
        manifest = dat.DatasetManifest(records=records)
        patch_predictions(monkeypatch, [[0.2, 0.5, 0.3]])
        report = err.analyze(fake_classifier(), manifest, "test")
        (entry,) = report.entries
        assert entry.true_label is ClassLabel.MALIGNANT
        assert entry.predicted_label is ClassLabel.BENIGN
        assert entry.confidence == pytest.approx(0.5)
        assert entry.margin == pytest.approx(0.2)

    def test_sorted_by_descending_confidence(self, monkeypatch, matrix_manifest):
        records = matrix_manifest.split_records("test")
        rng = np.random.default_rng(0)
        rows = []
        for r in records:
            wrong = (int(r.label) + 1) % 3
            rows.append(soft_one_hot(wrong, confidence=float(rng.uniform(0.4, 0.99))))
        patch_predictions(monkeypatch, rows)
        report = err.analyze(fake_classifier(), matrix_manifest, "test")
        confidences = [e.confidence for e in report.entries]
        assert confidences == sorted(confidences, reverse=True)
        assert len(report.entries) == len(records)

    def test_empty_split_raises(self, overfit_manifest):
        # the overfit split leaves the test split empty
        with pytest.raises(err.AnalysisError):
            err.analyze(fake_classifier(), overfit_manifest, "test")

    def test_real_model_end_to_end(self, toy_trained, toy_manifest):
        report = err.analyze(toy_trained, toy_manifest, "test")
        assert report.sample_count == len(toy_manifest.split_records("test"))
        for entry in report.entries:
            assert entry.true_label != entry.predicted_label
            assert entry.confidence >= 1 / 3
            assert entry.margin >= 0.0
            assert abs(sum(entry.probabilities) - 1.0) < 1e-5


class TestGallery:
    def test_empty_report(self, tmp_path):
        report = err.ErrorReport(
            entries=(), pair_counts={}, per_class_error_rate={}, split="test", sample_count=4
        )
        index = err.export_gallery(report, tmp_path / "gallery")
        lines = index.read_text().strip().splitlines()
        assert len(lines) == 1  # header only

    def test_entries_copied_and_index_parses_back(self, monkeypatch, tmp_path):
        make_tree(tmp_path / "tree", {"normal": 2, "benign": 1}, size=(10, 10))
        manifest = dat.ingest(tmp_path / "tree")
        records = tuple(
            dat.ImageRecord(r.path, r.label, "test", r.is_mask, r.byte_digest)
            for r in manifest.records
        )
        manifest = dat.DatasetManifest(records=records)
        rows = [[0.1, 0.7, 0.2], [0.15, 0.25, 0.6], [0.8, 0.15, 0.05]]
        patch_predictions(monkeypatch, rows)
        report = err.analyze(fake_classifier(), manifest, "test")
        assert len(report.entries) == 3

        out = tmp_path / "gallery"
        index = err.export_gallery(report, out)
        with open(index, newline="") as fh:
            parsed = list(csv.DictReader(fh))
        assert len(parsed) == 3
        for row, entry in zip(parsed, report.entries):
            assert row["path"] == entry.record.path
            assert row["true"] == entry.true_label.label_name
            assert row["predicted"] == entry.predicted_label.label_name
            assert float(row["confidence"]) == entry.confidence
            assert float(row["margin"]) == entry.margin
            assert [float(row[f"p{i}"]) for i in range(3)] == list(entry.probabilities)
        copies = [p for p in out.iterdir() if p.suffix == ".png"]
        assert len(copies) == 3
        assert all("true-" in p.name and "pred-" in p.name and "conf-" in p.name for p in copies)

    def test_idempotent_overwrite(self, monkeypatch, tmp_path):
        make_tree(tmp_path / "tree", {"normal": 1}, size=(10, 10))
        manifest = dat.ingest(tmp_path / "tree")
        records = tuple(
            dat.ImageRecord(r.path, r.label, "test", r.is_mask, r.byte_digest)
            for r in manifest.records
        )
        manifest = dat.DatasetManifest(records=records)
        patch_predictions(monkeypatch, [[0.1, 0.8, 0.1], [0.1, 0.8, 0.1]])
        report = err.analyze(fake_classifier(), manifest, "test")
        out = tmp_path / "g"
        first = err.export_gallery(report, out).read_text()
        # cursor continues on the second patched call
        second = err.export_gallery(report, out).read_text()
        assert first == second
