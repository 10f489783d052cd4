import json

import numpy as np
import pandas as pd
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.feature_extraction.text import CountVectorizer
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import f1_score
from sklearn.model_selection import train_test_split
from torch import nn

from app.embed import AssembledDataset
from app.errors import DatasetError, ReportError, ShapeError
from app.harness import (
    AVERAGE_F1,
    TRIGGER_TOKENS,
    balance,
    emit_report,
    evaluate,
    invert_min_max,
    load_and_balance,
    make_synthetic_corpus,
    metrics_from_counts,
    min_max_scale,
    reference_for,
    run_repeats,
    split,
    summarize,
    write_synthetic_corpus,
)
from app.harness.training import batch_indices
from app.preprocess import strip_noise, tokenize
from app.schemas import DistillRecord, EpochRecord, RunReport, SampleRecord


# ---------------------------
# Metrics
# ---------------------------
def test_metrics_worked_example():
    m = metrics_from_counts(tp=80, tn=90, fp=10, fn=20)
    assert m.accuracy == pytest.approx(0.85)
    assert m.precision == pytest.approx(0.8889, abs=1e-4)
    assert m.recall == pytest.approx(0.8)
    assert m.f1 == pytest.approx(0.8421, abs=1e-4)
    assert m.undefined == []


@settings(max_examples=300, deadline=None)
@given(tp=st.integers(0, 40), tn=st.integers(0, 40), fp=st.integers(0, 40), fn=st.integers(0, 40))
def test_metrics_agree_with_sklearn(tp, tn, fp, fn):
    if tp + tn + fp + fn == 0:
        return
    truth = [1] * tp + [0] * tn + [0] * fp + [1] * fn
    predicted = [1] * tp + [0] * tn + [1] * fp + [0] * fn
    m = metrics_from_counts(tp, tn, fp, fn)
    assert m.f1 == pytest.approx(f1_score(truth, predicted, zero_division=0))
    assert m.accuracy == pytest.approx((tp + tn) / len(truth))


def test_metrics_match_closed_form_over_random_matrices():
    counts = np.random.default_rng(0).integers(1, 500, size=(10_000, 4))
    tp, tn, fp, fn = counts.T.astype(np.float64)
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    f1 = 2 * tp / (2 * tp + fp + fn)
    accuracy = (tp + tn) / counts.sum(axis=1)
    got = np.array([[m.accuracy, m.precision, m.recall, m.f1]
                    for m in (metrics_from_counts(*map(int, row)) for row in counts)])
    np.testing.assert_allclose(got, np.stack([accuracy, precision, recall, f1], axis=1), rtol=1e-12)


def test_zero_denominators_are_flagged():
    m = metrics_from_counts(tp=0, tn=5, fp=0, fn=3)
    assert m.precision == 0.0 and m.f1 == 0.0
    assert m.undefined == ["precision", "f1"]
    with pytest.raises(DatasetError):
        metrics_from_counts(0, 0, 0, 0)


class _FirstTwoChannels(nn.Module):
    """Predicts from the first two channels of the first position."""

    def __init__(self):
        super().__init__()
        self.unused = nn.Parameter(torch.zeros(1))
        self.input_shape = (4, 3)

    def logits(self, x):
        return x[:, 0, :2]


def _dataset(labels, length=4, channels=3):
    inputs = torch.zeros(len(labels), length, channels)
    for i, label in enumerate(labels):
        inputs[i, 0, label] = 1.0
    return AssembledDataset(inputs, torch.tensor(labels), [f"c{i}.sol" for i in range(len(labels))],
                            "reentrancy", length, 1)


def test_evaluate_counts_confusion():
    test = _dataset([1, 1, 0, 0, 1])
    test.inputs[0, 0] = torch.tensor([1.0, 0.0, 0.0])  # one missed positive
    m = evaluate(_FirstTwoChannels(), test, batch_size=2)
    assert (m.tp, m.tn, m.fp, m.fn) == (2, 2, 0, 1)


def test_evaluate_checks_shapes():
    with pytest.raises(ShapeError):
        evaluate(_FirstTwoChannels(), _dataset([0, 1], length=6))


# ---------------------------
# Balancing and splitting
# ---------------------------
def _samples(positives, negatives):
    return ([SampleRecord(source_id=f"p{i}.sol", flag=1) for i in range(positives)]
            + [SampleRecord(source_id=f"n{i}.sol", flag=0) for i in range(negatives)])


def test_balance_undersamples_majority():
    manifest = balance(_samples(12, 5), "timestamp", seed=1)
    assert len(manifest.positives) == len(manifest.negatives) == 5
    assert manifest.vulnerability == "timestamp"
    assert balance(_samples(12, 5), "timestamp", seed=1) == manifest


def test_balance_needs_both_classes():
    with pytest.raises(DatasetError, match="both classes"):
        balance(_samples(4, 0), "timestamp", seed=0)


def test_split_is_disjoint_and_stratified():
    manifest = balance(_samples(10, 10), "delegatecall", seed=0)
    train, test = split(manifest, ratio=0.8, seed=3)
    assert not set(train.source_ids()) & set(test.source_ids())
    assert len(train.samples) == 16 and len(test.samples) == 4
    assert len(test.positives) == len(test.negatives) == 2
    assert split(manifest, ratio=0.8, seed=3) == (train, test)


def test_split_rejects_tiny_manifest():
    with pytest.raises(DatasetError):
        split(balance(_samples(2, 2), "delegatecall", seed=0))


def test_load_and_balance_reads_labels(tmp_path):
    contracts_dir, labels_path = write_synthetic_corpus(make_synthetic_corpus(20, "delegatecall", seed=0), tmp_path)
    (contracts_dir / "delegatecall_0000.sol").unlink()
    manifest = load_and_balance(contracts_dir, labels_path, "delegatecall", seed=0)
    assert "delegatecall_0000.sol" not in manifest.source_ids()
    assert len(manifest.positives) == len(manifest.negatives)


def test_batch_indices_fold_singletons():
    batches = batch_indices(9, 4, torch.Generator().manual_seed(0))
    assert [len(b) for b in batches] == [4, 5]
    assert sorted(torch.cat(batches).tolist()) == list(range(9))


# ---------------------------
# Synthetic corpus
# ---------------------------
@pytest.mark.parametrize("vulnerability", sorted(TRIGGER_TOKENS))
def test_trigger_tokens_only_in_vulnerable_samples(vulnerability):
    contracts = make_synthetic_corpus(30, vulnerability, seed=2)
    assert sum(c.label.flag for c in contracts) == 15
    for contract in contracts:
        tokens = set(tokenize(strip_noise(contract.source)))
        present = all(t in tokens for t in TRIGGER_TOKENS[vulnerability])
        assert present == contract.label.vulnerable, contract.path


def test_synthetic_corpus_validation():
    with pytest.raises(DatasetError):
        make_synthetic_corpus(10, "reentrancy", seed=0)
    with pytest.raises(DatasetError):
        make_synthetic_corpus(40, "front-running", seed=0)


def test_bag_of_words_separates_synthetic_classes():
    contracts = make_synthetic_corpus(200, "reentrancy", seed=11)
    texts = [c.source for c in contracts]
    labels = [c.label.flag for c in contracts]
    train_x, test_x, train_y, test_y = train_test_split(texts, labels, test_size=0.25, random_state=0, stratify=labels)
    vectorizer = CountVectorizer(analyzer=lambda s: tokenize(strip_noise(s)))
    model = LogisticRegression(max_iter=1000).fit(vectorizer.fit_transform(train_x), train_y)
    assert f1_score(test_y, model.predict(vectorizer.transform(test_x))) >= 0.99


# ---------------------------
# Reporting
# ---------------------------
def test_min_max_scale_range_and_inverse():
    scaled, lo, hi = min_max_scale([3.0, 1.0, 2.0])
    np.testing.assert_allclose(scaled, [0.5, 0.04, 0.27])
    np.testing.assert_allclose(invert_min_max(scaled, lo, hi), [3.0, 1.0, 2.0])


def test_min_max_constant_series_maps_to_lower():
    scaled, _, _ = min_max_scale([0.7, 0.7, 0.7])
    np.testing.assert_allclose(scaled, [0.04] * 3)
    assert min_max_scale([])[0].size == 0


def _reports():
    curves = [EpochRecord(epoch=e, train_loss=1.0 / e) for e in range(1, 4)]
    history = [DistillRecord(step=s, l_mse=0.1, l_kl=0.2, l_clf=0.3, l_concat=0.28 - 0.01 * s) for s in range(5)]
    return [
        RunReport(name="teacher", config={}, curves=curves, metrics=metrics_from_counts(10, 9, 1, 0)),
        RunReport(name="student-baseline", config={}, curves=curves, metrics=metrics_from_counts(8, 8, 2, 2)),
        RunReport(name="student-distilled", config={}, distill_history=history,
                  metrics=metrics_from_counts(9, 9, 1, 1)),
    ]


def test_emit_report_writes_tables_and_manifest(tmp_path):
    written = emit_report(_reports(), tmp_path, vulnerability="reentrancy", command="distill")
    names = {p.name for p in written}
    assert {"metrics.csv", "curves.csv", "distill_history.csv", "distill_comparison.csv",
            "distill_comparison.json", "reference_comparison.csv", "reports.json"} <= names

    metrics = pd.read_csv(tmp_path / "metrics.csv")
    assert metrics["name"].tolist() == ["teacher", "student-baseline", "student-distilled"]
    comparison = pd.read_csv(tmp_path / "distill_comparison.csv")
    assert comparison["pre_distill_scaled"].dropna().between(0.04, 0.5).all()
    assert len(comparison) == 5

    reference = pd.read_csv(tmp_path / "reference_comparison.csv")
    assert set(reference["name"]) == {"student-baseline", "student-distilled"}

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["files"]["metrics.csv"]["command"] == "distill"


def test_emit_report_needs_reports(tmp_path):
    with pytest.raises(ReportError):
        emit_report([], tmp_path)


def test_reference_lookup():
    assert reference_for("reentrancy")["f1"] == pytest.approx(89.65)
    assert reference_for("reentrancy", distilled=False)["f1"] == pytest.approx(83.87)
    assert reference_for("cdav")["f1"] == pytest.approx(90.46)
    assert reference_for("timestamp", "no-multistage")["accuracy"] == pytest.approx(91.67)
    assert reference_for("timestamp", "no-such-variant") is None
    assert 85.0 < AVERAGE_F1 < 95.0


# ---------------------------
# Repeats
# ---------------------------
def test_summarize_single_run_has_zero_spread():
    summary = summarize(_reports()[:1])
    assert summary.std == {"accuracy": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}
    assert summary.mean["accuracy"] == pytest.approx(0.95)


def test_run_repeats_passes_consecutive_seeds():
    seen = []

    def workflow(seed):
        seen.append(seed)
        tp = 10 if seed % 2 else 8
        return RunReport(name="student-distilled", config={}, metrics=metrics_from_counts(tp, 10, 10 - tp, 0))

    summary = run_repeats(workflow, n=3, base_seed=5)
    assert seen == [5, 6, 7]
    assert summary.seeds == (5, 6, 7)
    assert [r.repeat_index for r in summary.reports] == [0, 1, 2]
    assert summary.std["accuracy"] > 0
    with pytest.raises(DatasetError):
        run_repeats(workflow, n=0)
