import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from iamseq.data import WindowSet
from iamseq.errors import ContractError
from iamseq.metrics import MetricsReport, confusion_matrix, evaluate
from iamseq.model import IAMBiLSTM, ModelConfig


def test_two_by_two_example():
    r = MetricsReport.from_confusion([[8, 2], [1, 9]])
    assert r.false_alarm_rate == 0.2
    assert r.precision[1] == 9 / 11
    assert r.recall[1] == 0.9
    assert r.f1[1] == pytest.approx(18 / 21, abs=1e-15)
    assert r.f1[1] == pytest.approx(0.85714, abs=1e-5)
    assert r.accuracy == 0.85 and r.misclassification_rate == pytest.approx(0.15)
    assert r.false_discovery[1] == pytest.approx(2 / 11)


def test_confusion_orientation():
    conf = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 1], 3)
    # rows are truth, columns predictions
    assert conf.tolist() == [[1, 1, 0], [0, 1, 0], [0, 1, 0]]


def test_perfect_predictor():
    y = np.repeat(np.arange(4), 5)
    r = MetricsReport.from_confusion(confusion_matrix(y, y, 4))
    assert r.accuracy == 1.0 and r.false_alarm_rate == 0.0
    assert np.all(r.precision == 1.0) and np.all(r.recall == 1.0) and np.all(r.f1 == 1.0)
    assert r.undefined_precision == [] and r.undefined_recall == []


def test_always_normal_predictor():
    y = np.repeat(np.arange(3), 4)
    r = MetricsReport.from_confusion(confusion_matrix(y, np.zeros_like(y), 3))
    assert r.false_alarm_rate == 0.0
    assert r.recall.tolist() == [1.0, 0.0, 0.0]
    assert r.precision[0] == pytest.approx(1 / 3)
    assert r.undefined_precision == [1, 2]
    assert r.f1[1] == 0.0


def test_class_absent_from_truth():
    r = MetricsReport.from_confusion(confusion_matrix([0, 0], [0, 1], 3))
    assert r.undefined_recall == [1, 2]


@settings(max_examples=100, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(2, 8)).map(lambda s: (s[0], s[0])), elements=st.integers(0, 50)))
def test_identities(conf):
    if conf.sum() == 0:
        conf[0, 0] = 1
    r = MetricsReport.from_confusion(conf)
    assert r.accuracy + r.misclassification_rate == pytest.approx(1.0, abs=1e-15)
    assert [c["support"] for c in r.to_dict()["per_class"]] == conf.sum(axis=1).tolist()
    assert np.all((r.f1 >= 0) & (r.f1 <= 1))
    defined = r.precision + r.recall > 0
    hm = 2 * r.precision * r.recall / np.where(defined, r.precision + r.recall, 1)
    np.testing.assert_allclose(r.f1[defined], hm[defined], rtol=1e-12)
    pred = conf.sum(axis=0)
    ok = pred > 0
    np.testing.assert_allclose(r.precision[ok] + r.false_discovery[ok], 1.0, atol=1e-12)
    if conf[0].sum():
        assert r.false_alarm_rate == pytest.approx(1 - conf[0, 0] / conf[0].sum())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 60))
def test_confusion_counts(seed, k, n):
    rng = np.random.default_rng(seed)
    y, p = rng.integers(0, k, n), rng.integers(0, k, n)
    conf = confusion_matrix(y, p, k)
    assert conf.sum() == n
    assert conf.sum(axis=1).tolist() == np.bincount(y, minlength=k).tolist()
    assert conf.sum(axis=0).tolist() == np.bincount(p, minlength=k).tolist()


def test_contracts():
    with pytest.raises(ContractError):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(ContractError):
        confusion_matrix([0, 2], [0, 1], 2)
    with pytest.raises(ContractError):
        MetricsReport.from_confusion(np.zeros((2, 2), int))
    with pytest.raises(ContractError):
        MetricsReport.from_confusion(np.ones((2, 3), int))


def test_write(tmp_path):
    r = MetricsReport.from_confusion([[8, 2], [1, 9]])
    report, conf = r.write(tmp_path)
    d = json.loads(report.read_text())
    assert d["false_alarm_rate"] == 0.2 and d["num_samples"] == 20
    assert conf.read_text().splitlines() == ["truth\\pred,0,1", "0,8,2", "1,1,9"]
    assert "FAR=0.2000" in r.summary()


def test_evaluate_matches_predict():
    cfg = ModelConfig(seq_len=3, num_features=4, hidden=3, fc1=4, fc2=4, num_classes=3)
    model = IAMBiLSTM(cfg, 0)
    rng = np.random.default_rng(0)
    ws = WindowSet(rng.normal(size=(10, 3, 4)), rng.integers(0, 3, 10))
    r = evaluate(model, ws, batch_size=3)
    assert r.accuracy == np.mean(model.predict(ws.inputs) == ws.labels)
