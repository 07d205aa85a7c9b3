import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_auprc, brute_min_se_pplus, pairwise_auroc
from supcon_ehr.metrics import (
    Metric,
    MetricsReport,
    UndefinedMetricError,
    accuracy,
    auprc,
    auroc,
    bootstrap_std,
    min_se_pplus,
    multilabel_aurocs,
)


def test_auroc_examples():
    assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auroc([0.3, 0.7], [1, 0]) == 0.0
    assert auroc([0.8, 0.6, 0.4], [1, 0, 1]) == pytest.approx(pairwise_auroc([0.8, 0.6, 0.4], [1, 0, 1]))
    assert auroc([0.8, 0.6, 0.4], [1, 0, 1]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])


def test_auprc_examples():
    assert auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auprc([0.5] * 8, [1, 1, 0, 0, 0, 0, 0, 0]) == pytest.approx(0.25)
    s, y = [0.9, 0.7, 0.5, 0.3], [1, 0, 1, 0]
    # brute-force enumeration gives 1/2 * 1 + 1/2 * 2/3
    assert brute_auprc(s, y) == pytest.approx(5 / 6)
    assert auprc(s, y) == pytest.approx(5 / 6, abs=1e-12)
    with pytest.raises(UndefinedMetricError):
        auprc([0.1], [0])


def test_accuracy_examples():
    assert accuracy([0.9, 0.1], [1, 0]) == 1.0
    assert accuracy([0.6, 0.4], [0, 1]) == 0.0
    # all-negative predictor on a test set with 3,236 samples, 11.56% positive
    n, pos = 3236, 374
    y = np.r_[np.ones(pos), np.zeros(n - pos)]
    assert accuracy(np.zeros(n), y) == pytest.approx(1 - 0.1156, abs=5e-5)


def test_min_se_pplus_examples():
    assert min_se_pplus([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    s, y = [0.8, 0.6, 0.4], [1, 0, 1]
    assert brute_min_se_pplus(s, y) == pytest.approx(2 / 3)
    assert min_se_pplus(s, y) == pytest.approx(2 / 3, abs=1e-12)
    assert min_se_pplus([0.3] * 10, [1] * 3 + [0] * 7) == pytest.approx(0.3)


def test_multilabel_reductions():
    rng = np.random.default_rng(0)
    s = rng.random((30, 1))
    y = rng.integers(0, 2, (30, 1))
    ml = multilabel_aurocs(s, y)
    assert ml.micro == ml.macro == ml.weighted == auroc(s[:, 0], y[:, 0])

    y2 = np.array([[1, 1], [0, 0], [1, 1], [0, 0]])
    s2 = np.array([[0.9, 0.2], [0.1, 0.8], [0.8, 0.7], [0.3, 0.1]])
    ml = multilabel_aurocs(s2, y2)
    a, b = auroc(s2[:, 0], y2[:, 0]), auroc(s2[:, 1], y2[:, 1])
    assert ml.macro == pytest.approx((a + b) / 2) and ml.weighted == pytest.approx((a + b) / 2)


def test_multilabel_degenerate_class_flagged():
    s = np.array([[0.9, 0.5], [0.1, 0.4], [0.6, 0.3]])
    y = np.array([[1, 0], [0, 0], [1, 0]])
    ml = multilabel_aurocs(s, y)
    assert ml.degenerate == [1] and ml.macro == 1.0
    with pytest.raises(UndefinedMetricError):
        multilabel_aurocs(s[:, 1:], y[:, 1:])


def test_micro_matches_flattened_pairs():
    rng = np.random.default_rng(1)
    s = np.round(rng.random((12, 3)), 1)
    y = rng.integers(0, 2, (12, 3))
    assert multilabel_aurocs(s, y).micro == pytest.approx(pairwise_auroc(s.ravel(), y.ravel()), abs=1e-12)


def test_bootstrap():
    s = np.r_[np.linspace(0.6, 1, 20), np.linspace(0, 0.4, 20)]
    y = np.r_[np.ones(20), np.zeros(20)]
    assert bootstrap_std(s, y, Metric.AUROC, k=20, seed=0) == 0.0
    rng = np.random.default_rng(2)
    s2, y2 = rng.random(60), rng.integers(0, 2, 60)
    assert bootstrap_std(s2, y2, "auprc", 30, 5) == bootstrap_std(s2, y2, "auprc", 30, 5)
    with pytest.raises(ValueError):
        bootstrap_std(s2, y2, k=1)


def test_bootstrap_redraws_degenerate():
    # one positive among 20: many resamples miss it and must be redrawn
    s = np.linspace(0, 1, 20)
    y = np.zeros(20)
    y[-1] = 1
    assert bootstrap_std(s, y, "auroc", k=50, seed=0) >= 0.0


def test_report_csv_roundtrip(tmp_path):
    rep = MetricsReport()
    rep.add("auroc", 0.1 + 0.2, 0.01)
    rep.add("accuracy", 0.5)
    path = rep.to_csv(tmp_path / "m.csv")
    assert path.read_text().splitlines()[0] == "metric,value,std"
    back = MetricsReport.from_csv(path)
    assert back.values == rep.values and back.stds == rep.stds


scored = st.integers(2, 40).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 5), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
)


@settings(max_examples=200)
@given(data=scored)
def test_auroc_properties(data):
    s, y = np.array(data[0], float) / 5, np.array(data[1])
    if y.min() == y.max():
        return
    a = auroc(s, y)
    assert a == pytest.approx(pairwise_auroc(s, y), abs=1e-12)
    assert abs(a + auroc(s, 1 - y) - 1.0) < 1e-12
    assert abs(auroc(np.exp(3 * s) - 7, y) - a) < 1e-12


@settings(max_examples=100)
@given(data=scored)
def test_accuracy_is_one_minus_hamming(data):
    s, y = np.array(data[0]) % 2, np.array(data[1])
    assert accuracy(s.astype(float), y) == pytest.approx(1 - np.mean(s != y))
