"""Ranking and threshold metrics for binary and multi-label scores."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Metric",
    "MetricsReport",
    "UndefinedMetricError",
    "accuracy",
    "auprc",
    "auroc",
    "binary_report",
    "bootstrap_std",
    "min_se_pplus",
    "multilabel_aurocs",
    "multilabel_report",
]


class UndefinedMetricError(ValueError):
    """The metric is not defined for the given labels (e.g. a single class)."""


class Metric(str, enum.Enum):
    AUROC = "auroc"
    AUPRC = "auprc"
    ACCURACY = "accuracy"
    MIN_SE_PPLUS = "min_se_pplus"


def _prep(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores vs {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    return s, y.astype(bool)


def _tie_ranks(s: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted as 1/2."""
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative labels")
    ranks = _tie_ranks(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _threshold_counts(s: np.ndarray, y: np.ndarray):
    """True/false positive counts when predicting positive for score >= each
    distinct score, thresholds in descending order."""
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    last_of_group = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = np.cumsum(y_sorted)[last_of_group]
    fp = (last_of_group + 1) - tp
    return tp.astype(np.float64), fp.astype(np.float64)


def auprc(scores, labels) -> float:
    """Average precision: sum over thresholds of (recall step) x precision."""
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive label")
    tp, fp = _threshold_counts(s, y)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s, y = _prep(scores, labels)
    if s.size == 0:
        raise UndefinedMetricError("accuracy of an empty set")
    return float(np.mean((s >= threshold) == y))


def min_se_pplus(scores, labels) -> float:
    """Best achievable min(sensitivity, precision) over all score thresholds."""
    s, y = _prep(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("min(Se, P+) needs at least one positive label")
    tp, fp = _threshold_counts(s, y)
    return float(np.max(np.minimum(tp / n_pos, tp / (tp + fp))))


_BINARY = {
    Metric.AUROC: auroc,
    Metric.AUPRC: auprc,
    Metric.ACCURACY: accuracy,
    Metric.MIN_SE_PPLUS: min_se_pplus,
}


@dataclass
class MultilabelAUROC:
    micro: float
    macro: float
    weighted: float
    per_class: list[float | None] = field(default_factory=list)
    degenerate: list[int] = field(default_factory=list)


def multilabel_aurocs(scores, labels) -> MultilabelAUROC:
    """Micro (flattened), macro (mean) and positive-support-weighted AUROC.

    ``scores`` and ``labels`` are (N, C).  Classes with a single label value
    are left out of macro/weighted and listed in ``degenerate``.
    """
    S = np.asarray(scores, dtype=np.float64)
    Y = np.asarray(labels)
    if S.ndim == 1:
        S, Y = S[:, None], Y.reshape(-1, 1)
    if S.shape != Y.shape:
        raise ValueError(f"scores {S.shape} vs labels {Y.shape}")
    per_class: list[float | None] = []
    degenerate = []
    for c in range(S.shape[1]):
        try:
            per_class.append(auroc(S[:, c], Y[:, c]))
        except UndefinedMetricError:
            per_class.append(None)
            degenerate.append(c)
    ok = [c for c, a in enumerate(per_class) if a is not None]
    if not ok:
        raise UndefinedMetricError("every class has a single label value")
    vals = np.array([per_class[c] for c in ok])
    support = Y[:, ok].sum(axis=0).astype(np.float64)
    micro = auroc(S.reshape(-1), Y.reshape(-1))
    return MultilabelAUROC(
        micro=micro,
        macro=float(vals.mean()),
        weighted=float(np.sum(vals * support) / support.sum()),
        per_class=per_class,
        degenerate=degenerate,
    )


def bootstrap_std(scores, labels, metric=Metric.AUROC, k: int = 100, seed: int = 0,
                  max_retries: int = 1000) -> float:
    """Sample std (ddof=1) of ``metric`` over ``k`` with-replacement resamples.

    Resamples on which the metric is undefined are redrawn, so exactly ``k``
    values enter the estimate.
    """
    if k < 2:
        raise ValueError("bootstrap needs k >= 2")
    s, y = _prep(scores, labels)
    fn = _BINARY[Metric(metric)]
    rng = np.random.default_rng(seed)
    values = np.empty(k)
    n = s.size
    for r in range(k):
        for _ in range(max_retries):
            idx = rng.integers(0, n, size=n)
            try:
                values[r] = fn(s[idx], y[idx])
                break
            except UndefinedMetricError:
                continue
        else:
            raise UndefinedMetricError(
                f"{max_retries} consecutive bootstrap resamples had an undefined {Metric(metric).value}"
            )
    return float(np.std(values, ddof=1))


@dataclass
class MetricsReport:
    values: dict[str, float] = field(default_factory=dict)
    stds: dict[str, float | None] = field(default_factory=dict)

    def add(self, name: str, value: float, std: float | None = None) -> None:
        self.values[name] = float(value)
        self.stds[name] = None if std is None else float(std)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value", "std"])
            for name, v in self.values.items():
                std = self.stds.get(name)
                w.writerow([name, repr(v), "" if std is None else repr(std)])
        return path

    @classmethod
    def from_csv(cls, path) -> "MetricsReport":
        rep = cls()
        with Path(path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                rep.add(row["metric"], float(row["value"]), float(row["std"]) if row["std"] else None)
        return rep


def binary_report(scores, labels, bootstrap: int = 100, seed: int = 0) -> MetricsReport:
    rep = MetricsReport()
    for m, fn in _BINARY.items():
        std = bootstrap_std(scores, labels, m, k=bootstrap, seed=seed) if bootstrap else None
        rep.add(m.value, fn(scores, labels), std)
    return rep


def multilabel_report(scores, labels) -> MetricsReport:
    ml = multilabel_aurocs(scores, labels)
    rep = MetricsReport()
    rep.add("micro_auroc", ml.micro)
    rep.add("macro_auroc", ml.macro)
    rep.add("weighted_auroc", ml.weighted)
    return rep
