"""Independent reference implementations used only by the tests."""

import numpy as np


def central_diff(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place and restored)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + step
        fp = f()
        x[idx] = old - step
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * step)
    return g


def max_rel_err(analytic, numeric, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dominating."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def pairwise_auroc(scores, labels) -> float:
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else 0.5 if p == q else 0.0
    return total / (pos.size * neg.size)


def _pr_at_thresholds(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    out = []
    for t in sorted(set(s.tolist()), reverse=True):
        pred = s >= t
        tp = np.sum(pred & y)
        out.append((tp / pred.sum(), tp / y.sum()))
    return out


def brute_auprc(scores, labels) -> float:
    prev_recall = 0.0
    ap = 0.0
    for precision, recall in _pr_at_thresholds(scores, labels):
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def brute_min_se_pplus(scores, labels) -> float:
    return max(min(p, r) for p, r in _pr_at_thresholds(scores, labels))


def per_sample_scr(Z, y, tau):
    """Direct double loop over the regularizer's definition, with the singleton skip."""
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    unit = Z / np.linalg.norm(Z, axis=1, keepdims=True)
    sim = unit @ unit.T
    total = 0.0
    for i in range(n):
        same = [j for j in range(n) if j != i and y[j] == y[i]]
        if not same:
            continue
        denom = sum(np.exp(sim[i, k] / tau) for k in range(n) if k != i)
        total += sum(np.log(np.exp(sim[i, j] / tau) / denom) for j in same) / len(same)
    return -total / n


def five_point_diff(f, x: np.ndarray, step: float = 1e-3) -> np.ndarray:
    """Fourth-order central stencil; far less roundoff than a tiny two-point step."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        vals = []
        for k in (2, 1, -1, -2):
            x[idx] = old + k * step
            vals.append(f())
        x[idx] = old
        g[idx] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * step)
    return g


def normwise_rel_err(analytic, numeric, floor: float = 1e-12) -> float:
    """max |a - n| / max(max |a|, max |n|) over one gradient array."""
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    if not a.size:
        return 0.0
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(a)), np.max(np.abs(n)), floor))
