"""Contrastive cross-entropy losses, the supervised contrastive regularizer,
and their multi-label combinations, each with a hand-derived backward pass.

Shapes used throughout::

    Z       (N, H)   encoder outputs for one mini-batch
    labels  (N, C)   binary targets
    U, V    (C, H)   positive / negative anchors, one row per class

Per-class logits are ``a = Z @ u_c`` and ``b = Z @ v_c``.  The cross-entropy
terms use raw dot products; the regularizer uses cosine similarity.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numerics import log_sigmoid, normalize_rows, sigmoid

__all__ = [
    "AnchorSet",
    "BatchEmbeddings",
    "LossConfig",
    "LossKind",
    "LossOutput",
    "bce_loss",
    "cbce_loss",
    "combined_loss",
    "csce_loss",
    "predict_proba",
    "predict_proba_matrix",
    "scr_loss",
]


class LossKind(str, enum.Enum):
    BCE = "bce"
    BCE_SCR = "bce+scr"
    CBCE_SCR = "cbce+scr"
    CSCE_SCR = "csce+scr"

    @property
    def family(self) -> str:
        """Which cross-entropy term (and probability read-out) this kind uses."""
        return {"bce": "bce", "bce+scr": "bce", "cbce+scr": "cbce", "csce+scr": "csce"}[
            self.value
        ]

    @property
    def has_regularizer(self) -> bool:
        return self is not LossKind.BCE


@dataclass(frozen=True)
class LossConfig:
    kind: LossKind = LossKind.BCE
    lam: float = 0.0
    tau: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lambda must be a non-negative real, got {self.lam}")
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lam != 0 and not self.kind.has_regularizer:
            raise ValueError(
                f"lambda={self.lam} has no effect with loss '{self.kind.value}'; "
                "use 'bce+scr' to add the regularizer"
            )


@dataclass(frozen=True)
class BatchEmbeddings:
    Z: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=np.float64)
        y = np.asarray(self.labels)
        if y.ndim == 1:
            y = y[:, None]
        if Z.ndim != 2 or Z.shape[0] < 1 or Z.shape[1] < 1:
            raise ValueError(f"Z must be a non-empty (N, H) matrix, got shape {Z.shape}")
        if y.ndim != 2 or y.shape[0] != Z.shape[0] or y.shape[1] < 1:
            raise ValueError(f"labels shape {y.shape} does not match Z rows {Z.shape[0]}")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be exactly 0 or 1")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "labels", y.astype(np.float64))

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class AnchorSet:
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.U, dtype=np.float64)
        V = np.asarray(self.V, dtype=np.float64)
        if U.ndim != 2 or U.shape != V.shape:
            raise ValueError(f"anchor shapes differ: U {U.shape}, V {V.shape}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)


@dataclass
class LossOutput:
    value: float
    grad_Z: np.ndarray
    grad_U: np.ndarray
    grad_V: np.ndarray
    # per-component values, for diagnostics only
    ce_value: float = float("nan")
    scr_value: float = 0.0


def _check(emb: BatchEmbeddings, anchors: AnchorSet) -> None:
    C, H = anchors.U.shape
    if emb.Z.shape[1] != H:
        raise ValueError(f"embedding dim {emb.Z.shape[1]} != anchor dim {H}")
    if emb.num_classes != C:
        raise ValueError(f"labels have {emb.num_classes} classes, anchors have {C}")


# Single-class kernels.  Each returns (value, dvalue/da, dvalue/db) with the
# value already averaged over the N samples.

def _bce_class(a, y):
    n = a.shape[0]
    terms = -(y * log_sigmoid(a) + (1.0 - y) * log_sigmoid(-a))
    return np.sum(terms) / n, (sigmoid(a) - y) / n, None


def _cbce_class(a, b, y):
    n = a.shape[0]
    pos = log_sigmoid(a) + log_sigmoid(-b)
    neg = log_sigmoid(b) + log_sigmoid(-a)
    value = -np.sum(y * pos + (1.0 - y) * neg) / n
    return value, (sigmoid(a) - y) / n, (sigmoid(b) - (1.0 - y)) / n


def _csce_class(a, b, y):
    n = a.shape[0]
    lse = np.logaddexp(a, b)
    value = np.sum(lse - (y * a + (1.0 - y) * b)) / n
    p = sigmoid(a - b)
    return value, (p - y) / n, (y - p) / n


def _cross_entropy(family: str, emb: BatchEmbeddings, anchors: AnchorSet) -> LossOutput:
    _check(emb, anchors)
    Z, Y = emb.Z, emb.labels
    U, V = anchors.U, anchors.V
    C = U.shape[0]
    value = 0.0
    grad_Z = np.zeros_like(Z)
    grad_U = np.zeros_like(U)
    grad_V = np.zeros_like(V)
    for c in range(C):
        a = Z @ U[c]
        y = Y[:, c]
        if family == "bce":
            v_c, ga, gb = _bce_class(a, y)
        else:
            b = Z @ V[c]
            kernel = _cbce_class if family == "cbce" else _csce_class
            v_c, ga, gb = kernel(a, b, y)
        value += v_c
        grad_Z += np.outer(ga, U[c])
        grad_U[c] = ga @ Z
        if gb is not None:
            grad_Z += np.outer(gb, V[c])
            grad_V[c] = gb @ Z
    value /= C
    grad_Z /= C
    grad_U /= C
    grad_V /= C
    value = float(value)
    return LossOutput(value, grad_Z, grad_U, grad_V, ce_value=value)


def bce_loss(emb: BatchEmbeddings, anchors: AnchorSet) -> LossOutput:
    """Mean binary cross entropy over classes and samples, using only ``U``."""
    return _cross_entropy("bce", emb, anchors)


def cbce_loss(emb: BatchEmbeddings, anchors: AnchorSet) -> LossOutput:
    """Contrastive binary cross entropy: product of sigmoids against both anchors."""
    return _cross_entropy("cbce", emb, anchors)


def csce_loss(emb: BatchEmbeddings, anchors: AnchorSet) -> LossOutput:
    """Contrastive softmax cross entropy: two-way softmax over the anchor logits."""
    return _cross_entropy("csce", emb, anchors)


def scr_loss(Z, labels_c, tau: float) -> tuple[float, np.ndarray]:
    """Supervised contrastive regularizer for one binary label vector.

    A sample whose label is not shared by any other sample in the batch
    contributes zero, while the outer normalization stays ``1/N``.
    The gradient includes the derivative of the cosine normalization.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(labels_c).reshape(-1)
    n = Z.shape[0]
    if n < 2:
        raise ValueError(f"the regularizer needs at least 2 samples, got {n}")
    if y.shape[0] != n:
        raise ValueError(f"{y.shape[0]} labels for {n} embeddings")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")

    Zn, norms = normalize_rows(Z)
    S = np.clip(Zn @ Zn.T, -1.0, 1.0) / tau
    off = ~np.eye(n, dtype=bool)
    masked = np.where(off, S, -np.inf)
    row_max = np.max(masked, axis=1, keepdims=True)
    e = np.where(off, np.exp(masked - row_max), 0.0)
    denom = np.sum(e, axis=1, keepdims=True)
    log_prob = np.where(off, S - (row_max + np.log(denom)), 0.0)
    P = e / denom

    same = (y[:, None] == y[None, :]) & off
    n_pos = same.sum(axis=1)
    active = n_pos > 0
    inv = np.zeros(n)
    inv[active] = 1.0 / n_pos[active]

    value = -np.sum(inv * np.sum(np.where(same, log_prob, 0.0), axis=1)) / n

    # d value / d S_ij for j != i
    G = -(same * inv[:, None] - P * active[:, None]) / n
    G[~off] = 0.0
    grad_Zn = (G + G.T) @ Zn / tau
    radial = np.sum(grad_Zn * Zn, axis=1, keepdims=True)
    grad_Z = (grad_Zn - Zn * radial) / norms[:, None]
    return float(value), grad_Z


def combined_loss(cfg: LossConfig, emb: BatchEmbeddings, anchors: AnchorSet) -> LossOutput:
    """Cross-entropy term plus ``lam`` times the class-averaged regularizer.

    With ``lam == 0`` the regularizer is not evaluated, so the result is the bare
    cross-entropy output bit for bit.
    """
    out = _cross_entropy(cfg.kind.family, emb, anchors)
    if not cfg.kind.has_regularizer or cfg.lam == 0:
        return out
    C = emb.num_classes
    scr_total = 0.0
    scr_grad = np.zeros_like(emb.Z)
    for c in range(C):
        v_c, g_c = scr_loss(emb.Z, emb.labels[:, c], cfg.tau)
        scr_total += v_c
        scr_grad += g_c
    scr_total /= C
    scr_grad /= C
    return LossOutput(
        value=out.value + cfg.lam * scr_total,
        grad_Z=out.grad_Z + cfg.lam * scr_grad,
        grad_U=out.grad_U,
        grad_V=out.grad_V,
        ce_value=out.value,
        scr_value=float(scr_total),
    )


def _family(kind) -> str:
    # accepts a LossKind, its string value, or a bare family name
    if kind in ("cbce", "csce"):
        return kind
    return LossKind(kind).family


def _proba(family: str, a, b):
    if family == "bce":
        return sigmoid(a)
    if family == "csce":
        return sigmoid(a - b)
    # sigma(a) / (sigma(a) + sigma(b)) evaluated as a logistic of the log-ratio
    return sigmoid(log_sigmoid(a) - log_sigmoid(b))


def predict_proba(kind, z, u_c, v_c) -> float:
    """Probability that ``z`` belongs to the positive side of one class."""
    family = _family(kind)
    z = np.asarray(z, dtype=np.float64)
    u_c = np.asarray(u_c, dtype=np.float64)
    v_c = np.asarray(v_c, dtype=np.float64)
    if not (z.shape == u_c.shape == v_c.shape):
        raise ValueError(f"shape mismatch: z {z.shape}, u {u_c.shape}, v {v_c.shape}")
    return float(_proba(family, z @ u_c, z @ v_c))


def predict_proba_matrix(kind, Z: np.ndarray, anchors: AnchorSet) -> np.ndarray:
    """Vectorized read-out: ``(N, C)`` positive-class probabilities."""
    family = _family(kind)
    Z = np.asarray(Z, dtype=np.float64)
    return _proba(family, Z @ anchors.U.T, Z @ anchors.V.T)
