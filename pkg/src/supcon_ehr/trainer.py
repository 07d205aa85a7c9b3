"""Mini-batch training with Adam, validation-based checkpoint selection, and
grid search over (lambda, batch size)."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .encoder import EncoderConfig, EncoderParams, encode, encode_backward, init_params
from .losses import BatchEmbeddings, LossConfig, combined_loss, predict_proba_matrix
from .metrics import auroc, multilabel_aurocs
from .numerics import DegenerateEmbeddingError

__all__ = [
    "AdamState",
    "EpochReport",
    "GridCell",
    "GridResult",
    "SelectionMetric",
    "TrainConfig",
    "TrainingError",
    "TrainResult",
    "adam_step",
    "batch_indices",
    "evaluate",
    "grid_search",
    "predict",
    "train",
    "write_epoch_csv",
]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class SelectionMetric(str, enum.Enum):
    AUROC = "auroc"
    MICRO_AUROC = "micro_auroc"


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    """One bias-corrected Adam update, applied in place to ``params``.

    Weight decay, when nonzero, is added to the gradient (L2 form).
    """
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    batch_size: int = 256
    max_epochs: int = 100
    seed: int = 0
    selection_metric: SelectionMetric = SelectionMetric.AUROC
    lr: float = 0.001
    weight_decay: float = 0.0
    grad_clip: float | None = None  # global L2 norm; off by default

    def __post_init__(self):
        object.__setattr__(self, "selection_metric", SelectionMetric(self.selection_metric))
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 so the regularizer has pairs")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    val_loss: float
    val_metric: float
    steps: int = 0


@dataclass
class TrainResult:
    params: EncoderParams
    reports: list[EpochReport]
    best_epoch: int

    @property
    def best_metric(self) -> float:
        return self.reports[self.best_epoch - 1].val_metric


def batch_indices(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Cut ``order`` into batches; a trailing batch of one sample joins the previous one."""
    n = order.size
    if n < 2:
        raise ValueError("need at least 2 training samples")
    bounds = list(range(0, n, batch_size)) + [n]
    batches = [order[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    if len(batches) > 1 and batches[-1].size < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def predict(params: EncoderParams, kind, data: Dataset, chunk: int = 1024) -> np.ndarray:
    """(N, C) positive-class probabilities in inference mode."""
    out = []
    for a in range(0, len(data), chunk):
        idx = np.arange(a, min(a + chunk, len(data)))
        Z = encode(params, data.batch(idx), training=False)
        out.append(predict_proba_matrix(kind, Z, params.anchors))
    return np.concatenate(out)


def embed(params: EncoderParams, data: Dataset, chunk: int = 1024) -> np.ndarray:
    out = []
    for a in range(0, len(data), chunk):
        idx = np.arange(a, min(a + chunk, len(data)))
        out.append(encode(params, data.batch(idx), training=False))
    return np.concatenate(out)


def selection_score(metric: SelectionMetric, probs: np.ndarray, labels: np.ndarray) -> float:
    if metric is SelectionMetric.AUROC:
        return auroc(probs[:, 0], labels[:, 0])
    return multilabel_aurocs(probs, labels).micro


def evaluate(params: EncoderParams, cfg: TrainConfig, data: Dataset) -> tuple[float, float]:
    """(size-weighted mean loss over ``batch_size`` chunks, selection metric)."""
    total = 0.0
    n = len(data)
    probs = []
    for idx in batch_indices(np.arange(n), cfg.batch_size):
        Z = encode(params, data.batch(idx), training=False)
        out = combined_loss(cfg.loss, BatchEmbeddings(Z, data.labels[idx]), params.anchors)
        total += out.value * idx.size
        probs.append(predict_proba_matrix(cfg.loss.kind, Z, params.anchors))
    return total / n, selection_score(cfg.selection_metric, np.concatenate(probs), data.labels)


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> None:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale


def train(cfg: TrainConfig, enc_cfg: EncoderConfig, train_data: Dataset, val_data: Dataset,
          init: EncoderParams | None = None) -> TrainResult:
    """Run the training loop and return the best-validation snapshot.

    Training loss in the reports is the size-weighted mean over the epoch's
    mini-batches, measured before each update.
    """
    if train_data.num_classes != val_data.num_classes:
        raise ValueError("train and validation sets have different label counts")
    if train_data.input_dim != enc_cfg.input_dim or train_data.static_dim != enc_cfg.static_dim:
        raise ValueError(
            f"data dims (D={train_data.input_dim}, D_S={train_data.static_dim}) do not match "
            f"encoder (D={enc_cfg.input_dim}, D_S={enc_cfg.static_dim})"
        )
    if cfg.selection_metric is SelectionMetric.AUROC and train_data.num_classes != 1:
        raise ValueError("selection metric 'auroc' is for binary tasks; use 'micro_auroc'")

    params = init.copy() if init is not None else init_params(enc_cfg, train_data.num_classes, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    opt = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    labels = train_data.labels
    n = len(train_data)

    reports: list[EpochReport] = []
    best: EncoderParams | None = None
    best_metric = -np.inf
    best_epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        batches = batch_indices(order, cfg.batch_size)
        drop_seeds = rng.integers(0, 2**63 - 1, size=len(batches))
        loss_sum = 0.0
        for b_i, idx in enumerate(batches):
            batch = train_data.batch(idx)
            Z, tape = encode(params, batch, training=True, dropout_seed=int(drop_seeds[b_i]),
                             return_cache=True)
            try:
                out = combined_loss(cfg.loss, BatchEmbeddings(Z, labels[idx]), params.anchors)
            except DegenerateEmbeddingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b_i}: {exc}") from exc
            if not np.isfinite(out.value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {b_i}: value={out.value}, "
                    f"cross-entropy={out.ce_value}, regularizer={out.scr_value}"
                )
            grads = encode_backward(params, batch, out.grad_Z, cache=tape)
            grads["anchor.U"] = out.grad_U
            grads["anchor.V"] = out.grad_V
            if cfg.grad_clip is not None:
                _clip(grads, cfg.grad_clip)
            adam_step(opt, params.arrays, grads)
            loss_sum += out.value * idx.size
        val_loss, val_metric = evaluate(params, cfg, val_data)
        rep = EpochReport(epoch, loss_sum / n, val_loss, val_metric, steps=len(batches))
        reports.append(rep)
        log.debug("epoch %d train=%.5f val=%.5f metric=%.5f", epoch, rep.train_loss, val_loss, val_metric)
        if val_metric > best_metric:
            best_metric, best_epoch, best = val_metric, epoch, params.copy()
    return TrainResult(best, reports, best_epoch)


def write_epoch_csv(reports: list[EpochReport], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "val_metric"])
        for r in reports:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_metric)])
    return path


@dataclass
class GridCell:
    index: int
    lam: float
    batch_size: int
    seed: int
    result: TrainResult | None = None

    @property
    def metric(self) -> float:
        return self.result.best_metric


@dataclass
class GridResult:
    cells: list[GridCell]
    best: GridCell


def _run_cell(args):
    cfg, enc_cfg, train_data, val_data = args
    return train(cfg, enc_cfg, train_data, val_data)


def grid_search(base: TrainConfig, enc_cfg: EncoderConfig, lambda_grid, batch_grid,
                train_data: Dataset, val_data: Dataset, workers: int = 1,
                data_for_cell=None) -> GridResult:
    """Train one model per (lambda, batch size) cell and pick the best by the
    validation metric; ties go to the smaller lambda, then the smaller batch.

    Every cell trains from the base seed, so cells differ only in their
    hyperparameters and a 1x1 grid reproduces ``train`` exactly.
    ``data_for_cell(index) -> (train, val)`` may override the data per cell.
    """
    lambda_grid = sorted(float(x) for x in lambda_grid)
    batch_grid = sorted(int(x) for x in batch_grid)
    if not lambda_grid or not batch_grid:
        raise ValueError("grids must be non-empty")
    for lam in lambda_grid:
        if lam < 0:
            raise ValueError(f"lambda grid values must be >= 0, got {lam}")
    cells = []
    jobs = []
    for lam in lambda_grid:
        for bs in batch_grid:
            i = len(cells)
            cell = GridCell(i, lam, bs, base.seed)
            cfg = replace(base, loss=replace(base.loss, lam=lam), batch_size=bs, seed=cell.seed)
            tr, va = data_for_cell(i) if data_for_cell else (train_data, val_data)
            cells.append(cell)
            jobs.append((cfg, enc_cfg, tr, va))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    for cell, res in zip(cells, results):
        cell.result = res
    # cells are already ordered by (lambda, batch size); strict > keeps the earliest on ties
    best = cells[0]
    for cell in cells[1:]:
        if cell.metric > best.metric:
            best = cell
    return GridResult(cells, best)
