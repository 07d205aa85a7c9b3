"""Stacked LSTM encoder written directly in numpy, with full backprop through time.

The embedding of a sequence is the top layer's hidden state at its last valid
timestep, plus an optional linear projection of the static features.
Timesteps beyond a sample's length never influence its state: the recurrence
keeps the previous (h, c) for masked steps and padded inputs are zeroed.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .losses import AnchorSet
from .numerics import sigmoid

__all__ = [
    "CHECKPOINT_FORMAT",
    "EncoderConfig",
    "EncoderParams",
    "SequenceBatch",
    "encode",
    "encode_backward",
    "init_params",
    "load_checkpoint",
    "parameter_count",
    "save_checkpoint",
]

CHECKPOINT_FORMAT = "supcon-ehr-checkpoint/1"


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dim: int = 16
    num_layers: int = 1
    dropout_rate: float = 0.3
    static_dim: int = 0

    def __post_init__(self):
        if self.input_dim < 1 or self.hidden_dim < 1 or self.num_layers < 1:
            raise ValueError(f"invalid encoder dimensions: {self}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.static_dim < 0:
            raise ValueError(f"static_dim must be >= 0, got {self.static_dim}")


@dataclass
class EncoderParams:
    config: EncoderConfig
    num_classes: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def anchors(self) -> AnchorSet:
        return AnchorSet(self.arrays["anchor.U"], self.arrays["anchor.V"])

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, self.num_classes, {k: v.copy() for k, v in self.arrays.items()})

    def count(self) -> int:
        return sum(a.size for a in self.arrays.values())


@dataclass
class SequenceBatch:
    X: np.ndarray  # (N, T_max, D), padded
    lengths: np.ndarray  # (N,)
    static: np.ndarray | None = None  # (N, D_S)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.lengths = np.asarray(self.lengths, dtype=np.int64)
        if self.X.ndim != 3:
            raise ValueError(f"X must be (N, T, D), got shape {self.X.shape}")
        n, t_max, _ = self.X.shape
        if self.lengths.shape != (n,):
            raise ValueError(f"lengths shape {self.lengths.shape} != ({n},)")
        bad = np.flatnonzero((self.lengths < 1) | (self.lengths > t_max))
        if bad.size:
            raise ValueError(
                f"invalid sequence lengths at rows {bad.tolist()[:10]}: "
                f"each length must be in [1, {t_max}]"
            )
        if self.static is not None:
            self.static = np.asarray(self.static, dtype=np.float64)
            if self.static.shape[0] != n:
                raise ValueError(f"static has {self.static.shape[0]} rows, X has {n}")

    @property
    def n(self) -> int:
        return self.X.shape[0]


def layer_input_dim(cfg: EncoderConfig, layer: int) -> int:
    return cfg.input_dim if layer == 0 else cfg.hidden_dim


def parameter_count(cfg: EncoderConfig, num_classes: int) -> int:
    H = cfg.hidden_dim
    n = sum(4 * H * (layer_input_dim(cfg, l) + H + 1) for l in range(cfg.num_layers))
    return n + H * cfg.static_dim + 2 * num_classes * H


def init_params(cfg: EncoderConfig, num_classes: int, seed: int) -> EncoderParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights; forget-gate bias set to 1."""
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    rng = np.random.default_rng(seed)
    H = cfg.hidden_dim
    k = 1.0 / np.sqrt(H)
    arrays: dict[str, np.ndarray] = {}
    for l in range(cfg.num_layers):
        d_in = layer_input_dim(cfg, l)
        arrays[f"lstm{l}.W_x"] = rng.uniform(-k, k, size=(d_in, 4 * H))
        arrays[f"lstm{l}.W_h"] = rng.uniform(-k, k, size=(H, 4 * H))
        b = rng.uniform(-k, k, size=4 * H)
        b[H : 2 * H] = 1.0  # gate order: input, forget, cell, output
        arrays[f"lstm{l}.b"] = b
    if cfg.static_dim:
        arrays["static.W"] = rng.uniform(-k, k, size=(H, cfg.static_dim))
    arrays["anchor.U"] = rng.uniform(-k, k, size=(num_classes, H))
    arrays["anchor.V"] = rng.uniform(-k, k, size=(num_classes, H))
    return EncoderParams(cfg, num_classes, arrays)


def _check_batch(params: EncoderParams, batch: SequenceBatch) -> None:
    cfg = params.config
    if batch.X.shape[2] != cfg.input_dim:
        raise ValueError(f"expected D={cfg.input_dim} features per timestep, got D={batch.X.shape[2]}")
    if cfg.static_dim:
        if batch.static is None or batch.static.shape[1] != cfg.static_dim:
            got = None if batch.static is None else batch.static.shape[1]
            raise ValueError(f"expected D_S={cfg.static_dim} static features, got {got}")


def _dropout_masks(cfg: EncoderConfig, shape, training: bool, seed: int) -> list:
    if not training or cfg.dropout_rate == 0.0 or cfg.num_layers == 1:
        return [None] * (cfg.num_layers - 1)
    rng = np.random.default_rng(seed)
    keep = 1.0 - cfg.dropout_rate
    return [
        (rng.random(shape) >= cfg.dropout_rate) / keep for _ in range(cfg.num_layers - 1)
    ]


def _forward(params: EncoderParams, batch: SequenceBatch, training: bool, dropout_seed: int):
    _check_batch(params, batch)
    cfg = params.config
    H = cfg.hidden_dim
    lengths = batch.lengths
    T = int(lengths.max())
    n = batch.n
    steps = np.arange(T)
    valid = steps[None, :] < lengths[:, None]  # (N, T)
    X = np.where(valid[:, :, None], batch.X[:, :T, :], 0.0)
    drop = _dropout_masks(cfg, (n, T, H), training, dropout_seed)

    layers = []
    inp = X
    for l in range(cfg.num_layers):
        W_x = params.arrays[f"lstm{l}.W_x"]
        W_h = params.arrays[f"lstm{l}.W_h"]
        b = params.arrays[f"lstm{l}.b"]
        xw = (inp.reshape(n * T, -1) @ W_x).reshape(n, T, 4 * H) + b
        h = np.zeros((n, H))
        c = np.zeros((n, H))
        out = np.empty((n, T, H))
        cache = {"inp": inp, "h_prev": [], "c_prev": [], "gates": [], "tc": []}
        for t in range(T):
            pre = xw[:, t] + h @ W_h
            i = sigmoid(pre[:, :H])
            f = sigmoid(pre[:, H : 2 * H])
            g = np.tanh(pre[:, 2 * H : 3 * H])
            o = sigmoid(pre[:, 3 * H :])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            m = valid[:, t : t + 1]
            cache["h_prev"].append(h)
            cache["c_prev"].append(c)
            cache["gates"].append((i, f, g, o))
            cache["tc"].append(tc)
            h = np.where(m, h_new, h)
            c = np.where(m, c_new, c)
            out[:, t] = h
        layers.append(cache)
        inp = out if l == cfg.num_layers - 1 or drop[l] is None else out * drop[l]

    Z = h.copy()
    if cfg.static_dim:
        Z += batch.static @ params.arrays["static.W"].T
    return Z, {"valid": valid, "drop": drop, "layers": layers, "T": T}


def encode(
    params: EncoderParams,
    batch: SequenceBatch,
    training: bool = False,
    dropout_seed: int = 0,
    return_cache: bool = False,
):
    """Embed a batch: returns ``Z`` of shape (N, H), and the tape if requested."""
    Z, cache = _forward(params, batch, training, dropout_seed)
    return (Z, cache) if return_cache else Z


def encode_backward(
    params: EncoderParams,
    batch: SequenceBatch,
    grad_Z: np.ndarray,
    training: bool = False,
    dropout_seed: int = 0,
    cache=None,
) -> dict[str, np.ndarray]:
    """Gradients of ``sum(grad_Z * Z)`` for every encoder weight (anchors excluded).

    Pass the ``cache`` from ``encode(..., return_cache=True)`` to avoid a second
    forward pass; otherwise the forward is replayed with the same dropout seed.
    """
    if cache is None:
        _, cache = _forward(params, batch, training, dropout_seed)
    cfg = params.config
    H = cfg.hidden_dim
    grad_Z = np.asarray(grad_Z, dtype=np.float64)
    n = batch.n
    if grad_Z.shape != (n, H):
        raise ValueError(f"grad_Z shape {grad_Z.shape} != ({n}, {H})")
    T = cache["T"]
    valid = cache["valid"]
    grads: dict[str, np.ndarray] = {}

    if cfg.static_dim:
        grads["static.W"] = grad_Z.T @ batch.static

    # gradient arriving at each layer's output sequence from the layer above
    d_out = None
    for l in reversed(range(cfg.num_layers)):
        lc = cache["layers"][l]
        W_x = params.arrays[f"lstm{l}.W_x"]
        W_h = params.arrays[f"lstm{l}.W_h"]
        dh = grad_Z.copy() if l == cfg.num_layers - 1 else np.zeros((n, H))
        dc = np.zeros((n, H))
        d_pre = np.empty((n, T, 4 * H))
        dW_h = np.zeros_like(W_h)
        for t in reversed(range(T)):
            if d_out is not None:
                dh = dh + d_out[:, t]
            m = valid[:, t : t + 1]
            i, f, g, o = lc["gates"][t]
            tc = lc["tc"][t]
            dh_new = np.where(m, dh, 0.0)
            dc_in = np.where(m, dc, 0.0)
            do = dh_new * tc
            dc_new = dh_new * o * (1.0 - tc * tc) + dc_in
            di = dc_new * g
            dg = dc_new * i
            df = dc_new * lc["c_prev"][t]
            pre = np.concatenate(
                [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)],
                axis=1,
            )
            d_pre[:, t] = pre
            dW_h += lc["h_prev"][t].T @ pre
            dh = pre @ W_h.T + np.where(m, 0.0, dh)
            dc = dc_new * f + np.where(m, 0.0, dc)
        flat = d_pre.reshape(n * T, 4 * H)
        inp = lc["inp"]
        grads[f"lstm{l}.W_x"] = inp.reshape(n * T, -1).T @ flat
        grads[f"lstm{l}.W_h"] = dW_h
        grads[f"lstm{l}.b"] = flat.sum(axis=0)
        if l > 0:
            d_inp = (flat @ W_x.T).reshape(n, T, H)
            drop = cache["drop"][l - 1]
            d_out = d_inp if drop is None else d_inp * drop
    return grads


def _array_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(path, params: EncoderParams, metadata: dict | None = None) -> Path:
    """Write a deterministic zip of ``.npy`` members plus a JSON header."""
    path = Path(path)
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(params.config),
        "num_classes": params.num_classes,
        "arrays": sorted(params.arrays),
        "metadata": metadata or {},
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("header.json", date_time=(1980, 1, 1, 0, 0, 0))
        zf.writestr(info, json.dumps(header, sort_keys=True, indent=2))
        for name in sorted(params.arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, _array_bytes(params.arrays[name]))
    return path


def load_checkpoint(path) -> tuple[EncoderParams, dict]:
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        arrays = {}
        for name in header["arrays"]:
            with zf.open(f"{name}.npy") as fh:
                arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    params = EncoderParams(EncoderConfig(**header["config"]), header["num_classes"], arrays)
    return params, header["metadata"]
