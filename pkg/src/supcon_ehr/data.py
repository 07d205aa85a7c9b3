"""Datasets of variable-length multivariate sequences with binary labels.

Covers the seeded synthetic generator, CSV ingestion/export, splitting, and
positive-class downsampling for imbalance studies.

CSV layout (comma separated, UTF-8, header row required)::

    series.csv   id,t,f1,...,fD      t is 1-based and contiguous per id
    labels.csv   id,y1,...,yC        y in {0, 1}
    static.csv   id,s1,...,sDS       optional
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import SequenceBatch

__all__ = [
    "DataError",
    "Dataset",
    "SequenceSample",
    "SyntheticSpec",
    "downsample_positives",
    "generate_synthetic",
    "load_csv",
    "round_half_up",
    "split",
    "write_csv",
]


class DataError(ValueError):
    pass


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class SequenceSample:
    id: str
    series: np.ndarray  # (T_i, D)
    labels: np.ndarray  # (C,) of {0, 1}
    static: np.ndarray | None = None  # (D_S,)

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.series.ndim != 2 or self.series.shape[0] < 1:
            raise DataError(f"sample {self.id}: series must be (T, D) with T >= 1")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError(f"sample {self.id}: labels must be binary")
        if self.static is not None:
            self.static = np.asarray(self.static, dtype=np.float64).reshape(-1)

    @property
    def length(self) -> int:
        return self.series.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SequenceSample):
            return NotImplemented
        same_static = (self.static is None and other.static is None) or (
            self.static is not None
            and other.static is not None
            and np.array_equal(self.static, other.static)
        )
        return (
            self.id == other.id
            and np.array_equal(self.series, other.series)
            and np.array_equal(self.labels, other.labels)
            and same_static
        )


@dataclass(eq=False)
class Dataset:
    samples: list[SequenceSample]
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.samples:
            raise DataError("dataset is empty")
        s0 = self.samples[0]
        dims = (s0.series.shape[1], 0 if s0.static is None else s0.static.size, s0.labels.size)
        for s in self.samples:
            d = (s.series.shape[1], 0 if s.static is None else s.static.size, s.labels.size)
            if d != dims:
                raise DataError(f"sample {s.id} has dims (D, D_S, C)={d}, expected {dims}")
        self.dims = dims

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self.samples, other.samples))

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def static_dim(self) -> int:
        return self.dims[1]

    @property
    def num_classes(self) -> int:
        return self.dims[2]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    @property
    def labels(self) -> np.ndarray:
        if "labels" not in self._cache:
            self._cache["labels"] = np.stack([s.labels for s in self.samples])
        return self._cache["labels"]

    @property
    def lengths(self) -> np.ndarray:
        return np.array([s.length for s in self.samples])

    def positive_ratio(self, class_idx: int = 0) -> float:
        return float(self.labels[:, class_idx].mean())

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices])

    def _padded(self):
        if "padded" not in self._cache:
            n = len(self)
            t_max = int(self.lengths.max())
            X = np.zeros((n, t_max, self.input_dim))
            for i, s in enumerate(self.samples):
                X[i, : s.length] = s.series
            static = np.stack([s.static for s in self.samples]) if self.static_dim else None
            self._cache["padded"] = (X, self.lengths, static)
        return self._cache["padded"]

    def batch(self, indices=None) -> SequenceBatch:
        """Padded batch for the given sample indices (all samples by default)."""
        X, lengths, static = self._padded()
        if indices is None:
            indices = np.arange(len(self))
        indices = np.asarray(indices)
        lens = lengths[indices]
        t = int(lens.max())
        return SequenceBatch(
            X[indices, :t], lens, None if static is None else static[indices]
        )

    def fingerprint(self) -> str:
        """SHA-256 over ids, series, labels and static features."""
        h = hashlib.sha256()
        for s in self.samples:
            h.update(s.id.encode())
            h.update(np.ascontiguousarray(s.series).tobytes())
            h.update(s.labels.tobytes())
            if s.static is not None:
                h.update(s.static.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 1000
    D: int = 76
    T_range: tuple[int, int] = (24, 48)
    C: int = 1
    pos_ratio: tuple[float, ...] | float = 0.135
    separation: float = 1.0
    seed: int = 0
    static_dim: int = 0
    latent_dim: int = 8
    drift_scale: float = 0.5
    process_noise: float = 1.0
    obs_noise: float = 0.5

    def __post_init__(self):
        ratios = (self.pos_ratio,) * self.C if np.isscalar(self.pos_ratio) else tuple(self.pos_ratio)
        object.__setattr__(self, "pos_ratio", tuple(float(r) for r in ratios))
        object.__setattr__(self, "T_range", tuple(int(t) for t in self.T_range))
        if self.n_samples < 2 or self.D < 1 or self.C < 1:
            raise DataError(f"invalid synthetic dimensions n={self.n_samples} D={self.D} C={self.C}")
        if len(self.pos_ratio) != self.C:
            raise DataError(f"{len(self.pos_ratio)} positive ratios for C={self.C} classes")
        for r in self.pos_ratio:
            if not 0.0 < r < 1.0:
                raise DataError(f"pos_ratio must be in (0, 1), got {r}")
            k = round_half_up(self.n_samples * r)
            if k == 0 or k == self.n_samples:
                raise DataError(
                    f"pos_ratio {r} with n={self.n_samples} gives {k} positives; both classes are required"
                )
        lo, hi = self.T_range
        if lo < 1 or hi < lo:
            raise DataError(f"invalid T_range {self.T_range}")
        if self.separation < 0:
            raise DataError("separation must be >= 0")


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Sample sequences from a class-conditional linear dynamical system.

    Latent state ``h[t+1] = A h[t] + drift(y) + noise`` with a symmetric ``A`` of
    spectral radius 0.9, observed through a fixed random projection plus noise.
    Each positive label of class c adds ``separation * drift_scale * d_c`` to the
    drift, so with ``separation == 0`` the classes are identically distributed.
    """
    rng = np.random.default_rng(spec.seed)
    K, D, C, n = spec.latent_dim, spec.D, spec.C, spec.n_samples

    Q, _ = np.linalg.qr(rng.normal(size=(K, K)))
    eig = np.linspace(0.5, 0.9, K)
    A = (Q * eig) @ Q.T
    P = rng.normal(size=(D, K)) / np.sqrt(K)
    drift_dirs = rng.normal(size=(C, K))
    drift_dirs /= np.linalg.norm(drift_dirs, axis=1, keepdims=True)
    static_dirs = rng.normal(size=(C, spec.static_dim)) if spec.static_dim else None

    labels = np.zeros((n, C), dtype=np.int64)
    for c, r in enumerate(spec.pos_ratio):
        pos = rng.permutation(n)[: round_half_up(n * r)]
        labels[pos, c] = 1
    lo, hi = spec.T_range
    lengths = rng.integers(lo, hi + 1, size=n)

    drift = spec.separation * spec.drift_scale * (labels @ drift_dirs)  # (n, K)
    samples = []
    width = len(str(n - 1))
    for i in range(n):
        T = int(lengths[i])
        h = rng.normal(size=K) * spec.process_noise
        states = np.empty((T, K))
        for t in range(T):
            states[t] = h
            h = A @ h + drift[i] + rng.normal(size=K) * spec.process_noise
        series = states @ P.T + rng.normal(size=(T, D)) * spec.obs_noise
        static = None
        if spec.static_dim:
            static = rng.normal(size=spec.static_dim) + spec.separation * spec.drift_scale * (
                labels[i] @ static_dirs
            )
        samples.append(SequenceSample(f"s{i:0{width}d}", series, labels[i], static))
    return Dataset(samples)


def downsample_positives(data: Dataset, class_idx: int, target_ratio: float, seed: int) -> Dataset:
    """Keep every negative and a uniform subset of positives so the positive
    share is ``target_ratio``; original sample order is preserved."""
    y = data.labels[:, class_idx]
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    current = pos.size / y.size
    if not 0.0 < target_ratio < current:
        raise DataError(
            f"target ratio {target_ratio} must be in (0, current ratio {current:.6f})"
        )
    keep_pos = round_half_up(target_ratio * neg.size / (1.0 - target_ratio))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pos, size=keep_pos, replace=False)
    keep = np.sort(np.concatenate([neg, chosen]))
    return data.subset(keep)


def split(data: Dataset, fractions=(0.7, 0.15, 0.15), stratify_class: int | None = 0,
          seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise DataError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    n = len(data)
    sizes = [round_half_up(fr[0] * n), round_half_up(fr[1] * n)]
    sizes.append(n - sum(sizes))
    if min(sizes) < 1:
        raise DataError(f"split sizes {sizes} leave an empty partition")
    rng = np.random.default_rng(seed)
    if stratify_class is None:
        perm = rng.permutation(n)
        bounds = np.cumsum(sizes)[:-1]
        parts = np.split(perm, bounds)
    else:
        y = data.labels[:, stratify_class]
        pos = rng.permutation(np.flatnonzero(y == 1))
        neg = rng.permutation(np.flatnonzero(y == 0))
        n_pos = [round_half_up(fr[0] * pos.size), round_half_up(fr[1] * pos.size)]
        n_pos.append(pos.size - sum(n_pos))
        n_neg = [s - p for s, p in zip(sizes, n_pos)]
        if min(n_neg) < 0:
            raise DataError("cannot stratify: too few negatives for the requested split")
        parts = []
        p0 = q0 = 0
        for p, q in zip(n_pos, n_neg):
            part = np.concatenate([pos[p0 : p0 + p], neg[q0 : q0 + q]])
            parts.append(rng.permutation(part))
            p0 += p
            q0 += q
    return tuple(data.subset(p) for p in parts)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(data: Dataset, directory) -> dict[str, Path]:
    """Write series/labels(/static) CSVs; floats use shortest round-trip repr."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    D, DS, C = data.dims
    paths = {"series": directory / "series.csv", "labels": directory / "labels.csv"}
    with paths["series"].open("w", encoding="utf-8") as fh:
        fh.write(",".join(["id", "t"] + [f"f{d + 1}" for d in range(D)]) + "\n")
        for s in data.samples:
            for t, row in enumerate(s.series.tolist(), start=1):
                fh.write(f"{s.id},{t}," + ",".join(map(repr, row)) + "\n")
    with paths["labels"].open("w", encoding="utf-8") as fh:
        fh.write(",".join(["id"] + [f"y{c + 1}" for c in range(C)]) + "\n")
        for s in data.samples:
            fh.write(s.id + "," + ",".join(str(int(v)) for v in s.labels) + "\n")
    if DS:
        paths["static"] = directory / "static.csv"
        with paths["static"].open("w", encoding="utf-8") as fh:
            fh.write(",".join(["id"] + [f"s{k + 1}" for k in range(DS)]) + "\n")
            for s in data.samples:
                fh.write(s.id + "," + ",".join(map(_fmt, s.static)) + "\n")
    return paths


def _header(path: Path, reader, first: str) -> list[str]:
    try:
        header = next(reader)
    except StopIteration:
        raise DataError(f"{path}: empty file") from None
    if not header or header[0] != first:
        raise DataError(f"{path}: header must start with '{first}', got {header[:3]}")
    return header


def load_csv(series_path, labels_path, static_path=None) -> Dataset:
    """Read a dataset; samples are ordered as in the labels file."""
    series_path, labels_path = Path(series_path), Path(labels_path)

    labels: dict[str, np.ndarray] = {}
    with labels_path.open(newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = _header(labels_path, rd, "id")
        C = len(header) - 1
        if C < 1:
            raise DataError(f"{labels_path}: no label columns")
        for lineno, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != C + 1:
                raise DataError(f"{labels_path}:{lineno}: expected {C + 1} fields, got {len(row)}")
            vals = []
            for v in row[1:]:
                v = v.strip()
                if v not in ("0", "1"):
                    raise DataError(f"{labels_path}:{lineno}: label {v!r} is not 0 or 1")
                vals.append(int(v))
            if row[0] in labels:
                raise DataError(f"{labels_path}:{lineno}: duplicate id {row[0]!r}")
            labels[row[0]] = np.array(vals, dtype=np.int64)

    rows: dict[str, list[tuple[int, list[float]]]] = {}
    with series_path.open(newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = _header(series_path, rd, "id")
        if len(header) < 3 or header[1] != "t":
            raise DataError(f"{series_path}: header must be id,t,f1..fD")
        D = len(header) - 2
        for lineno, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != D + 2:
                raise DataError(f"{series_path}:{lineno}: expected {D + 2} fields, got {len(row)}")
            try:
                t = int(row[1])
                vals = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DataError(f"{series_path}:{lineno}: {exc}") from None
            rows.setdefault(row[0], []).append((t, vals))

    static: dict[str, np.ndarray] = {}
    if static_path is not None:
        static_path = Path(static_path)
        with static_path.open(newline="", encoding="utf-8") as fh:
            rd = csv.reader(fh)
            header = _header(static_path, rd, "id")
            DS = len(header) - 1
            for lineno, row in enumerate(rd, start=2):
                if not row:
                    continue
                if len(row) != DS + 1:
                    raise DataError(f"{static_path}:{lineno}: expected {DS + 1} fields, got {len(row)}")
                try:
                    static[row[0]] = np.array([float(v) for v in row[1:]])
                except ValueError as exc:
                    raise DataError(f"{static_path}:{lineno}: {exc}") from None

    missing = [i for i in labels if i not in rows]
    extra = [i for i in rows if i not in labels]
    if missing or extra:
        raise DataError(f"ids without series: {missing[:10]}; ids without labels: {extra[:10]}")
    if static_path is not None:
        no_static = [i for i in labels if i not in static]
        if no_static:
            raise DataError(f"{static_path}: missing static rows for ids {no_static[:10]}")

    gaps = []
    samples = []
    for sid, lab in labels.items():
        entries = sorted(rows[sid], key=lambda e: e[0])
        ts = [t for t, _ in entries]
        if ts != list(range(1, len(ts) + 1)):
            gaps.append(sid)
            continue
        samples.append(
            SequenceSample(sid, np.array([v for _, v in entries]), lab, static.get(sid))
        )
    if gaps:
        raise DataError(f"non-contiguous or non-1-based timesteps for ids: {gaps[:20]}")
    return Dataset(samples)


def load_dir(directory) -> Dataset:
    """Load ``series.csv``/``labels.csv``/(``static.csv``) from one directory."""
    directory = Path(directory)
    static = directory / "static.csv"
    return load_csv(
        directory / "series.csv", directory / "labels.csv", static if static.exists() else None
    )
