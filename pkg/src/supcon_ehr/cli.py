"""Command-line front end.

Configuration precedence: built-in defaults < ``--config`` file < flags.
The config file is flat ``key = value`` text; keys are the long flag names
(``batch-size`` or ``batch_size``).  Exit codes: 0 success, 1 invalid input,
2 runtime or training failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    DataError,
    Dataset,
    SyntheticSpec,
    downsample_positives,
    generate_synthetic,
    load_dir,
    split,
    write_csv,
)
from .encoder import EncoderConfig, load_checkpoint, save_checkpoint
from .losses import LossConfig, LossKind
from .metrics import MetricsReport, binary_report, multilabel_report
from .trainer import (
    SelectionMetric,
    TrainConfig,
    TrainingError,
    embed,
    grid_search,
    predict,
    train,
    write_epoch_csv,
)

log = logging.getLogger("supcon_ehr")


class ConfigError(ValueError):
    pass


# key -> (type, default); every key is also a flag
SETTINGS: dict[str, tuple[type, object]] = {
    "task": (str, "binary"),
    "classes": (int, 1),
    "loss": (str, "bce"),
    "lambda": (float, 0.0),
    "tau": (float, 0.1),
    "batch-size": (int, 256),
    "epochs": (int, 100),
    "lr": (float, 0.001),
    "weight-decay": (float, 0.0),
    "hidden-dim": (int, 16),
    "layers": (int, 1),
    "dropout": (float, 0.3),
    "seed": (int, 0),
    "bootstrap": (int, 100),
    # data source
    "data": (str, None),
    "split": (str, "0.7,0.15,0.15"),
    "split-seed": (int, 0),
    "n": (int, 2000),
    "dim": (int, 76),
    "t-min": (int, 24),
    "t-max": (int, 48),
    "pos-ratio": (str, "0.135"),
    "separation": (float, 1.0),
    "drift-scale": (float, 0.5),
    "static-dim": (int, 0),
    "data-seed": (int, 0),
}


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def read_config_file(path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in SETTINGS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_settings(args: argparse.Namespace) -> dict[str, object]:
    values = {k: default for k, (_, default) in SETTINGS.items()}
    if getattr(args, "config", None):
        for k, v in read_config_file(args.config).items():
            typ = SETTINGS[k][0]
            try:
                values[k] = typ(v)
            except ValueError:
                raise ConfigError(f"config key {k}: cannot parse {v!r} as {typ.__name__}") from None
    for k in SETTINGS:
        v = getattr(args, k.replace("-", "_"), None)
        if v is not None:
            values[k] = v
    return values


@dataclass
class ExperimentConfig:
    task: str
    num_classes: int
    loss: LossConfig
    encoder: EncoderConfig
    trainer: TrainConfig
    data_dir: str | None
    synthetic: SyntheticSpec | None
    split: tuple[float, float, float]
    split_seed: int
    bootstrap: int
    out: str
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"]["kind"] = self.loss.kind.value
        d["trainer"]["loss"]["kind"] = self.loss.kind.value
        d["trainer"]["selection_metric"] = self.trainer.selection_metric.value
        return d

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def build_experiment(values: dict, out: str, input_dim: int | None = None,
                     static_dim: int | None = None) -> ExperimentConfig:
    task = values["task"]
    if task not in ("binary", "multilabel"):
        raise ConfigError(f"--task must be binary or multilabel, got {task!r}")
    C = values["classes"]
    if task == "binary" and C != 1:
        raise ConfigError("binary task requires --classes 1")
    if C < 1:
        raise ConfigError("--classes must be >= 1")
    try:
        kind = LossKind(values["loss"])
    except ValueError:
        raise ConfigError(
            f"--loss must be one of {[k.value for k in LossKind]}, got {values['loss']!r}"
        ) from None
    loss = LossConfig(kind, values["lambda"], values["tau"])
    synthetic = None
    if values["data"] is None:
        ratios = _floats(values["pos-ratio"])
        if len(ratios) == 1:
            ratios = ratios * C
        synthetic = SyntheticSpec(
            n_samples=values["n"], D=values["dim"], T_range=(values["t-min"], values["t-max"]),
            C=C, pos_ratio=tuple(ratios), separation=values["separation"],
            seed=values["data-seed"], static_dim=values["static-dim"],
            drift_scale=values["drift-scale"],
        )
        input_dim, static_dim = synthetic.D, synthetic.static_dim
    enc = EncoderConfig(
        input_dim=input_dim, hidden_dim=values["hidden-dim"], num_layers=values["layers"],
        dropout_rate=values["dropout"], static_dim=static_dim,
    )
    trainer = TrainConfig(
        loss=loss, batch_size=values["batch-size"], max_epochs=values["epochs"],
        seed=values["seed"], lr=values["lr"], weight_decay=values["weight-decay"],
        selection_metric=SelectionMetric.AUROC if task == "binary" else SelectionMetric.MICRO_AUROC,
    )
    fr = tuple(_floats(values["split"]))
    if len(fr) != 3:
        raise ConfigError(f"--split needs three fractions, got {values['split']!r}")
    return ExperimentConfig(
        task=task, num_classes=C, loss=loss, encoder=enc, trainer=trainer,
        data_dir=values["data"], synthetic=synthetic, split=fr, split_seed=values["split-seed"],
        bootstrap=values["bootstrap"], out=out, seed=values["seed"],
    )


def experiment_from_args(args) -> tuple[ExperimentConfig, Dataset]:
    values = resolve_settings(args)
    data = None
    if values["data"] is not None:
        data = load_dir(values["data"])
        exp = build_experiment(values, args.out, data.input_dim, data.static_dim)
    else:
        exp = build_experiment(values, args.out)
        data = generate_synthetic(exp.synthetic)
    if data.num_classes != exp.num_classes:
        raise ConfigError(f"data has {data.num_classes} label columns, config says {exp.num_classes}")
    return exp, data


def split_data(exp: ExperimentConfig, data: Dataset):
    return split(data, exp.split, stratify_class=0, seed=exp.split_seed)


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_manifest(target: Path, config: dict, config_hash: str, seed: int, **extra) -> Path:
    """Sidecar ``<stem>.manifest.json`` next to an output file."""
    path = target.with_name(target.stem + ".manifest.json")
    digest = hashlib.sha256(target.read_bytes()).hexdigest()
    body = {
        "tool": "supcon-ehr",
        "version": __version__,
        "file": target.name,
        "sha256": digest,
        "config_hash": config_hash,
        "seed": seed,
        "config": config,
        **extra,
    }
    path.write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
    return path


def report_for(exp: ExperimentConfig, params, test: Dataset) -> MetricsReport:
    probs = predict(params, exp.loss.kind, test)
    if exp.task == "binary":
        return binary_report(probs[:, 0], test.labels[:, 0], bootstrap=exp.bootstrap, seed=exp.seed)
    return multilabel_report(probs, test.labels)


# commands

def cmd_gen_data(args) -> int:
    values = resolve_settings(args)
    C = values["classes"]
    ratios = _floats(values["pos-ratio"])
    if len(ratios) == 1:
        ratios = ratios * C
    spec = SyntheticSpec(
        n_samples=values["n"], D=values["dim"], T_range=(values["t-min"], values["t-max"]), C=C,
        pos_ratio=tuple(ratios), separation=values["separation"], seed=values["seed"],
        static_dim=values["static-dim"], drift_scale=values["drift-scale"],
    )
    data = generate_synthetic(spec)
    out = _outdir(args.out)
    paths = write_csv(data, out)
    spec_d = asdict(spec)
    chash = hashlib.sha256(json.dumps(spec_d, sort_keys=True).encode()).hexdigest()
    realized = [float(r) for r in data.labels.mean(axis=0)]
    for p in paths.values():
        write_manifest(p, spec_d, chash, spec.seed)
    (out / "manifest.json").write_text(json.dumps({
        "tool": "supcon-ehr", "version": __version__, "spec": spec_d, "seed": spec.seed,
        "config_hash": chash, "n_samples": len(data), "realized_pos_ratio": realized,
        "dims": {"D": data.input_dim, "D_S": data.static_dim, "C": data.num_classes},
        "files": {k: p.name for k, p in paths.items()},
    }, sort_keys=True, indent=2) + "\n")
    print(f"wrote {len(data)} samples to {out}")
    return 0


def _run_train(exp: ExperimentConfig, train_d, val_d, test_d, out: Path, extra_meta=None):
    result = train(exp.trainer, exp.encoder, train_d, val_d)
    cfg = exp.to_dict()
    chash = exp.hash()
    meta = {"loss": exp.loss.kind.value, "config_hash": chash, "best_epoch": result.best_epoch,
            **(extra_meta or {})}
    ckpt = save_checkpoint(out / "checkpoint.npz", result.params, meta)
    write_manifest(ckpt, cfg, chash, exp.seed)
    ep = write_epoch_csv(result.reports, out / "epochs.csv")
    write_manifest(ep, cfg, chash, exp.seed, best_epoch=result.best_epoch)
    report = report_for(exp, result.params, test_d)
    mp = report.to_csv(out / "metrics.csv")
    write_manifest(mp, cfg, chash, exp.seed, test_fingerprint=test_d.fingerprint())
    (out / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")
    return result, report


def cmd_train(args) -> int:
    exp, data = experiment_from_args(args)
    train_d, val_d, test_d = split_data(exp, data)
    out = _outdir(args.out)
    result, report = _run_train(exp, train_d, val_d, test_d, out)
    summary = ", ".join(f"{k}={v:.4f}" for k, v in report.values.items())
    print(f"best epoch {result.best_epoch}: val {result.best_metric:.4f}; test {summary}")
    return 0


def _report_columns(task: str) -> list[str]:
    if task == "binary":
        return ["auroc", "auprc", "accuracy", "min_se_pplus"]
    return ["micro_auroc", "macro_auroc", "weighted_auroc"]


def cmd_grid(args) -> int:
    exp, data = experiment_from_args(args)
    lambdas = _floats(args.lambda_grid) if args.lambda_grid else [exp.loss.lam]
    batches = _ints(args.batch_grid) if args.batch_grid else [exp.trainer.batch_size]
    if not lambdas or not batches:
        raise ConfigError("grids must be non-empty")
    for lam in lambdas:
        if not 0.0 <= lam:
            raise ConfigError(f"lambda values must be >= 0, got {lam}")
        LossConfig(exp.loss.kind, lam, exp.loss.tau)
    train_d, val_d, test_d = split_data(exp, data)
    out = _outdir(args.out)
    res = grid_search(exp.trainer, exp.encoder, lambdas, batches, train_d, val_d,
                      workers=args.workers)
    cols = _report_columns(exp.task)
    rows = []
    for cell in res.cells:
        sub = replace(exp, loss=replace(exp.loss, lam=cell.lam),
                      trainer=replace(exp.trainer, loss=replace(exp.loss, lam=cell.lam),
                                      batch_size=cell.batch_size, seed=cell.seed),
                      seed=cell.seed)
        rep = report_for(replace(sub, bootstrap=0), cell.result.params, test_d)
        rows.append([cell.index, repr(cell.lam), cell.batch_size, cell.seed, cell.result.best_epoch,
                     repr(cell.metric)] + [repr(rep[c]) for c in cols])
    path = out / "results.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "lambda", "batch_size", "seed", "best_epoch", "val_metric"] + cols)
        w.writerows(rows)
    cfg, chash = exp.to_dict(), exp.hash()
    write_manifest(path, cfg, chash, exp.seed, lambda_grid=lambdas, batch_grid=batches)
    best = res.best
    best_exp = replace(exp, loss=replace(exp.loss, lam=best.lam),
                       trainer=replace(exp.trainer, loss=replace(exp.loss, lam=best.lam),
                                       batch_size=best.batch_size, seed=best.seed),
                       seed=best.seed)
    ckpt = save_checkpoint(out / "best_checkpoint.npz", best.result.params,
                           {"loss": exp.loss.kind.value, "config_hash": best_exp.hash(),
                            "best_epoch": best.result.best_epoch})
    write_manifest(ckpt, best_exp.to_dict(), best_exp.hash(), best.seed)
    mp = report_for(best_exp, best.result.params, test_d).to_csv(out / "best_metrics.csv")
    write_manifest(mp, best_exp.to_dict(), best_exp.hash(), best.seed,
                   test_fingerprint=test_d.fingerprint())
    summary = {
        "best_cell": best.index, "lambda": best.lam, "batch_size": best.batch_size,
        "seed": best.seed, "val_metric": best.metric, "best_epoch": best.result.best_epoch,
        "tie_break": "smaller lambda, then smaller batch size",
        "n_cells": len(res.cells),
    }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"best cell {best.index}: lambda={best.lam} batch={best.batch_size} val={best.metric:.4f}")
    return 0


def cmd_imbalance_sweep(args) -> int:
    exp, data = experiment_from_args(args)
    if exp.task != "binary":
        raise ConfigError("imbalance-sweep is defined for the binary task")
    ratios = _floats(args.ratios)
    losses = [s.strip() for s in args.losses.split(",") if s.strip()]
    for l in losses:
        try:
            LossKind(l)
        except ValueError:
            raise ConfigError(f"unknown loss {l!r}") from None
    if not ratios or any(b >= a for a, b in zip(ratios, ratios[1:])):
        raise ConfigError(f"--ratios must be strictly decreasing, got {ratios}")
    if args.n_seeds < 1:
        raise ConfigError("--n-seeds must be >= 1")
    train_d, val_d, test_d = split_data(exp, data)
    base_ratio = train_d.positive_ratio(0)
    if ratios[0] >= base_ratio:
        raise ConfigError(f"ratio {ratios[0]} is not below the base training ratio {base_ratio:.4f}")
    lam_grid = _floats(args.lambda_grid) if args.lambda_grid else [exp.loss.lam or 0.005]
    test_hash = test_d.fingerprint()
    levels = ([("base", base_ratio)] if args.include_base else []) + [(repr(r), r) for r in ratios]

    out = _outdir(args.out)
    cols = _report_columns("binary")
    rows = []
    for label, ratio in levels:
        for loss_name in losses:
            kind = LossKind(loss_name)
            lams = lam_grid if kind.has_regularizer else [0.0]
            for s in range(args.n_seeds):
                seed = exp.seed + s
                tr = train_d if label == "base" else downsample_positives(train_d, 0, ratio, seed)
                cell_cfg = replace(exp.trainer, loss=LossConfig(kind, 0.0, exp.loss.tau), seed=seed)
                res = grid_search(cell_cfg, exp.encoder, lams, [exp.trainer.batch_size], tr, val_d)
                best = res.best
                sub = replace(exp, loss=LossConfig(kind, best.lam, exp.loss.tau), seed=seed,
                              bootstrap=0)
                rep = report_for(sub, best.result.params, test_d)
                rows.append([label, loss_name, repr(best.lam), seed, len(tr),
                             int(tr.labels[:, 0].sum()), best.result.best_epoch, repr(best.metric)]
                            + [repr(rep[c]) for c in cols] + [test_hash])
                log.info("ratio=%s loss=%s seed=%d auroc=%.4f", label, loss_name, seed, rep["auroc"])
    path = out / "sweep.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ratio", "loss", "lambda", "seed", "n_train", "n_pos", "best_epoch",
                    "val_auroc"] + cols + ["test_hash"])
        w.writerows(rows)
    write_manifest(path, exp.to_dict(), exp.hash(), exp.seed, ratios=ratios, losses=losses,
                   n_seeds=args.n_seeds, lambda_grid=lam_grid, base_ratio=base_ratio)
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def _load_for_checkpoint(args):
    params, meta = load_checkpoint(args.checkpoint)
    exp, data = experiment_from_args(args)
    cfg = params.config
    if data.input_dim != cfg.input_dim:
        raise ConfigError(f"dataset has D={data.input_dim} features; checkpoint expects D={cfg.input_dim}")
    if data.static_dim != cfg.static_dim:
        raise ConfigError(
            f"dataset has D_S={data.static_dim} static features; checkpoint expects D_S={cfg.static_dim}"
        )
    if data.num_classes != params.num_classes:
        raise ConfigError(f"dataset has C={data.num_classes}; checkpoint expects C={params.num_classes}")
    if args.part == "all":
        part = data
    else:
        part = dict(zip(("train", "val", "test"), split_data(exp, data)))[args.part]
    kind = LossKind(meta.get("loss", "bce"))
    exp = replace(exp, loss=LossConfig(kind, 0.0, exp.loss.tau))
    return params, exp, part


def cmd_export_embeddings(args) -> int:
    params, exp, part = _load_for_checkpoint(args)
    Z = embed(params, part)
    H = Z.shape[1]
    out = _outdir(args.out)
    path = out / "embeddings.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"z{h + 1}" for h in range(H)])
        for sid, lab, z in zip(part.ids, part.labels, Z):
            w.writerow([sid, ";".join(str(int(v)) for v in lab)] + [repr(float(x)) for x in z])
        anchors = params.anchors
        for c in range(params.num_classes):
            w.writerow([f"__anchor_pos_{c}", 1] + [repr(float(x)) for x in anchors.U[c]])
            w.writerow([f"__anchor_neg_{c}", 0] + [repr(float(x)) for x in anchors.V[c]])
    write_manifest(path, exp.to_dict(), exp.hash(), exp.seed, checkpoint=Path(args.checkpoint).name,
                   part=args.part)
    print(f"wrote {len(part)} embeddings (H={H}) to {path}")
    return 0


def cmd_eval(args) -> int:
    params, exp, part = _load_for_checkpoint(args)
    out = _outdir(args.out)
    rep = report_for(exp, params, part)
    path = rep.to_csv(out / "metrics.csv")
    write_manifest(path, exp.to_dict(), exp.hash(), exp.seed, checkpoint=Path(args.checkpoint).name,
                   part=args.part, test_fingerprint=part.fingerprint())
    print(", ".join(f"{k}={v:.4f}" for k, v in rep.values.items()))
    return 0


def _add_settings(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    for key, (typ, _) in SETTINGS.items():
        p.add_argument(f"--{key}", dest=key.replace("-", "_"), type=typ, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supcon-ehr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    _add_settings(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model and evaluate on the test split")
    _add_settings(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="grid search over lambda and batch size")
    _add_settings(p)
    p.add_argument("--out", required=True)
    p.add_argument("--lambda-grid", help="comma-separated lambda values")
    p.add_argument("--batch-grid", help="comma-separated batch sizes")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("imbalance-sweep", help="downsample positives and compare losses")
    _add_settings(p)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", default="0.05,0.01,0.001")
    p.add_argument("--losses", default="bce,cbce+scr,csce+scr")
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--lambda-grid", help="lambda values searched per cell for regularized losses")
    p.add_argument("--include-base", action="store_true", help="also run at the undownsampled ratio")
    p.set_defaults(func=cmd_imbalance_sweep)

    for name, func, helptext in [
        ("export-embeddings", cmd_export_embeddings, "write encoder outputs and anchors as CSV"),
        ("eval", cmd_eval, "evaluate a checkpoint"),
    ]:
        p = sub.add_parser(name, help=helptext)
        _add_settings(p)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--part", choices=["all", "train", "val", "test"], default="test")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
