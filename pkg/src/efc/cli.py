"""Command-line front end: fit, classify, eval, energies, crosseval."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from efc import __version__
from efc.classifier import BENIGN, MALICIOUS, energies
from efc.dataio import (
    DatasetConfig,
    LabeledTable,
    atomic_write,
    file_digest,
    load_config,
    load_csv,
    load_model,
    read_feature_rows,
    save_model,
    undersample,
)
from efc.discretizer import encode_dataset, fit_schema
from efc.errors import (
    DataError,
    ModelFormatError,
    SchemaMismatch,
    SingleClassError,
    SingularCovariance,
    TooFewFlows,
)
from efc.metrics import EvalReport, confusion, evaluate, f1_score, mean_std, precision_recall
from efc.model import DEFAULT_ALPHA, DEFAULT_PERCENTILE, DEFAULT_Q, EfcModel, fit

logger = logging.getLogger("efc")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_SINGULAR = 5
EXIT_TOO_FEW = 6
EXIT_SCHEMA = 7
EXIT_SINGLE_CLASS = 8
EXIT_MODEL_FORMAT = 9
EXIT_DATA = 10

# most specific first: ModelFormatError and friends subclass EfcError, OSError covers io
_EXIT_CODES: list[tuple[type[BaseException], int, str]] = [
    (SingularCovariance, EXIT_SINGULAR, "singular"),
    (TooFewFlows, EXIT_TOO_FEW, "toofew"),
    (SchemaMismatch, EXIT_SCHEMA, "schema-mismatch"),
    (SingleClassError, EXIT_SINGLE_CLASS, "single-class"),
    (ModelFormatError, EXIT_MODEL_FORMAT, "model-format"),
    (DataError, EXIT_DATA, "data"),
    (OSError, EXIT_IO, "io"),
    (ValueError, EXIT_CONFIG, "config"),
]


@dataclass
class RunManifest:
    command: str
    config: dict | None
    config_source: str | None
    seed: int | None
    q: int | None
    alpha: float | None
    percentile: float | None
    inputs: dict[str, str] = field(default_factory=dict)
    parameters: dict[str, object] = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    version: str = __version__

    def write(self, path: str | os.PathLike) -> None:
        self.finished = _now()
        atomic_write(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("EFC_THREADS", "")))
    except ValueError:
        return max(1, min(8, os.cpu_count() or 1))


def _benign_only(table: LabeledTable) -> LabeledTable:
    malicious = int(table.truth.sum())
    if malicious:
        logger.warning("excluding %d malicious rows from training (model is fit on benign flows only)", malicious)
    return table.subset(np.flatnonzero(table.truth == 0))


def train_model(table: LabeledTable, q: int, alpha: float, percentile: float) -> EfcModel:
    """Fit schema and model on the benign rows of ``table``."""
    benign = _benign_only(table)
    if len(benign) == 0:
        raise DataError("no benign rows to train on")
    schema = fit_schema(benign.rows, benign.kinds, q, names=benign.columns)
    flows = encode_dataset(schema, benign.rows)
    return fit(flows, schema, q, alpha, percentile)


def score_table(model: EfcModel, table: LabeledTable) -> np.ndarray:
    if model.schema is None:
        raise SchemaMismatch("model has no feature schema; cannot read raw CSV input")
    rows = table.select_columns(model.schema.names)
    return energies(model, encode_dataset(model.schema, rows))


def evaluate_table(model: EfcModel, table: LabeledTable) -> EvalReport:
    scores = score_table(model, table)
    pred = (scores >= model.cutoff).astype(np.int8)
    report = evaluate(pred, scores, table.truth)
    report.extra["cutoff"] = model.cutoff
    return report


# commands ----------------------------------------------------------------


def cmd_fit(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    manifest = _manifest("fit", args, config)
    table = load_csv(args.train_csv, config, args.delimiter)
    manifest.inputs["train_csv"] = file_digest(args.train_csv)
    idx = undersample(len(table), args.sample, args.seed)
    table = table.subset(idx)
    model = train_model(table, args.q, args.alpha, args.percentile)
    save_model(model, args.out_model)
    manifest.parameters.update(rows_used=int((table.truth == 0).sum()), cutoff=model.cutoff)
    manifest.write(_manifest_path(args.out_model))
    logger.info("model written to %s (cutoff %.6g)", args.out_model, model.cutoff)
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    if model.schema is None:
        raise SchemaMismatch("model has no feature schema; cannot read raw CSV input")
    rows = read_feature_rows(args.input_csv, model.schema.names, args.delimiter)
    scores = energies(model, encode_dataset(model.schema, rows))
    lines = ["row_index,energy,verdict\n"]
    lines += [f"{k},{e!r},{MALICIOUS if e >= model.cutoff else BENIGN}\n" for k, e in enumerate(scores.tolist())]
    atomic_write(args.out_csv, "".join(lines))
    flagged = int(np.sum(scores >= model.cutoff))
    logger.info("%d of %d flows flagged malicious", flagged, len(scores))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    model = load_model(args.model)
    table = load_csv(args.labeled_csv, config, args.delimiter)
    report = evaluate_table(model, table)
    atomic_write(args.report, report.to_text())
    atomic_write(_roc_path(args.report), report.roc_csv())
    logger.info("F1 %.4f  AUC %.4f", report.f1, report.auc)
    return EXIT_OK


def energy_histogram(benign: np.ndarray, malicious: np.ndarray, cutoff: float) -> dict:
    """Per-class counts over shared Freedman-Diaconis bins of the pooled energies."""
    pooled = np.concatenate([benign, malicious])
    edges = np.histogram_bin_edges(pooled, bins="fd") if pooled.size else np.array([cutoff - 0.5, cutoff + 0.5])
    b_counts, _ = np.histogram(benign, bins=edges)
    m_counts, _ = np.histogram(malicious, bins=edges)
    return {
        "cutoff": float(cutoff),
        "bin_edges": edges.tolist(),
        "benign_counts": b_counts.tolist(),
        "malicious_counts": m_counts.tolist(),
        "benign_below_cutoff": float(np.mean(benign < cutoff)) if benign.size else None,
        "malicious_at_or_above_cutoff": float(np.mean(malicious >= cutoff)) if malicious.size else None,
    }


def cmd_energies(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    model = load_model(args.model)
    table = load_csv(args.labeled_csv, config, args.delimiter)
    scores = score_table(model, table)
    benign, malicious = scores[table.truth == 0], scores[table.truth == 1]
    doc = {
        "benign_energies": benign.tolist(),
        "malicious_energies": malicious.tolist(),
        "histogram": energy_histogram(benign, malicious, model.cutoff),
    }
    atomic_write(args.out_path, json.dumps(doc, indent=1) + "\n")
    return EXIT_OK


def _fold_job(
    k: int,
    train: LabeledTable,
    held_out: LabeledTable,
    tests: list[tuple[str, LabeledTable]],
    args: argparse.Namespace,
) -> dict[str, EvalReport]:
    model = train_model(train, args.q, args.alpha, args.percentile)
    reports = {"same": _safe_eval(model, held_out, f"fold {k} held-out")}
    for name, table in tests:
        reports[name] = _safe_eval(model, table, f"fold {k} on {name}")
    return reports


def _safe_eval(model: EfcModel, table: LabeledTable, what: str) -> EvalReport:
    try:
        return evaluate_table(model, table)
    except SingleClassError:
        # a fold without one of the classes still yields F1; AUC is undefined
        logger.warning("%s has a single class; AUC reported as nan", what)
        scores = score_table(model, table)
        pred = (scores >= model.cutoff).astype(np.int8)
        report = _report_without_auc(pred, table.truth)
        report.extra["cutoff"] = model.cutoff
        return report


def _report_without_auc(pred: np.ndarray, truth: np.ndarray) -> EvalReport:
    tp, fp, fn, tn = confusion(pred, truth)
    value, degenerate = f1_score(tp, fp, fn)
    p, r = precision_recall(tp, fp, fn)
    return EvalReport(tp, fp, fn, tn, p, r, value, math.nan, [], degenerate)


def _pm(values: Sequence[float]) -> str:
    mean, std = mean_std(values)
    return f"{mean:.3f} ± {std:.3f}"


def crosseval_table(train_name: str, per_fold: list[dict[str, EvalReport]], test_names: list[str]) -> str:
    """Mean ± std F1 and AUC over folds, one row per evaluation domain."""
    rows = [("Train/Test " + train_name, "same")] + [(f"Train {train_name}, test {t}", t) for t in test_names]
    width = max(len(r[0]) for r in rows)
    out = [f"{'Evaluation':<{width}} | F1 score        | AUC", "-" * (width + 36)]
    for title, key in rows:
        f1s = [rep[key].f1 for rep in per_fold]
        aucs = [rep[key].auc for rep in per_fold]
        out.append(f"{title:<{width}} | {_pm(f1s):<15} | {_pm(aucs)}")
    return "\n".join(out) + "\n"


def cmd_crosseval(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    test_config = load_config(args.test_config) if args.test_config else config
    manifest = _manifest("crosseval", args, config)
    table = load_csv(args.train_csv, config, args.delimiter)
    manifest.inputs["train_csv"] = file_digest(args.train_csv)
    table = table.subset(undersample(len(table), args.sample, args.seed))
    if len(table) < args.folds:
        raise DataError(f"{len(table)} rows cannot be split into {args.folds} folds")
    if args.folds < 2:
        raise ValueError("need at least 2 folds")

    tests: list[tuple[str, LabeledTable]] = []
    for path in args.test_csvs:
        name = Path(path).stem
        t = load_csv(path, test_config, args.delimiter)
        tests.append((name, t.subset(undersample(len(t), args.sample, args.seed))))
        manifest.inputs[f"test_csv:{name}"] = file_digest(path)

    rng = np.random.default_rng(args.seed)
    folds = np.array_split(rng.permutation(len(table)), args.folds)
    jobs = []
    for k, held in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != k]))
        jobs.append((k, table.subset(train_idx), table.subset(np.sort(held)), tests, args))
    with ThreadPoolExecutor(max_workers=min(_threads(), len(jobs))) as pool:
        per_fold = list(pool.map(lambda job: _fold_job(*job), jobs))

    out = Path(args.report_dir)
    test_names = [name for name, _ in tests]
    for k, reports in enumerate(per_fold):
        for key, report in reports.items():
            atomic_write(out / f"fold{k:02d}_{key}.txt", report.to_text())
    summary = {
        key: {
            "f1": [rep[key].f1 for rep in per_fold],
            "auc": [rep[key].auc for rep in per_fold],
            "f1_mean_std": list(mean_std([rep[key].f1 for rep in per_fold])),
            "auc_mean_std": list(mean_std([rep[key].auc for rep in per_fold])),
        }
        for key in ["same", *test_names]
    }
    atomic_write(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    table_text = crosseval_table(Path(args.train_csv).stem, per_fold, test_names)
    atomic_write(out / "summary.txt", table_text)
    manifest.parameters.update(folds=args.folds, rows=len(table))
    manifest.write(out / "manifest.json")
    print(table_text, end="")
    return EXIT_OK


# plumbing ------------------------------------------------------------------


def _manifest(command: str, args: argparse.Namespace, config: DatasetConfig | None) -> RunManifest:
    return RunManifest(
        command=command,
        config=None if config is None else config.to_dict(),
        config_source=getattr(args, "config", None),
        seed=getattr(args, "seed", None),
        q=getattr(args, "q", None),
        alpha=getattr(args, "alpha", None),
        percentile=getattr(args, "percentile", None),
        parameters={"sample": getattr(args, "sample", None), "delimiter": getattr(args, "delimiter", ",")},
        started=_now(),
    )


def _manifest_path(model_path: str | os.PathLike) -> Path:
    return Path(str(model_path) + ".manifest.json")


def _roc_path(report_path: str | os.PathLike) -> Path:
    return Path(str(report_path) + ".roc.csv")


def _delimiter(text: str) -> str:
    text = {"\\t": "\t", "tab": "\t"}.get(text, text)
    if len(text) != 1:
        raise argparse.ArgumentTypeError("delimiter must be a single character")
    return text


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q", type=int, default=DEFAULT_Q, help="alphabet size (default %(default)s)")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="pseudocount weight (default %(default)s)")
    p.add_argument(
        "--percentile", type=float, default=DEFAULT_PERCENTILE, help="cutoff percentile of training energies"
    )
    p.add_argument("--seed", type=int, default=0, help="seed for undersampling and fold assignment")
    p.add_argument("--sample", type=int, default=None, help="uniform random undersample to this many rows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="efc", description="Energy-based flow classifier")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--delimiter", type=_delimiter, default=",", help="CSV field delimiter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="train a model on the benign rows of a labeled CSV")
    p.add_argument("train_csv")
    p.add_argument("out_model")
    p.add_argument("--config", default="cidds001", help="preset name or JSON dataset config")
    _model_args(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("classify", parents=[common], help="write energy and verdict for every row of a CSV")
    p.add_argument("model")
    p.add_argument("input_csv")
    p.add_argument("out_csv")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", parents=[common], help="F1, AUC, confusion counts and ROC points on a labeled CSV")
    p.add_argument("model")
    p.add_argument("labeled_csv")
    p.add_argument("report")
    p.add_argument("--config", default="cidds001")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("energies", parents=[common], help="per-class energies and histogram data")
    p.add_argument("model")
    p.add_argument("labeled_csv")
    p.add_argument("out_path")
    p.add_argument("--config", default="cidds001")
    p.set_defaults(func=cmd_energies)

    p = sub.add_parser("crosseval", parents=[common], help="k-fold CV on one domain, evaluated on other domains too")
    p.add_argument("train_csv")
    p.add_argument("test_csvs", nargs="*")
    p.add_argument("--report-dir", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--config", default="cidds001")
    p.add_argument("--test-config", default=None, help="dataset config for the test CSVs (default: --config)")
    _model_args(p)
    p.set_defaults(func=cmd_crosseval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except Exception as exc:
        for exc_type, code, category in _EXIT_CODES:
            if isinstance(exc, exc_type):
                print(f"efc: {category} error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
