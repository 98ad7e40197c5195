"""Command line entry point.

Exit status: 0 on success, 1 for invalid input, 2 when processing fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .capture import CaptureError
from .dataset import (
    DEFAULT_SEED,
    BuildConfig,
    ManifestError,
    build_dataset,
    load_filter_rules,
    load_manifest,
    write_dataset,
)
from .evaluation import LabelError, SubmissionError, score_submission, write_report
from .extract import extract_capture, find_captures
from .features import FeatureConfig
from .flows import DEFAULT_IDLE_TIMEOUT_US
from .jsonl import read_jsonl, write_jsonl
from .matrix import SchemaError

OUT_DIR_ENV = "FLOWKIT_OUT_DIR"
log = logging.getLogger("flowkit")


class UsageError(Exception):
    """Bad arguments or unusable inputs; maps to exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


_STANDARD_ATTRS = frozenset(vars(logging.LogRecord("", 0, "", 0, "", None, None))) | {"message", "asctime"}


class JsonFormatter(logging.Formatter):
    """One JSON object per log record, carrying any ``extra`` fields."""

    def format(self, record: logging.LogRecord) -> str:
        event = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        for key, value in vars(record).items():
            if key not in _STANDARD_ATTRS:
                event[key] = value
        if record.exc_info:
            event["exc"] = self.formatException(record.exc_info)
        return json.dumps(event, default=str)


def _setup_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    if verbosity < 0:
        level = logging.ERROR
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


# ---------------------------------------------------------------- helpers


def _existing(path: str | None, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _out_dir(args) -> Path:
    value = args.out_dir or os.environ.get(OUT_DIR_ENV)
    if not value:
        raise UsageError(f"--out-dir is required (or set {OUT_DIR_ENV})")
    return Path(value)


def _edges(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _feature_config(args) -> FeatureConfig:
    base = FeatureConfig()
    try:
        return FeatureConfig(
            interval_edges_ms=args.interval_edges or base.interval_edges_ms,
            hdr_edges=args.hdr_edges or base.hdr_edges,
            pld_edges=args.pld_edges or base.pld_edges,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _timeout_us(seconds: float) -> int:
    if seconds <= 0:
        raise UsageError("--timeout must be positive")
    return int(round(seconds * 1_000_000))


def _parse_params(pairs: Sequence[str]) -> dict:
    params = {}
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {pair!r}")
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            params[key] = raw
    return params


def _annotations(path: Path) -> dict:
    return {row["id"]: row for row in read_jsonl(path)}


# ------------------------------------------------------------ subcommands


def cmd_extract(args) -> int:
    root = _existing(args.captures, "--captures")
    config = _feature_config(args)
    timeout = _timeout_us(args.timeout)
    out = Path(args.out) if args.out else _out_dir(args) / "flows.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = find_captures(root)
    if not paths:
        raise UsageError(f"no capture files under {root}")
    rows = []
    for path in paths:
        flows, _ = extract_capture(path, timeout, config)
        rel = path.relative_to(root).as_posix() if root.is_dir() else path.name
        for flow in flows:
            rows.append({"id": len(rows), "capture": rel, **flow})
    n = write_jsonl(out, rows)
    log.info("wrote flows", extra={"event": "extract_done", "flows": n, "path": str(out)})
    return 0


def cmd_build_dataset(args) -> int:
    captures = _existing(args.captures, "--captures")
    manifest_src = args.manifest
    if manifest_src is None:
        raise UsageError("--manifest is required")
    manifest = load_manifest(manifest_src)
    rules = tuple(load_filter_rules(_existing(args.filter_rules, "--filter-rules"))) if args.filter_rules else ()
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    config = BuildConfig(
        seed=args.seed,
        idle_timeout_us=_timeout_us(args.timeout),
        features=_feature_config(args),
        filter_rules=rules,
        workers=args.workers,
    )
    out = _out_dir(args)
    split, summary = build_dataset(manifest, captures, config)
    written = write_dataset(split, summary, out)
    log.info(
        "dataset written",
        extra={"event": "build_done", "flows": len(split), "out_dir": str(out), **summary["partition_sizes"]},
    )
    print(json.dumps({k: str(v) for k, v in written.items()}, indent=2))
    return 0


def cmd_analyze(args) -> int:
    from .analysis import analyze

    rows = []
    for path in args.features:
        rows.extend(read_jsonl(_existing(path, "--features")))
    annotations: dict = {}
    for path in args.annotations or ():
        annotations.update(_annotations(_existing(path, "--annotations")))
    summary = analyze(rows, annotations or None, _out_dir(args), top_k=args.top_k, bins=args.bins)
    print(json.dumps({"flows": summary["flows"], "feature_presence": summary["feature_presence"]}))
    return 0


def _load_labeled(features: Path, annotations: Path, granularity: str):
    from .matrix import to_matrix

    labels = _annotations(annotations)
    rows = list(read_jsonl(features))
    missing = [r.get("id") for r in rows if r.get("id") not in labels]
    if missing:
        raise UsageError(f"{len(missing)} feature rows lack annotations (first id {missing[0]})")
    try:
        y = [str(labels[r["id"]][granularity]) for r in rows]
    except KeyError:
        raise UsageError(f"annotations lack granularity {granularity!r}") from None
    return to_matrix(rows), y


def cmd_train(args) -> int:
    from .baselines import ModelSpec, save_model, train

    features = _existing(args.features, "--features")
    annotations = _existing(args.annotations, "--annotations")
    spec = ModelSpec.create(args.model, seed=args.seed, **_parse_params(args.param))
    X, y = _load_labeled(features, annotations, args.granularity)
    model = train(spec, X, y)
    out = Path(args.out) if args.out else _out_dir(args) / f"{spec.kind}.joblib"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    report = {**model.report, "hyperparameters": spec.hyperparameters, "seed": spec.seed,
              "granularity": args.granularity, "classes": model.classes, "model": str(out)}
    out.with_suffix(".train.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report))
    return 0


def cmd_predict(args) -> int:
    from .baselines import load_model, predict
    from .matrix import to_matrix

    model = load_model(_existing(args.model, "--model"))
    rows = list(read_jsonl(_existing(args.features, "--features")))
    if not rows:
        raise UsageError("no feature rows")
    X = to_matrix(rows)
    labels, scores = predict(model, X)
    out = Path(args.out) if args.out else _out_dir(args) / "predictions.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)

    def emit():
        for fid, label, row in zip(X.row_ids, labels, scores):
            rec = {"id": fid, "label": str(label)}
            if args.scores:
                rec["scores"] = {c: float(s) for c, s in zip(model.classes, row)}
            yield rec

    n = write_jsonl(out, emit())
    log.info("predictions written", extra={"event": "predict_done", "rows": n, "path": str(out)})
    return 0


def cmd_score(args) -> int:
    predictions = _existing(args.predictions, "--predictions")
    sealed = _existing(args.sealed, "--sealed")
    report, cm = score_submission(predictions, sealed, args.task, args.granularity, args.positive)
    if args.out_dir or os.environ.get(OUT_DIR_ENV):
        write_report(report, cm, _out_dir(args))
    sys.stdout.write(report.to_text())
    return 0


# ----------------------------------------------------------------- parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", help=f"output directory (default: ${OUT_DIR_ENV})")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    p.add_argument("-q", "--quiet", action="store_true", help="errors only")


def _add_extraction(p: argparse.ArgumentParser) -> None:
    p.add_argument("--captures", help="capture file or directory searched recursively")
    p.add_argument("--timeout", type=float, default=DEFAULT_IDLE_TIMEOUT_US / 1e6,
                   help="flow idle timeout in seconds (default: %(default)s)")
    p.add_argument("--interval-edges", type=_edges, metavar="MS,..",
                   help="inter-arrival bucket edges in milliseconds")
    p.add_argument("--hdr-edges", type=_edges, metavar="B,..", help="header length bucket edges in bytes")
    p.add_argument("--pld-edges", type=_edges, metavar="B,..", help="payload length bucket edges in bytes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"flowkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", help="per-flow features from captures as JSON lines")
    _add_common(p)
    _add_extraction(p)
    p.add_argument("--out", help="output JSON-lines file (default: OUT_DIR/flows.jsonl)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("build-dataset", help="labeled, masked, split dataset from a manifest")
    _add_common(p)
    _add_extraction(p)
    p.add_argument("--manifest", help="manifest JSON path or builtin name (netml, cicids2017, non-vpn2016)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="split seed (default: %(default)s)")
    p.add_argument("--filter-rules", help="JSON list of IP/time rules selecting flows of interest")
    p.add_argument("--workers", type=int, default=1, help="parallel capture workers (default: 1)")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("analyze", help="class distributions, feature presence, histograms, top values")
    _add_common(p)
    p.add_argument("--features", nargs="+", required=True, help="feature JSON-lines files")
    p.add_argument("--annotations", nargs="*", help="annotation JSON-lines files")
    p.add_argument("--top-k", type=int, default=5, help="common values per feature (default: 5)")
    p.add_argument("--bins", type=int, default=100, help="histogram bins (default: 100)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="fit a baseline model on metadata features")
    _add_common(p)
    p.add_argument("--features", help="training features JSON lines")
    p.add_argument("--annotations", help="training annotations JSON lines")
    p.add_argument("--granularity", default="fine", help="label level: top, mid or fine (default: fine)")
    p.add_argument("--model", default="random_forest", help="random_forest (rf), svm or mlp")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="hyperparameter override (repeatable)")
    p.add_argument("--seed", type=int, default=0, help="model seed (default: 0)")
    p.add_argument("--out", help="model file (default: OUT_DIR/<kind>.joblib)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label feature rows with a trained model")
    _add_common(p)
    p.add_argument("--model", help="model file from train")
    p.add_argument("--features", help="features JSON lines")
    p.add_argument("--scores", action="store_true", help="include per-class scores in each row")
    p.add_argument("--out", help="predictions file (default: OUT_DIR/predictions.jsonl)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("score", help="score a predictions file against sealed annotations")
    _add_common(p)
    p.add_argument("--predictions", help="JSON lines of {id, label}")
    p.add_argument("--sealed", help="annotation JSON lines")
    p.add_argument("--task", choices=("auto", "binary", "multiclass"), default="auto")
    p.add_argument("--granularity", default="fine", help="annotation label level (default: fine)")
    p.add_argument("--positive", default="malware", help="positive class for binary scoring")
    p.set_defaults(func=cmd_score)
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _setup_logging(-1 if args.quiet else args.verbose)
    try:
        return args.func(args)
    except (UsageError, SubmissionError, ManifestError, LabelError, SchemaError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        from .baselines import ModelError

        if isinstance(exc, (ModelError, CaptureError)):
            print(f"error: {exc}", file=sys.stderr)
            return 1 if isinstance(exc, ModelError) else 2
        log.error("run failed", exc_info=True, extra={"event": "failure"})
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
