"""Detection and multi-class metrics, and submission scoring."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .jsonl import read_jsonl


class LabelError(ValueError):
    """A label outside the declared class list."""


class SubmissionError(ValueError):
    """A predictions file does not cover the sealed ids exactly once."""

    def __init__(self, missing=(), duplicate=(), unknown=(), bad_label=()):
        self.missing = sorted(missing)
        self.duplicate = sorted(duplicate)
        self.unknown = sorted(unknown)
        self.bad_label = sorted(bad_label)
        parts = []
        for name, ids in (("missing", self.missing), ("duplicate", self.duplicate),
                          ("unknown", self.unknown), ("unknown label", self.bad_label)):
            if ids:
                parts.append(f"{name} ids: {', '.join(map(str, ids))}")
        super().__init__("submission rejected; " + "; ".join(parts))


@dataclass(frozen=True)
class ConfusionMatrix:
    classes: list[str]
    counts: np.ndarray  # rows = true, columns = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred", *self.classes])
            for cls, row in zip(self.classes, self.counts):
                w.writerow([cls, *map(int, row)])


def confusion(y_true: Sequence, y_pred: Sequence, classes: Sequence[str], ids: Sequence | None = None) -> ConfusionMatrix:
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred differ in length")
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for n, (t, p) in enumerate(zip(y_true, y_pred)):
        if t not in index or p not in index:
            where = ids[n] if ids is not None else n
            bad = t if t not in index else p
            raise LabelError(f"unknown label {bad!r} at id {where}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(list(classes), counts)


@dataclass(frozen=True)
class BinaryRates:
    tpr: float
    far: float
    degenerate: tuple[str, ...] = ()


def _ratio(num: int, den: int) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def binary_metrics(cm: ConfusionMatrix, positive: str) -> BinaryRates:
    """Detection rate TP/(TP+FN) and false alarm rate FP/(TN+FP)."""
    if len(cm.classes) != 2:
        raise ValueError("binary metrics need exactly two classes")
    p = cm.classes.index(positive)
    q = 1 - p
    tp, fn = int(cm.counts[p, p]), int(cm.counts[p, q])
    fp, tn = int(cm.counts[q, p]), int(cm.counts[q, q])
    tpr, bad_tpr = _ratio(tp, tp + fn)
    far, bad_far = _ratio(fp, tn + fp)
    flags = tuple(name for name, bad in (("tpr", bad_tpr), ("far", bad_far)) if bad)
    return BinaryRates(tpr=tpr, far=far, degenerate=flags)


def average_precision(y_true: Sequence[bool], scores: Sequence[float]) -> float:
    """Step-interpolated area under the precision-recall curve.

    Samples are ranked by descending score; tied scores form one threshold.
    AP = sum over thresholds of (recall gain) * precision.
    """
    y = np.asarray(y_true, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    # last index of each tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_at = tp[ends]
    precision = tp_at / (ends + 1)
    recall = tp_at / n_pos
    gains = np.diff(np.r_[0.0, recall])
    return float(np.sum(gains * precision))


@dataclass
class ClassStats:
    precision: float
    recall: float
    f1: float
    average_precision: float | None
    support: int


@dataclass
class EvalReport:
    task: str
    classes: list[str]
    confusion: list[list[int]]
    n_samples: int
    tpr: float | None = None
    far: float | None = None
    positive: str | None = None
    f1: float | None = None
    f1_average: str | None = None
    f1_macro: float | None = None
    f1_micro: float | None = None
    map: float | None = None
    map_classes: int | None = None
    per_class: dict[str, ClassStats] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for stats in d["per_class"].values():
            if stats["average_precision"] is not None and math.isnan(stats["average_precision"]):
                stats["average_precision"] = None
        return d

    def to_text(self) -> str:
        lines = [f"task: {self.task}   samples: {self.n_samples}"]
        if self.task == "binary":
            lines.append(f"positive class: {self.positive}")
            lines.append(f"TPR: {self.tpr:.4f}   FAR: {self.far:.4f}")
        else:
            lines.append(
                f"F1 ({self.f1_average}): {self.f1:.4f}   macro: {self.f1_macro:.4f}   "
                f"micro: {self.f1_micro:.4f}   mAP: {self.map:.4f} over {self.map_classes} classes"
            )
        width = max([len("class")] + [len(c) for c in self.classes])
        lines.append("")
        lines.append(f"{'class':<{width}}  precision  recall      f1      AP  support")
        for cls, st in self.per_class.items():
            ap = "     -" if st.average_precision is None or math.isnan(st.average_precision) else f"{st.average_precision:6.4f}"
            lines.append(
                f"{cls:<{width}}  {st.precision:9.4f}  {st.recall:6.4f}  {st.f1:6.4f}  {ap}  {st.support:7d}"
            )
        if self.flags:
            lines.append("")
            lines.extend(f"note: {f}" for f in self.flags)
        return "\n".join(lines) + "\n"


def _per_class(cm: ConfusionMatrix) -> dict[str, ClassStats]:
    out = {}
    counts = cm.counts
    for i, cls in enumerate(cm.classes):
        tp = int(counts[i, i])
        support = int(counts[i].sum())
        predicted = int(counts[:, i].sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[cls] = ClassStats(precision, recall, f1, None, support)
    return out


def multiclass_metrics(cm: ConfusionMatrix, scores: np.ndarray, y_true: Sequence[str]) -> EvalReport:
    """F1 (support-weighted headline, plus macro and micro) and mAP over classes.

    ``scores`` has one column per class in ``cm.classes`` order. Classes with
    no true samples are left out of the macro averages and of mAP.
    """
    scores = np.asarray(scores, dtype=np.float64)
    per_class = _per_class(cm)
    flags = []
    y = np.asarray(y_true)
    aps = []
    for j, cls in enumerate(cm.classes):
        st = per_class[cls]
        if st.support == 0:
            flags.append(f"class {cls!r} has zero support; excluded from macro F1 and mAP")
            continue
        st.average_precision = average_precision(y == cls, scores[:, j])
        aps.append(st.average_precision)
    supported = [st for st in per_class.values() if st.support]
    total = sum(st.support for st in supported)
    weighted = sum(st.f1 * st.support for st in supported) / total if total else 0.0
    macro = float(np.mean([st.f1 for st in supported])) if supported else 0.0
    micro = float(np.trace(cm.counts) / cm.total) if cm.total else 0.0
    return EvalReport(
        task="multiclass",
        classes=list(cm.classes),
        confusion=cm.counts.tolist(),
        n_samples=cm.total,
        f1=weighted,
        f1_average="weighted",
        f1_macro=macro,
        f1_micro=micro,
        map=float(np.mean(aps)) if aps else 0.0,
        map_classes=len(aps),
        per_class=per_class,
        flags=flags,
    )


def binary_report(cm: ConfusionMatrix, positive: str) -> EvalReport:
    rates = binary_metrics(cm, positive)
    return EvalReport(
        task="binary",
        classes=list(cm.classes),
        confusion=cm.counts.tolist(),
        n_samples=cm.total,
        tpr=rates.tpr,
        far=rates.far,
        positive=positive,
        per_class=_per_class(cm),
        flags=[f"{name} denominator is zero" for name in rates.degenerate],
    )


def load_submission(path: str | Path) -> list[dict]:
    return list(read_jsonl(path))


def score_submission(
    predictions: str | Path | Sequence[Mapping],
    sealed: str | Path | Sequence[Mapping],
    task: str = "auto",
    granularity: str = "fine",
    positive: str = "malware",
) -> tuple[EvalReport, ConfusionMatrix]:
    """Join predictions to sealed annotations by id and score them.

    Prediction rows are ``{"id": int, "label": str}`` with an optional
    ``"scores": {class: p}``; without scores mAP uses one-hot predictions.
    Missing, duplicate and unknown ids are all reported in one rejection.
    """
    preds = load_submission(predictions) if isinstance(predictions, (str, Path)) else list(predictions)
    truth_rows = list(read_jsonl(sealed)) if isinstance(sealed, (str, Path)) else list(sealed)
    truth = {}
    for row in truth_rows:
        if granularity not in row:
            raise KeyError(f"annotations lack granularity {granularity!r}")
        truth[row["id"]] = str(row[granularity])

    seen = Counter(row.get("id") for row in preds)
    duplicate = {i for i, n in seen.items() if n > 1}
    unknown = {i for i in seen if i not in truth}
    missing = set(truth) - set(seen)
    classes = sorted(set(truth.values()))
    bad_label = {row.get("id") for row in preds if str(row.get("label")) not in classes}
    if missing or duplicate or unknown or bad_label:
        raise SubmissionError(missing, duplicate, unknown, bad_label - unknown)

    preds = sorted(preds, key=lambda r: r["id"])
    ids = [r["id"] for r in preds]
    y_true = [truth[i] for i in ids]
    y_pred = [str(r["label"]) for r in preds]
    cm = confusion(y_true, y_pred, classes, ids)

    if task == "auto":
        task = "binary" if len(classes) == 2 else "multiclass"
    if task == "binary":
        if positive not in classes:
            raise ValueError(f"positive class {positive!r} not among {classes}")
        return binary_report(cm, positive), cm
    scores = np.zeros((len(preds), len(classes)))
    if all("scores" in r for r in preds):
        for n, r in enumerate(preds):
            for j, c in enumerate(classes):
                scores[n, j] = float(r["scores"].get(c, 0.0))
    else:
        for n, label in enumerate(y_pred):
            scores[n, classes.index(label)] = 1.0
    return multiclass_metrics(cm, scores, y_true), cm


def write_report(report: EvalReport, cm: ConfusionMatrix, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "report.json",
        "text": out / "report.txt",
        "confusion": out / "confusion.csv",
    }
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    paths["text"].write_text(report.to_text())
    cm.to_csv(paths["confusion"])
    return paths
