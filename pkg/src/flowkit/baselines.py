"""Random forest, RBF SVM and MLP baselines over metadata matrices."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import joblib
import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.multiclass import OneVsRestClassifier
from sklearn.svm import SVC

from .matrix import FeatureMatrix, Scaler, fit_scaler, train_val_split
from .mlp import MLPSoftmax, softmax

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
KINDS = ("random_forest", "svm", "mlp")
ALIASES = {"rf": "random_forest", "forest": "random_forest", "svc": "svm"}

DEFAULT_HYPERPARAMETERS: dict[str, dict[str, Any]] = {
    "random_forest": {
        "n_estimators": 100,
        "max_depth": 10,
        "max_features": "sqrt",
        "train_fraction": 0.8,
        "n_jobs": 1,
    },
    "svm": {"kernel": "rbf", "C": 1.0, "gamma": "scale", "train_fraction": 0.1},
    "mlp": {
        "hidden_units": 121,
        "alpha": 1e-4,
        "optimizer": "adam",
        "learning_rate": 1e-3,
        "batch_size": 200,
        "max_epochs": 200,
        "patience": 10,
        "train_fraction": 0.8,
    },
}


class ModelError(ValueError):
    """Bad model input: schema mismatch, degenerate labels, unreadable file."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    hyperparameters: dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def create(cls, kind: str, seed: int = 0, **overrides) -> "ModelSpec":
        kind = ALIASES.get(kind, kind)
        if kind not in KINDS:
            raise ModelError(f"unknown model kind {kind!r}; choose from {', '.join(KINDS)}")
        params = dict(DEFAULT_HYPERPARAMETERS[kind])
        unknown = set(overrides) - set(params)
        if unknown:
            raise ModelError(f"unknown hyperparameters for {kind}: {', '.join(sorted(unknown))}")
        params.update(overrides)
        return cls(kind=kind, hyperparameters=params, seed=seed)


@dataclass
class TrainedModel:
    spec: ModelSpec
    estimator: Any
    classes: list[str]
    column_names: list[str]
    scaler: Scaler
    report: dict = field(default_factory=dict)


def _build(spec: ModelSpec):
    hp = spec.hyperparameters
    if spec.kind == "random_forest":
        return RandomForestClassifier(
            n_estimators=hp["n_estimators"],
            max_depth=hp["max_depth"],
            max_features=hp["max_features"],
            n_jobs=hp["n_jobs"],
            random_state=spec.seed,
        )
    if spec.kind == "svm":
        return OneVsRestClassifier(SVC(kernel=hp["kernel"], C=hp["C"], gamma=hp["gamma"], random_state=spec.seed))
    return MLPSoftmax(
        hidden_units=hp["hidden_units"],
        alpha=hp["alpha"],
        learning_rate=hp["learning_rate"],
        batch_size=hp["batch_size"],
        max_epochs=hp["max_epochs"],
        patience=hp["patience"],
        seed=spec.seed,
    )


def _scores(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    est = model.estimator
    if model.spec.kind == "svm":
        dec = est.decision_function(X)
        if dec.ndim == 1:
            dec = np.column_stack([np.zeros_like(dec), dec])
        return softmax(dec)
    return est.predict_proba(X)


def train(spec: ModelSpec, X: FeatureMatrix, y: Sequence[str]) -> TrainedModel:
    """Fit a baseline on a stratified ``train_fraction`` of the rows.

    The held-out rows give the validation accuracy in the report.
    Standardization statistics come from the fitting rows only.
    """
    y = [str(v) for v in y]
    if len(y) != len(X):
        raise ModelError(f"{len(X)} rows but {len(y)} labels")
    classes = sorted(set(y))
    if len(classes) < 2:
        if spec.kind != "random_forest":
            raise ModelError(f"{spec.kind} needs at least two classes, got {classes}")
        log.warning("single-class training data; random forest becomes a constant predictor")

    fraction = spec.hyperparameters.get("train_fraction", 0.8)
    if len(classes) >= 2 and len(y) >= 4:
        (fit_m, fit_y), (val_m, val_y) = train_val_split(X, y, fraction, spec.seed)
    else:
        fit_m, fit_y, val_m, val_y = X, y, X.take([]), []
    scaler = fit_scaler(fit_m.values)
    started = time.perf_counter()
    estimator = _build(spec)
    estimator.fit(scaler.transform(fit_m.values), np.asarray(fit_y))
    elapsed = time.perf_counter() - started

    model = TrainedModel(
        spec=spec,
        estimator=estimator,
        classes=classes,
        column_names=list(X.column_names),
        scaler=scaler,
    )
    train_acc = float(np.mean(predict(model, fit_m)[0] == np.asarray(fit_y)))
    val_acc = float(np.mean(predict(model, val_m)[0] == np.asarray(val_y))) if val_y else None
    model.report = {
        "kind": spec.kind,
        "n_fit": len(fit_y),
        "n_val": len(val_y),
        "train_accuracy": train_acc,
        "val_accuracy": val_acc,
        "wall_time_s": elapsed,
    }
    if spec.kind == "mlp":
        model.report["epochs"] = estimator.n_epochs_
    return model


def predict(model: TrainedModel, X: FeatureMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Labels and per-class scores (columns follow ``model.classes``; rows sum to 1)."""
    if list(X.column_names) != model.column_names:
        raise ModelError("feature columns differ from the training schema")
    k = len(model.classes)
    if len(X) == 0:
        return np.array([], dtype=object), np.zeros((0, k))
    values = model.scaler.transform(X.values)
    raw = _scores(model, values)
    # estimator class order -> model.classes order
    est_classes = [str(c) for c in model.estimator.classes_]
    scores = np.zeros((len(X), k))
    for j, c in enumerate(est_classes):
        scores[:, model.classes.index(c)] = raw[:, j]
    labels = np.asarray(model.classes, dtype=object)[np.argmax(scores, axis=1)]
    return labels, scores


def save_model(model: TrainedModel, path: str | Path) -> None:
    joblib.dump({"format_version": MODEL_FORMAT_VERSION, "model": model}, path)


def load_model(path: str | Path) -> TrainedModel:
    try:
        blob = joblib.load(path)
    except Exception as exc:  # joblib raises assorted unpickling errors
        raise ModelError(f"cannot load model {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelError(f"{path}: unsupported model file format")
    return blob["model"]
