"""Numeric sample-by-feature matrices from metadata features."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

# Metadata fields used for training, in column order. sa/da are excluded.
SCALAR_FIELDS = (
    "pr",
    "src_port",
    "dst_port",
    "bytes_out",
    "num_pkts_out",
    "bytes_in",
    "num_pkts_in",
    "time_length",
)
DIRECTION_FIELDS = (
    "intervals_ccnt",
    "ack_psh_rst_syn_fin_cnt",
    "hdr_distinct",
    "hdr_ccnt",
    "pld_distinct",
    "pld_ccnt",
    "hdr_mean",
    "hdr_bin_40",
    "pld_bin_128",
    "pld_bin_inf",
    "pld_max",
    "pld_mean",
    "pld_medium",
    "pld_var",
)
METADATA_FIELDS = SCALAR_FIELDS + DIRECTION_FIELDS + tuple(f"rev_{f}" for f in DIRECTION_FIELDS)


class SchemaError(ValueError):
    """Feature rows disagree with the matrix column layout."""


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @property
    def constant(self) -> np.ndarray:
        return self.std <= 1e-12 * np.maximum(1.0, np.abs(self.mean))

    def transform(self, values: np.ndarray) -> np.ndarray:
        safe = np.where(self.constant, 1.0, self.std)
        out = (values - self.mean) / safe
        out[:, self.constant] = 0.0
        return out


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    column_names: list[str]
    row_ids: list[int]
    scaler: Scaler | None = None

    def __len__(self) -> int:
        return self.values.shape[0]

    def take(self, rows: Sequence[int] | np.ndarray) -> "FeatureMatrix":
        rows = np.asarray(rows, dtype=int)
        return replace(self, values=self.values[rows], row_ids=[self.row_ids[i] for i in rows])


def _row_of(flow) -> tuple[int, Mapping]:
    if hasattr(flow, "features"):
        return flow.id, flow.features
    return flow.get("id", -1), flow


def column_layout(first: Mapping, fields: Sequence[str] = METADATA_FIELDS) -> list[tuple[str, int | None]]:
    """``(field, array_length or None)`` for each field, sized from one row."""
    missing = [f for f in fields if f not in first]
    if missing:
        raise SchemaError("missing metadata fields: " + ", ".join(missing))
    layout = []
    for name in fields:
        value = first[name]
        layout.append((name, len(value) if isinstance(value, list) else None))
    return layout


def column_names(layout: Sequence[tuple[str, int | None]]) -> list[str]:
    names = []
    for name, size in layout:
        if size is None:
            names.append(name)
        else:
            names.extend(f"{name}_{i}" for i in range(size))
    return names


def to_matrix(flows: Iterable, fields: Sequence[str] = METADATA_FIELDS) -> FeatureMatrix:
    """Expand metadata scalars and array elements into matrix columns.

    ``flows`` holds :class:`~flowkit.dataset.LabeledFlow` objects or plain
    feature dicts carrying an ``id``. Array lengths come from the first row
    and must agree across rows.
    """
    rows = [_row_of(f) for f in flows]
    if not rows:
        raise SchemaError("no flows")
    layout = column_layout(rows[0][1], fields)
    names = column_names(layout)
    values = np.empty((len(rows), len(names)), dtype=np.float64)
    for r, (fid, feats) in enumerate(rows):
        c = 0
        for name, size in layout:
            value = feats.get(name)
            if size is None:
                if value is None or isinstance(value, list):
                    raise SchemaError(f"flow {fid}: field {name} is not a scalar")
                values[r, c] = value
                c += 1
            else:
                if not isinstance(value, list) or len(value) != size:
                    raise SchemaError(f"flow {fid}: field {name} expected {size} elements")
                values[r, c : c + size] = value
                c += size
    return FeatureMatrix(values=values, column_names=names, row_ids=[fid for fid, _ in rows])


def fit_scaler(values: np.ndarray) -> Scaler:
    return Scaler(mean=values.mean(axis=0), std=values.std(axis=0))


def standardize(matrix: FeatureMatrix, fit_rows: Sequence[int] | np.ndarray | None = None,
                scaler: Scaler | None = None) -> FeatureMatrix:
    """Z-score every column with statistics from ``fit_rows`` (or a given scaler).

    Zero-variance columns map to 0. The scaler is kept on the result so test
    rows can be transformed with training statistics.
    """
    if scaler is None:
        rows = np.arange(len(matrix)) if fit_rows is None else np.asarray(fit_rows, dtype=int)
        if rows.size == 0:
            raise ValueError("fit_rows must not be empty")
        scaler = fit_scaler(matrix.values[rows])
    return replace(matrix, values=scaler.transform(matrix.values), scaler=scaler)


def _half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_counts(class_sizes: Mapping[str, int], fraction: float) -> dict[str, int]:
    """Rows per class for the first part of a stratified split.

    The total is ``round(fraction * n)``; each class gets the floor of its
    quota and the leftover rows go to the largest remainders.
    """
    total = sum(class_sizes.values())
    target = _half_up(fraction * total)
    quotas = {c: fraction * n for c, n in class_sizes.items()}
    counts = {c: int(np.floor(q)) for c, q in quotas.items()}
    leftover = target - sum(counts.values())
    order = sorted(quotas, key=lambda c: (-(quotas[c] - counts[c]), c))
    for c in order[:leftover]:
        counts[c] += 1
    return counts


def stratified_split(labels: Sequence[str], fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified random row split: ``fraction`` of rows to the first part.

    Returns sorted row-index arrays ``(first, second)``.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    labels = np.asarray(labels)
    classes, inverse = np.unique(labels, return_inverse=True)
    sizes = {str(c): int((inverse == i).sum()) for i, c in enumerate(classes)}
    counts = stratified_counts(sizes, fraction)
    rng = np.random.default_rng(seed)
    first = []
    for i, c in enumerate(classes):
        members = np.flatnonzero(inverse == i)
        rng.shuffle(members)
        first.append(members[: counts[str(c)]])
    first_idx = np.sort(np.concatenate(first)) if first else np.array([], dtype=int)
    mask = np.ones(len(labels), dtype=bool)
    mask[first_idx] = False
    return first_idx, np.flatnonzero(mask)


def train_val_split(
    matrix: FeatureMatrix, labels: Sequence[str], fraction: float, seed: int
) -> tuple[tuple[FeatureMatrix, list[str]], tuple[FeatureMatrix, list[str]]]:
    """Split rows into a ``fraction`` part and the remainder, stratified by label."""
    if len(labels) != len(matrix):
        raise ValueError("labels and matrix rows differ in length")
    first, second = stratified_split(labels, fraction, seed)
    labels = list(labels)
    return (
        (matrix.take(first), [labels[i] for i in first]),
        (matrix.take(second), [labels[i] for i in second]),
    )


def export_csv(matrix: FeatureMatrix, path) -> None:
    """Columnar text export: header of ``id`` plus column names, one row per flow."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", *matrix.column_names])
        for fid, row in zip(matrix.row_ids, matrix.values):
            writer.writerow([fid, *(repr(float(v)) for v in row)])
