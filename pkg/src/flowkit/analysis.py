"""Dataset summaries as plot-ready tables."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features.common import index_mapping, top_common
from .matrix import DIRECTION_FIELDS, SCALAR_FIELDS

FAMILIES = {"TLS": "tls_", "DNS": "dns_", "HTTP": "http_"}
METADATA_KEYS = frozenset(SCALAR_FIELDS + DIRECTION_FIELDS)

ARRAY_FIELDS = tuple(f for f in DIRECTION_FIELDS if f.endswith(("_ccnt", "_cnt")))
ARRAY_FIELDS = ARRAY_FIELDS + tuple(f"rev_{f}" for f in ARRAY_FIELDS)
HISTOGRAM_FIELDS = tuple(
    f for f in SCALAR_FIELDS + DIRECTION_FIELDS if f not in ARRAY_FIELDS
)
CATEGORICAL_FIELDS = (
    "tls_cs",
    "tls_ext_types",
    "tls_svr_cs",
    "tls_svr_ext_types",
    "dns_query_name",
    "dns_answer_ip",
    "http_method",
    "http_host",
    "http_uri",
    "http_content_type",
    "http_code",
)


def feature_presence(rows: Iterable[Mapping]) -> dict[str, int]:
    """Number of flows carrying each feature family."""
    counts = {"Metadata": 0, "TLS": 0, "DNS": 0, "HTTP": 0}
    for row in rows:
        if not METADATA_KEYS.isdisjoint(row):
            counts["Metadata"] += 1
        for family, prefix in FAMILIES.items():
            if any(k.startswith(prefix) for k in row):
                counts[family] += 1
    return counts


def array_means(rows: Sequence[Mapping], labels: Sequence[str], name: str) -> dict[str, list[float]]:
    """Per-class mean of every index of an array feature."""
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = defaultdict(int)
    for row, label in zip(rows, labels):
        value = row.get(name)
        if not isinstance(value, list):
            continue
        vec = np.asarray(value, dtype=np.float64)
        if label in sums and sums[label].shape == vec.shape:
            sums[label] += vec
        else:
            sums.setdefault(label, vec.copy())
        counts[label] += 1
    return {c: (sums[c] / counts[c]).tolist() for c in sorted(sums)}


def scalar_histogram(
    rows: Sequence[Mapping], labels: Sequence[str], name: str, bins: int = 100
) -> tuple[list[float], dict[str, list[int]]]:
    """Equal-width histogram over the global range, counted per class."""
    pairs = [(float(r[name]), lab) for r, lab in zip(rows, labels) if isinstance(r.get(name), (int, float))]
    if not pairs:
        return [], {}
    values = np.array([v for v, _ in pairs])
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    out: dict[str, list[int]] = {}
    labs = np.array([lab for _, lab in pairs])
    for cls in sorted(set(labs)):
        counts, _ = np.histogram(values[labs == cls], bins=edges)
        out[cls] = counts.tolist()
    return edges.tolist(), out


def categorical_values(rows: Iterable[Mapping], name: str) -> list:
    out = []
    for row in rows:
        value = row.get(name)
        if value is None:
            continue
        if isinstance(value, list):
            out.extend(value)
        else:
            out.append(value)
    return out


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def analyze(
    rows: Sequence[Mapping],
    annotations: Mapping[int, Mapping[str, str]] | None,
    out_dir: str | Path,
    top_k: int = 5,
    bins: int = 100,
) -> dict:
    """Write class distributions, feature presence, per-feature tables and top-k values."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {"flows": len(rows)}

    presence = feature_presence(rows)
    summary["feature_presence"] = presence
    _write_csv(out / "feature_presence.csv", ["family", "flows"], presence.items())

    granularities: list[str] = []
    if annotations:
        granularities = sorted({g for labels in annotations.values() for g in labels if g != "id"})
        summary["class_distribution"] = {}
        for g in granularities:
            dist: dict[str, int] = defaultdict(int)
            for row in rows:
                labels = annotations.get(row.get("id"))
                if labels is not None and g in labels:
                    dist[labels[g]] += 1
            dist = dict(sorted(dist.items()))
            summary["class_distribution"][g] = dist
            _write_csv(out / f"class_distribution_{g}.csv", ["class", "flows"], dist.items())

    group = "fine" if "fine" in granularities else (granularities[-1] if granularities else None)
    if group:
        labels = [annotations.get(r.get("id"), {}).get(group, "unlabeled") for r in rows]
    else:
        labels = ["all"] * len(rows)

    for name in ARRAY_FIELDS:
        means = array_means(rows, labels, name)
        if means:
            width = max(len(v) for v in means.values())
            _write_csv(
                out / f"array_mean_{name}.csv",
                ["class", *(f"{name}_{i}" for i in range(width))],
                ([c, *v] for c, v in means.items()),
            )
    for name in HISTOGRAM_FIELDS:
        edges, hist = scalar_histogram(rows, labels, name, bins)
        if hist:
            _write_csv(
                out / f"hist_{name}.csv",
                ["bin_lo", "bin_hi", *hist],
                ([edges[i], edges[i + 1], *(hist[c][i] for c in hist)] for i in range(len(edges) - 1)),
            )

    summary["top_values"] = {}
    mappings = {}
    for name in CATEGORICAL_FIELDS:
        values = categorical_values(rows, name)
        if not values:
            continue
        summary["top_values"][name] = [[v, n] for v, n in top_common(values, top_k)]
        mappings[name] = index_mapping(values)
    _write_csv(
        out / "top_values.csv",
        ["feature", "rank", "value", "count"],
        ([name, i + 1, v, n] for name, ranked in summary["top_values"].items() for i, (v, n) in enumerate(ranked)),
    )
    for name, mapping in mappings.items():
        (out / f"index_map_{name}.json").write_text(
            json.dumps({str(k): v for k, v in mapping.items()}, indent=1) + "\n"
        )
    (out / "analysis.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
