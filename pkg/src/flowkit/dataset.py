"""Labeled dataset construction: manifest labeling, masking, stratified splits."""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from fnmatch import fnmatchcase
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .capture import Frame
from .extract import extract_capture, find_captures
from .features import DEFAULT_CONFIG, FeatureConfig
from .flows import DEFAULT_IDLE_TIMEOUT_US
from .jsonl import write_jsonl
from .packets import Skip, decode_packet

log = logging.getLogger(__name__)

MASK = "IP_masked"
DEFAULT_SEED = 2020
PARTITIONS = ("train", "test_std", "test_challenge")
BUILTIN_MANIFESTS = {
    "netml": "netml.json",
    "cicids2017": "cicids2017.json",
    "non-vpn2016": "non_vpn2016.json",
}


class ManifestError(ValueError):
    """A manifest is malformed or does not cover the captures."""


@dataclass(frozen=True)
class ManifestEntry:
    glob: str
    labels: dict[str, str]


@dataclass(frozen=True)
class LabelManifest:
    dataset_name: str
    granularities: tuple[str, ...]
    entries: tuple[ManifestEntry, ...]

    @property
    def stratify_by(self) -> str:
        return "fine" if "fine" in self.granularities else self.granularities[-1]

    def match(self, filename: str) -> list[ManifestEntry]:
        return [e for e in self.entries if fnmatchcase(filename, e.glob)]


def load_manifest(source: str | Path) -> LabelManifest:
    """Load a manifest file, or a built-in one by name (``netml``, ``cicids2017``, ``non-vpn2016``)."""
    if str(source) in BUILTIN_MANIFESTS:
        text = resources.files("flowkit").joinpath("manifests", BUILTIN_MANIFESTS[str(source)]).read_text()
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ManifestError(f"cannot read manifest {source}: {exc}") from exc
    try:
        raw = json.loads(text)
        grans = tuple(raw.get("granularities", ("top", "fine")))
        entries = []
        for item in raw["entries"]:
            labels = {g: item[g] for g in grans if item.get(g)}
            if "fine" in grans and "fine" not in labels:
                raise ManifestError(f"entry {item['glob']!r} lacks a fine-grained label")
            entries.append(ManifestEntry(glob=item["glob"], labels=labels))
        return LabelManifest(str(raw.get("dataset", Path(str(source)).stem)), grans, tuple(entries))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"malformed manifest {source}: {exc}") from exc


def resolve_captures(
    manifest: LabelManifest, captures: Sequence[Path]
) -> tuple[list[tuple[Path, ManifestEntry]], list[str]]:
    """Pair every capture with its manifest entry (first match wins).

    Raises :class:`ManifestError` naming captures no entry matches. Returns
    the pairs and a list of warnings (ambiguous captures, unused globs).
    """
    pairs, unmatched, warnings = [], [], []
    for path in captures:
        hits = manifest.match(path.name)
        if not hits:
            unmatched.append(path.name)
            continue
        if len({tuple(sorted(h.labels.items())) for h in hits}) > 1:
            warnings.append(
                f"{path.name} matches {len(hits)} entries with different labels; using {hits[0].glob!r}"
            )
        pairs.append((path, hits[0]))
    if unmatched:
        raise ManifestError("captures not covered by the manifest: " + ", ".join(unmatched))
    for entry in manifest.entries:
        if not any(fnmatchcase(p.name, entry.glob) for p in captures):
            warnings.append(f"manifest glob {entry.glob!r} matched no capture")
    return pairs, warnings


@dataclass(frozen=True)
class FilterRule:
    """Keep packets touching one of ``ips`` inside ``[start_us, end_us]``.

    ``capture`` optionally restricts the rule to captures whose file name
    matches the glob.
    """

    ips: frozenset[str]
    start_us: int
    end_us: int
    capture: str | None = None

    def matches(self, src: str, dst: str, ts: int) -> bool:
        return (src in self.ips or dst in self.ips) and self.start_us <= ts <= self.end_us


def _to_us(value) -> int:
    if isinstance(value, str):
        return int(round(datetime.fromisoformat(value).timestamp() * 1_000_000))
    return int(round(float(value) * 1_000_000))


def load_filter_rules(path: str | Path) -> list[FilterRule]:
    """Rules file: JSON list of ``{"ips": [...], "start": t, "end": t, "capture": glob}``.

    Times are epoch seconds or ISO-8601 strings.
    """
    try:
        raw = json.loads(Path(path).read_text())
        return [
            FilterRule(
                ips=frozenset(r["ips"]),
                start_us=_to_us(r["start"]),
                end_us=_to_us(r["end"]),
                capture=r.get("capture"),
            )
            for r in raw
        ]
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"bad filter rules {path}: {exc}") from exc


def filter_capture(frames: Iterable[Frame], rules: Sequence[FilterRule]) -> Iterator[Frame]:
    """Pass frames whose packet matches any rule; no rules passes everything."""
    if not rules:
        yield from frames
        return
    for frame in frames:
        rec = decode_packet(*frame)
        if isinstance(rec, Skip):
            continue
        src, dst = str(rec.src_ip), str(rec.dst_ip)
        if any(rule.matches(src, dst, rec.timestamp_us) for rule in rules):
            yield frame


@dataclass(frozen=True)
class LabeledFlow:
    id: int
    features: dict
    labels: dict[str, str]

    def feature_row(self) -> dict:
        return {"id": self.id, **self.features}

    def annotation_row(self) -> dict:
        return {"id": self.id, **self.labels}


@dataclass
class DatasetSplit:
    train: list[LabeledFlow]
    test_std: list[LabeledFlow]
    test_challenge: list[LabeledFlow]
    seed: int
    stratify_by: str
    allocation: dict[str, dict[str, int]] = field(default_factory=dict)

    def partitions(self) -> dict[str, list[LabeledFlow]]:
        return {"train": self.train, "test_std": self.test_std, "test_challenge": self.test_challenge}

    def __len__(self) -> int:
        return len(self.train) + len(self.test_std) + len(self.test_challenge)


def tenth(n: int) -> int:
    """``round(0.1 * n)`` with halves rounded up, in exact integer arithmetic."""
    return (n + 5) // 10


def split_dataset(flows: Sequence[LabeledFlow], seed: int = DEFAULT_SEED, stratify_by: str = "fine") -> DatasetSplit:
    """Per class: 10% to test-challenge, 10% to test-std, the rest to train.

    Each class is shuffled with its own generator seeded from ``seed`` and
    the class name, so classes do not perturb each other.
    """
    by_class: dict[str, list[LabeledFlow]] = {}
    for flow in flows:
        by_class.setdefault(flow.labels[stratify_by], []).append(flow)
    split = DatasetSplit([], [], [], seed=seed, stratify_by=stratify_by)
    for cls in sorted(by_class):
        members = sorted(by_class[cls], key=lambda f: f.id)
        n = len(members)
        if n < 3:
            log.warning("class %r has %d flows; all assigned to train", cls, n)
            n_test = 0
        else:
            n_test = tenth(n)
        random.Random(f"{seed}:{cls}").shuffle(members)
        split.test_challenge.extend(members[:n_test])
        split.test_std.extend(members[n_test : 2 * n_test])
        split.train.extend(members[2 * n_test :])
        split.allocation[cls] = {
            "train": n - 2 * n_test,
            "test_std": n_test,
            "test_challenge": n_test,
        }
    for part in split.partitions().values():
        part.sort(key=lambda f: f.id)
    return split


def mask_features(features: dict, endpoint_ips: set[str]) -> dict:
    """Replace endpoint addresses and drop absolute timestamps.

    ``sa``/``da`` become ``IP_masked``; DNS answers and HTTP hosts equal to
    any endpoint address in the dataset are masked as well.
    """
    out = {}
    for key, value in features.items():
        if key in ("time_start", "time_end"):
            continue
        if key in ("sa", "da"):
            value = MASK
        elif key == "dns_answer_ip":
            value = [MASK if ip in endpoint_ips else ip for ip in value]
        elif key == "http_host" and _host_part(value) in endpoint_ips:
            value = MASK
        out[key] = value
    return out


def _host_part(host: str) -> str:
    if host.startswith("["):
        return host[1:].split("]", 1)[0]
    if host.count(":") == 1:
        return host.split(":", 1)[0]
    return host


@dataclass(frozen=True)
class BuildConfig:
    seed: int = DEFAULT_SEED
    idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US
    features: FeatureConfig = DEFAULT_CONFIG
    filter_rules: tuple[FilterRule, ...] = ()
    workers: int = 1


def _extract_one(args: tuple[Path, BuildConfig]) -> tuple[list[dict], dict]:
    path, config = args
    rules = [r for r in config.filter_rules if r.capture is None or fnmatchcase(path.name, r.capture)]
    frame_filter = (lambda frames: filter_capture(frames, rules)) if rules else None
    rows, stats = extract_capture(path, config.idle_timeout_us, config.features, frame_filter)
    return rows, stats.to_dict()


def build_dataset(
    manifest: LabelManifest, captures: str | Path, config: BuildConfig = BuildConfig()
) -> tuple[DatasetSplit, dict]:
    """Extract, label, mask and split every manifest-matched capture."""
    root = Path(captures)
    paths = find_captures(root)
    pairs, warnings = resolve_captures(manifest, paths)
    for w in warnings:
        log.warning(w)

    jobs = [(path, config) for path, _ in pairs]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_extract_one, jobs))
    else:
        results = [_extract_one(job) for job in jobs]

    endpoint_ips: set[str] = set()
    for rows, _ in results:
        for row in rows:
            endpoint_ips.add(row["sa"])
            endpoint_ips.add(row["da"])

    flows: list[LabeledFlow] = []
    capture_summary = []
    for (path, entry), (rows, stats) in zip(pairs, results):
        for row in rows:
            masked = mask_features(row, endpoint_ips)
            flows.append(LabeledFlow(id=len(flows), features=masked, labels=dict(entry.labels)))
        rel = path.relative_to(root).as_posix() if root.is_dir() else path.name
        capture_summary.append({"capture": rel, "labels": entry.labels, **stats})

    split = split_dataset(flows, config.seed, manifest.stratify_by)
    summary = {
        "dataset": manifest.dataset_name,
        "seed": config.seed,
        "stratify_by": split.stratify_by,
        "idle_timeout_us": config.idle_timeout_us,
        "bucket_edges": {
            "intervals_ms": list(config.features.interval_edges_ms),
            "hdr_bytes": list(config.features.hdr_edges),
            "pld_bytes": list(config.features.pld_edges),
        },
        "total_flows": len(flows),
        "partition_sizes": {name: len(part) for name, part in split.partitions().items()},
        "allocation": split.allocation,
        "class_distribution": {
            g: class_distribution(flows, g) for g in manifest.granularities
        },
        "captures": capture_summary,
        "warnings": warnings,
    }
    return split, summary


def class_distribution(flows: Iterable[LabeledFlow | Mapping], granularity: str) -> dict[str, int]:
    """Class -> flow count at one label granularity, sorted by class name."""
    counts: Counter = Counter()
    for flow in flows:
        labels = flow.labels if isinstance(flow, LabeledFlow) else flow
        if granularity not in labels:
            raise KeyError(f"granularity {granularity!r} missing from labels")
        counts[labels[granularity]] += 1
    return dict(sorted(counts.items()))


def write_dataset(split: DatasetSplit, summary: dict, out_dir: str | Path) -> dict[str, Path]:
    """Write features, annotations and the summary.

    Test-challenge annotations go to ``sealed/`` so the released files can
    be shared without them.
    """
    out = Path(out_dir)
    (out / "sealed").mkdir(parents=True, exist_ok=True)
    written = {}
    for name, part in split.partitions().items():
        feat_path = out / f"{name}.jsonl"
        write_jsonl(feat_path, (f.feature_row() for f in part))
        ann_path = out / ("sealed" if name == "test_challenge" else "") / f"{name}_annotations.jsonl"
        write_jsonl(ann_path, (f.annotation_row() for f in part))
        written[name] = feat_path
        written[f"{name}_annotations"] = ann_path
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=False) + "\n")
    written["summary"] = summary_path
    return written
