"""Capture file to per-flow feature records."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .capture import Frame, read_capture
from .features import DEFAULT_CONFIG, FeatureConfig, extract_features
from .flows import DEFAULT_IDLE_TIMEOUT_US, FlowAssembler, FlowRecord
from .packets import PacketRecord, Skip, decode_packet

log = logging.getLogger(__name__)

CAPTURE_SUFFIXES = (".pcap", ".pcapng", ".cap")


@dataclass
class CaptureStats:
    frames: int = 0
    packets: int = 0
    flows: int = 0
    skipped: Counter = field(default_factory=Counter)
    overflow_packets: int = 0
    truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "packets": self.packets,
            "flows": self.flows,
            "skipped": dict(sorted(self.skipped.items())),
            "overflow_packets": self.overflow_packets,
            "truncated": self.truncated,
        }


def decode_frames(frames: Iterable[Frame], stats: CaptureStats) -> Iterator[PacketRecord]:
    for frame, link_type, ts in frames:
        stats.frames += 1
        rec = decode_packet(frame, link_type, ts)
        if isinstance(rec, Skip):
            stats.skipped[rec.reason.value] += 1
            continue
        stats.packets += 1
        yield rec


def iter_flows(
    packets: Iterable[PacketRecord],
    idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US,
    stats: CaptureStats | None = None,
) -> Iterator[FlowRecord]:
    assembler = FlowAssembler(idle_timeout_us)
    for pkt in packets:
        for flow in assembler.add(pkt):
            yield _count(flow, stats)
    for flow in assembler.flush():
        yield _count(flow, stats)


def _count(flow: FlowRecord, stats: CaptureStats | None) -> FlowRecord:
    if stats is not None:
        stats.flows += 1
        stats.overflow_packets += flow.fwd_overflow + flow.rev_overflow
    return flow


def extract_capture(
    path: str | Path,
    idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US,
    config: FeatureConfig = DEFAULT_CONFIG,
    frame_filter: Callable[[Iterable[Frame]], Iterable[Frame]] | None = None,
) -> tuple[list[dict], CaptureStats]:
    """Feature dicts for every flow in a capture, in flow emission order."""
    stats = CaptureStats()
    reader = read_capture(path)
    frames: Iterable[Frame] = reader
    if frame_filter is not None:
        frames = frame_filter(frames)
    rows = [
        extract_features(flow, config).to_dict()
        for flow in iter_flows(decode_frames(frames, stats), idle_timeout_us, stats)
    ]
    stats.truncated = reader.truncated
    log.info(
        "extracted capture",
        extra={"event": "capture_done", "capture": str(path), **stats.to_dict()},
    )
    return rows, stats


def find_captures(root: str | Path) -> list[Path]:
    """Capture files under ``root`` (or ``root`` itself), sorted by relative path."""
    root = Path(root)
    if root.is_file():
        return [root]
    if not root.is_dir():
        raise FileNotFoundError(f"capture path not found: {root}")
    return sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in CAPTURE_SUFFIXES),
        key=lambda p: p.relative_to(root).as_posix(),
    )
