"""Protocol-independent flow statistics."""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

from ..flows import FlowRecord
from ..packets import PacketRecord


def _load_schema() -> dict:
    return json.loads(resources.files("flowkit").joinpath("schema.json").read_text())


SCHEMA = _load_schema()


@dataclass(frozen=True)
class FeatureConfig:
    """Histogram bucket edges. Interval edges are in milliseconds."""

    interval_edges_ms: tuple[int, ...] = tuple(SCHEMA["edges"]["intervals_ms"])
    hdr_edges: tuple[int, ...] = tuple(SCHEMA["edges"]["hdr_bytes"])
    pld_edges: tuple[int, ...] = tuple(SCHEMA["edges"]["pld_bytes"])

    def __post_init__(self):
        for name in ("interval_edges_ms", "hdr_edges", "pld_edges"):
            edges = getattr(self, name)
            if any(b <= a for a, b in zip(edges, edges[1:])):
                raise ValueError(f"{name} must be strictly ascending: {edges}")

    @property
    def interval_edges_us(self) -> tuple[int, ...]:
        return tuple(e * 1000 for e in self.interval_edges_ms)


DEFAULT_CONFIG = FeatureConfig()


def compact_hist(values: Sequence[int], edges: Sequence[int]) -> list[int]:
    """Count values into ``len(edges) + 1`` left-closed buckets.

    Bucket ``i`` holds ``edges[i-1] <= v < edges[i]``; the first and last
    buckets are open-ended.
    """
    counts = [0] * (len(edges) + 1)
    for v in values:
        counts[bisect_right(edges, v)] += 1
    return counts


@dataclass(frozen=True)
class DirectionStats:
    """Statistics over the stored packets of one flow direction."""

    intervals_ccnt: list[int]
    ack_psh_rst_syn_fin_cnt: list[int]
    hdr_distinct: int
    hdr_ccnt: list[int]
    pld_distinct: int
    pld_ccnt: list[int]
    hdr_mean: float
    hdr_bin_40: int
    pld_bin_128: int
    pld_bin_inf: int
    pld_max: int
    pld_mean: float
    pld_median: int
    pld_var: float

    def items(self) -> list[tuple[str, object]]:
        """Field/value pairs in output order, ``pld_median`` spelled ``pld_medium``."""
        return [
            ("intervals_ccnt", self.intervals_ccnt),
            ("ack_psh_rst_syn_fin_cnt", self.ack_psh_rst_syn_fin_cnt),
            ("hdr_distinct", self.hdr_distinct),
            ("hdr_ccnt", self.hdr_ccnt),
            ("pld_distinct", self.pld_distinct),
            ("pld_ccnt", self.pld_ccnt),
            ("hdr_mean", self.hdr_mean),
            ("hdr_bin_40", self.hdr_bin_40),
            ("pld_bin_128", self.pld_bin_128),
            ("pld_bin_inf", self.pld_bin_inf),
            ("pld_max", self.pld_max),
            ("pld_mean", self.pld_mean),
            ("pld_medium", self.pld_median),
            ("pld_var", self.pld_var),
        ]


def direction_stats(packets: Sequence[PacketRecord], config: FeatureConfig = DEFAULT_CONFIG) -> DirectionStats:
    stamps = sorted(p.timestamp_us for p in packets)
    intervals = [b - a for a, b in zip(stamps, stamps[1:])]
    flags = [0, 0, 0, 0, 0]
    for p in packets:
        for i, bit in enumerate(p.tcp_flags):
            flags[i] += bit
    hdrs = [p.header_len for p in packets]
    plds = [p.payload_len for p in packets]
    n = len(packets)
    if n:
        total = sum(plds)
        pld_mean = total / n
        # integer moments: exact and independent of packet order
        pld_var = (n * sum(x * x for x in plds) - total * total) / (n * n)
        hdr_mean = sum(hdrs) / n
        pld_median = sorted(plds)[(n - 1) // 2]
        pld_max = max(plds)
    else:
        pld_mean = pld_var = hdr_mean = 0.0
        pld_median = pld_max = 0
    return DirectionStats(
        intervals_ccnt=compact_hist(intervals, config.interval_edges_us),
        ack_psh_rst_syn_fin_cnt=flags,
        hdr_distinct=len(set(hdrs)),
        hdr_ccnt=compact_hist(hdrs, config.hdr_edges),
        pld_distinct=len(set(plds)),
        pld_ccnt=compact_hist(plds, config.pld_edges),
        hdr_mean=hdr_mean,
        hdr_bin_40=sum(1 for h in hdrs if 28 <= h <= 40),
        pld_bin_128=sum(1 for x in plds if x < 128),
        pld_bin_inf=sum(1 for x in plds if x > 1024),
        pld_max=pld_max,
        pld_mean=pld_mean,
        pld_median=pld_median,
        pld_var=pld_var,
    )


@dataclass(frozen=True)
class MetadataFeatures:
    sa: str
    da: str
    pr: int
    src_port: int
    dst_port: int
    bytes_out: int
    num_pkts_out: int
    bytes_in: int
    num_pkts_in: int
    time_start: int
    time_end: int
    out: DirectionStats
    rev: DirectionStats = field(repr=False)

    @property
    def time_length(self) -> float:
        return (self.time_end - self.time_start) / 1e6

    def to_dict(self) -> dict:
        d = {
            "sa": self.sa,
            "da": self.da,
            "pr": self.pr,
            "src_port": self.src_port,
            "dst_port": self.dst_port,
            "bytes_out": self.bytes_out,
            "num_pkts_out": self.num_pkts_out,
            "bytes_in": self.bytes_in,
            "num_pkts_in": self.num_pkts_in,
            "time_start": self.time_start,
            "time_end": self.time_end,
            "time_length": self.time_length,
        }
        d.update(self.out.items())
        d.update((f"rev_{k}", v) for k, v in self.rev.items())
        return d


def compute_metadata(flow: FlowRecord, config: FeatureConfig = DEFAULT_CONFIG) -> MetadataFeatures:
    """Metadata features of a flow. ``time_start``/``time_end`` are epoch microseconds."""
    src_ip, src_port = flow.initiator
    dst_ip, dst_port = flow.responder
    return MetadataFeatures(
        sa=str(src_ip),
        da=str(dst_ip),
        pr=flow.protocol,
        src_port=src_port,
        dst_port=dst_port,
        bytes_out=sum(p.payload_len for p in flow.fwd_packets),
        num_pkts_out=len(flow.fwd_packets),
        bytes_in=sum(p.payload_len for p in flow.rev_packets),
        num_pkts_in=len(flow.rev_packets),
        time_start=flow.time_start_us,
        time_end=flow.time_end_us,
        out=direction_stats(flow.fwd_packets, config),
        rev=direction_stats(flow.rev_packets, config),
    )
