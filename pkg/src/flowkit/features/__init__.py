"""Per-flow feature extraction."""

from __future__ import annotations

from dataclasses import dataclass

from ..flows import FlowRecord
from .common import index_mapping, top_common
from .dns import DnsFeatures, parse_dns
from .http import HttpFeatures, parse_http
from .metadata import (
    DEFAULT_CONFIG,
    FeatureConfig,
    MetadataFeatures,
    compact_hist,
    compute_metadata,
)
from .tls import TlsFeatures, parse_tls

__all__ = [
    "DEFAULT_CONFIG",
    "DnsFeatures",
    "FeatureConfig",
    "FlowFeatures",
    "HttpFeatures",
    "MetadataFeatures",
    "TlsFeatures",
    "compact_hist",
    "compute_metadata",
    "extract_features",
    "index_mapping",
    "parse_dns",
    "parse_http",
    "parse_tls",
    "top_common",
]


@dataclass(frozen=True)
class FlowFeatures:
    metadata: MetadataFeatures
    tls: TlsFeatures | None = None
    dns: DnsFeatures | None = None
    http: HttpFeatures | None = None

    def to_dict(self) -> dict:
        """Flat feature mapping; absent protocol families contribute no keys."""
        d = self.metadata.to_dict()
        for family in (self.tls, self.dns, self.http):
            if family is not None:
                d.update(family.to_dict())
        return d


def extract_features(flow: FlowRecord, config: FeatureConfig = DEFAULT_CONFIG) -> FlowFeatures:
    return FlowFeatures(
        metadata=compute_metadata(flow, config),
        tls=parse_tls(flow),
        dns=parse_dns(flow),
        http=parse_http(flow),
    )
