"""Flow feature extraction, labeled dataset building, baselines and scoring."""

from .capture import CaptureError, CaptureReader, read_capture, write_pcap
from .dataset import BuildConfig, build_dataset, load_manifest, split_dataset, write_dataset
from .extract import extract_capture
from .features import FeatureConfig, extract_features
from .flows import FlowAssembler, FlowRecord, assemble
from .packets import PacketRecord, decode_packet

__version__ = "0.1.0"

__all__ = [
    "BuildConfig",
    "CaptureError",
    "CaptureReader",
    "FeatureConfig",
    "FlowAssembler",
    "FlowRecord",
    "PacketRecord",
    "assemble",
    "build_dataset",
    "decode_packet",
    "extract_capture",
    "extract_features",
    "load_manifest",
    "read_capture",
    "split_dataset",
    "write_dataset",
    "write_pcap",
]
