"""Reading and writing pcap / pcapng containers."""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

log = logging.getLogger(__name__)

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
# Platform aliases for raw IP seen in the wild.
LINKTYPE_RAW_ALIASES = {12, 14, 101, 228, 229}

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
PCAPNG_SHB = 0x0A0D0D0A
PCAPNG_BOM = 0x1A2B3C4D

# Records larger than this are treated as corruption.
MAX_RECORD = 1 << 26

Frame = tuple[bytes, int, int]


class CaptureError(Exception):
    """The capture file cannot be opened or is not a pcap/pcapng container."""


class CaptureReader:
    """Iterate ``(frame, link_type, timestamp_us)`` over a capture file.

    A corrupt or truncated trailing record ends the stream; ``frames_read``
    and ``truncated`` describe what happened.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.frames_read = 0
        self.truncated = False
        try:
            with open(self.path, "rb") as fh:
                head = fh.read(4)
        except OSError as exc:
            raise CaptureError(f"cannot read capture {self.path}: {exc}") from exc
        if len(head) < 4:
            raise CaptureError(f"{self.path}: file too short for a capture header")
        le = struct.unpack("<I", head)[0]
        be = struct.unpack(">I", head)[0]
        if le == PCAPNG_SHB:
            self._kind = "pcapng"
        elif PCAP_MAGIC_US in (le, be) or PCAP_MAGIC_NS in (le, be):
            self._kind = "pcap"
        else:
            raise CaptureError(f"{self.path}: unknown capture magic 0x{be:08x}")

    def __iter__(self) -> Iterator[Frame]:
        with open(self.path, "rb") as fh:
            if self._kind == "pcap":
                yield from self._iter_pcap(fh)
            else:
                yield from self._iter_pcapng(fh)
        if self.truncated:
            log.warning(
                "capture %s ended with a corrupt record after %d frames",
                self.path, self.frames_read,
            )

    def _iter_pcap(self, fh: BinaryIO) -> Iterator[Frame]:
        header = fh.read(24)
        if len(header) < 24:
            raise CaptureError(f"{self.path}: truncated pcap global header")
        magic = struct.unpack("<I", header[:4])[0]
        if magic in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
            endian = "<"
        else:
            endian = ">"
            magic = struct.unpack(">I", header[:4])[0]
        nanos = magic == PCAP_MAGIC_NS
        link_type = struct.unpack(endian + "I", header[20:24])[0] & 0xFFFF
        rec = struct.Struct(endian + "IIII")
        while True:
            raw = fh.read(16)
            if not raw:
                return
            if len(raw) < 16:
                self.truncated = True
                return
            sec, frac, incl, _orig = rec.unpack(raw)
            if incl > MAX_RECORD:
                self.truncated = True
                return
            data = fh.read(incl)
            if len(data) < incl:
                self.truncated = True
                return
            ts = sec * 1_000_000 + (frac // 1000 if nanos else frac)
            self.frames_read += 1
            yield data, link_type, ts

    def _iter_pcapng(self, fh: BinaryIO) -> Iterator[Frame]:
        endian = "<"
        # (link_type, ticks_to_us callable, offset_us) per interface in section
        interfaces: list[tuple[int, int, int, int]] = []
        while True:
            head = fh.read(8)
            if not head:
                return
            if len(head) < 8:
                self.truncated = True
                return
            btype_le = struct.unpack("<I", head[:4])[0]
            if btype_le == PCAPNG_SHB:
                bom = fh.read(4)
                if len(bom) < 4:
                    self.truncated = True
                    return
                if struct.unpack("<I", bom)[0] == PCAPNG_BOM:
                    endian = "<"
                elif struct.unpack(">I", bom)[0] == PCAPNG_BOM:
                    endian = ">"
                else:
                    self.truncated = True
                    return
                blen = struct.unpack(endian + "I", head[4:8])[0]
                if blen < 28 or blen % 4 or blen > MAX_RECORD:
                    self.truncated = True
                    return
                rest = fh.read(blen - 12)
                if len(rest) < blen - 12:
                    self.truncated = True
                    return
                interfaces = []
                continue
            btype, blen = struct.unpack(endian + "II", head)
            if blen < 12 or blen % 4 or blen > MAX_RECORD:
                self.truncated = True
                return
            body = fh.read(blen - 8)
            if len(body) < blen - 8:
                self.truncated = True
                return
            body = body[:-4]
            if btype == 1:
                interfaces.append(_parse_idb(body, endian))
            elif btype in (6, 2):
                if btype == 6:
                    if len(body) < 20:
                        self.truncated = True
                        return
                    iface, ts_hi, ts_lo, caplen, _ = struct.unpack(endian + "IIIII", body[:20])
                else:
                    if len(body) < 20:
                        self.truncated = True
                        return
                    iface, _drops, ts_hi, ts_lo, caplen, _ = struct.unpack(
                        endian + "HHIIII", body[:20]
                    )
                if iface >= len(interfaces) or 20 + caplen > len(body):
                    self.truncated = True
                    return
                link_type, base, exp, offset_us = interfaces[iface]
                ticks = (ts_hi << 32) | ts_lo
                self.frames_read += 1
                yield body[20 : 20 + caplen], link_type, _ticks_to_us(ticks, base, exp) + offset_us
            elif btype == 3:
                if len(body) < 4 or not interfaces:
                    self.truncated = True
                    return
                orig = struct.unpack(endian + "I", body[:4])[0]
                snap = len(body) - 4
                self.frames_read += 1
                yield body[4 : 4 + min(orig, snap)], interfaces[0][0], 0
            # other block types carry no packets


def _parse_idb(body: bytes, endian: str) -> tuple[int, int, int, int]:
    link_type = struct.unpack(endian + "H", body[:2])[0]
    base, exp, offset_us = 10, 6, 0
    pos = 8
    while pos + 4 <= len(body):
        code, length = struct.unpack(endian + "HH", body[pos : pos + 4])
        value = body[pos + 4 : pos + 4 + length]
        if code == 0:
            break
        if code == 9 and length >= 1:
            raw = value[0]
            base, exp = (2, raw & 0x7F) if raw & 0x80 else (10, raw)
        elif code == 14 and length >= 8:
            offset_us = struct.unpack(endian + "q", value[:8])[0] * 1_000_000
        pos += 4 + length + (-length % 4)
    return link_type, base, exp, offset_us


def _ticks_to_us(ticks: int, base: int, exp: int) -> int:
    if base == 10:
        if exp >= 6:
            return ticks // 10 ** (exp - 6)
        return ticks * 10 ** (6 - exp)
    return (ticks * 1_000_000) >> exp


def read_capture(path: str | Path) -> CaptureReader:
    """Open a pcap or pcapng file and return an iterable over its frames."""
    return CaptureReader(path)


def write_pcap(path: str | Path, frames: Iterable[Frame], link_type: int | None = None) -> int:
    """Write frames as a classic microsecond pcap. Returns the frame count.

    All frames must share one link type; it is taken from the first frame
    unless given explicitly.
    """
    frames = iter(frames)
    first = next(frames, None)
    if link_type is None:
        link_type = first[1] if first is not None else LINKTYPE_ETHERNET
    count = 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", PCAP_MAGIC_US, 2, 4, 0, 0, 262144, link_type))
        if first is None:
            return 0
        for data, lt, ts in _chain(first, frames):
            if lt != link_type:
                raise ValueError(f"mixed link types {link_type} and {lt} in one pcap")
            fh.write(struct.pack("<IIII", ts // 1_000_000, ts % 1_000_000, len(data), len(data)))
            fh.write(data)
            count += 1
    return count


def _chain(first: Frame, rest: Iterator[Frame]) -> Iterator[Frame]:
    yield first
    yield from rest
