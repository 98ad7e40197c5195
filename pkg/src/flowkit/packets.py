"""Decode link-layer frames into normalized packet records."""

from __future__ import annotations

import enum
import ipaddress
import struct
from dataclasses import dataclass
from typing import NamedTuple, Union

from .capture import LINKTYPE_ETHERNET, LINKTYPE_RAW_ALIASES

IPAddress = Union[ipaddress.IPv4Address, ipaddress.IPv6Address]

TCP = 6
UDP = 17

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD

# IPv6 extension headers walked before the transport header.
_IPV6_EXT = {0, 43, 60}
_IPV6_FRAG = 44
_IPV6_AH = 51


class TcpFlags(NamedTuple):
    ack: bool = False
    psh: bool = False
    rst: bool = False
    syn: bool = False
    fin: bool = False

    @classmethod
    def from_byte(cls, value: int) -> "TcpFlags":
        return cls(
            ack=bool(value & 0x10),
            psh=bool(value & 0x08),
            rst=bool(value & 0x04),
            syn=bool(value & 0x02),
            fin=bool(value & 0x01),
        )


NO_FLAGS = TcpFlags()


@dataclass(frozen=True, slots=True)
class PacketRecord:
    """One decoded TCP or UDP packet.

    ``header_len`` is the network plus transport header size and
    ``payload_len`` the transport payload size implied by the IP length
    fields. ``payload`` holds the captured payload bytes, which may be
    shorter than ``payload_len`` when the snap length cut the frame.
    """

    timestamp_us: int
    src_ip: IPAddress
    dst_ip: IPAddress
    protocol: int
    src_port: int
    dst_port: int
    tcp_flags: TcpFlags
    header_len: int
    payload_len: int
    payload: bytes = b""


class SkipReason(str, enum.Enum):
    NON_IP = "non-ip"
    NON_TCP_UDP = "non-tcp-udp"
    MALFORMED = "malformed"
    FRAGMENT = "fragment-non-first"


@dataclass(frozen=True, slots=True)
class Skip:
    reason: SkipReason


SKIP_NON_IP = Skip(SkipReason.NON_IP)
SKIP_NON_TCP_UDP = Skip(SkipReason.NON_TCP_UDP)
SKIP_MALFORMED = Skip(SkipReason.MALFORMED)
SKIP_FRAGMENT = Skip(SkipReason.FRAGMENT)


def decode_packet(frame: bytes, link_type: int, timestamp_us: int) -> PacketRecord | Skip:
    """Decode one captured frame.

    Returns a :class:`PacketRecord` for IPv4/IPv6 frames carrying TCP or
    UDP and a :class:`Skip` naming the reason for anything else. Never
    raises on bad input.
    """
    if link_type == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            return SKIP_MALFORMED
        ethertype = struct.unpack_from("!H", frame, 12)[0]
        if ethertype == ETH_IPV4:
            return _decode_ipv4(frame, 14, timestamp_us)
        if ethertype == ETH_IPV6:
            return _decode_ipv6(frame, 14, timestamp_us)
        # ARP, VLAN tags, and everything else
        return SKIP_NON_IP
    if link_type in LINKTYPE_RAW_ALIASES:
        if not frame:
            return SKIP_MALFORMED
        version = frame[0] >> 4
        if version == 4:
            return _decode_ipv4(frame, 0, timestamp_us)
        if version == 6:
            return _decode_ipv6(frame, 0, timestamp_us)
        return SKIP_NON_IP
    return SKIP_NON_IP


def _decode_ipv4(frame: bytes, off: int, ts: int) -> PacketRecord | Skip:
    if len(frame) < off + 20:
        return SKIP_MALFORMED
    vihl = frame[off]
    if vihl >> 4 != 4:
        return SKIP_MALFORMED
    ihl = (vihl & 0x0F) * 4
    total_len, frag, proto = struct.unpack_from("!H2xHxB", frame, off + 2)
    if ihl < 20 or total_len < ihl or len(frame) < off + ihl:
        return SKIP_MALFORMED
    if frag & 0x1FFF:
        return SKIP_FRAGMENT
    if proto not in (TCP, UDP):
        return SKIP_NON_TCP_UDP
    src = ipaddress.IPv4Address(frame[off + 12 : off + 16])
    dst = ipaddress.IPv4Address(frame[off + 16 : off + 20])
    return _decode_transport(frame, off + ihl, ihl, total_len - ihl, proto, src, dst, ts)


def _decode_ipv6(frame: bytes, off: int, ts: int) -> PacketRecord | Skip:
    if len(frame) < off + 40:
        return SKIP_MALFORMED
    if frame[off] >> 4 != 6:
        return SKIP_MALFORMED
    payload_len, nxt = struct.unpack_from("!HB", frame, off + 4)
    src = ipaddress.IPv6Address(frame[off + 8 : off + 24])
    dst = ipaddress.IPv6Address(frame[off + 24 : off + 40])
    pos = off + 40
    remaining = payload_len
    while nxt not in (TCP, UDP):
        if nxt in _IPV6_EXT or nxt == _IPV6_AH:
            if len(frame) < pos + 2:
                return SKIP_MALFORMED
            if nxt == _IPV6_AH:
                ext_len = (frame[pos + 1] + 2) * 4
            else:
                ext_len = (frame[pos + 1] + 1) * 8
        elif nxt == _IPV6_FRAG:
            if len(frame) < pos + 8:
                return SKIP_MALFORMED
            ext_len = 8
            if struct.unpack_from("!H", frame, pos + 2)[0] >> 3:
                return SKIP_FRAGMENT
        else:
            return SKIP_NON_TCP_UDP
        if ext_len > remaining or len(frame) < pos + ext_len:
            return SKIP_MALFORMED
        nxt = frame[pos]
        pos += ext_len
        remaining -= ext_len
    net_hdr = pos - off
    return _decode_transport(frame, pos, net_hdr, remaining, nxt, src, dst, ts)


def _decode_transport(
    frame: bytes,
    pos: int,
    net_hdr: int,
    ip_payload: int,
    proto: int,
    src: IPAddress,
    dst: IPAddress,
    ts: int,
) -> PacketRecord | Skip:
    if proto == TCP:
        if len(frame) < pos + 20:
            return SKIP_MALFORMED
        sport, dport, doff, flags = struct.unpack_from("!HH8xBB", frame, pos)
        thl = (doff >> 4) * 4
        if thl < 20 or thl > ip_payload or len(frame) < pos + thl:
            return SKIP_MALFORMED
        tcp_flags = TcpFlags.from_byte(flags)
    else:
        if len(frame) < pos + 8 or ip_payload < 8:
            return SKIP_MALFORMED
        sport, dport = struct.unpack_from("!HH", frame, pos)
        thl = 8
        tcp_flags = NO_FLAGS
    payload_len = ip_payload - thl
    start = pos + thl
    payload = bytes(frame[start : start + payload_len])
    return PacketRecord(
        timestamp_us=ts,
        src_ip=src,
        dst_ip=dst,
        protocol=proto,
        src_port=sport,
        dst_port=dport,
        tcp_flags=tcp_flags,
        header_len=net_hdr + thl,
        payload_len=payload_len,
        payload=payload,
    )
