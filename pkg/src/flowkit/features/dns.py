"""DNS question and answer metadata for UDP port-53 flows."""

from __future__ import annotations

import ipaddress
import logging
import struct
from dataclasses import dataclass, field

from ..flows import FlowRecord
from ..packets import UDP

log = logging.getLogger(__name__)

DNS_PORT = 53
TYPE_A = 1
TYPE_AAAA = 28
MAX_NAME_LEN = 4096
MAX_POINTER_HOPS = 64


class DnsParseError(ValueError):
    pass


@dataclass
class DnsFeatures:
    dns_query_cnt: int = 0
    dns_query_name_len: list[int] = field(default_factory=list)
    dns_query_name: list[str] = field(default_factory=list)
    dns_query_type: list[int] = field(default_factory=list)
    dns_query_class: list[int] = field(default_factory=list)
    dns_answer_cnt: int = 0
    dns_answer_ttl: list[int] = field(default_factory=list)
    dns_answer_ip: list[str] = field(default_factory=list)
    truncated: bool = field(default=False, compare=False)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        del d["truncated"]
        return d


@dataclass
class DnsMessage:
    is_response: bool
    questions: list[tuple[str, int, int]]
    answers: list[tuple[str, int, int, int, bytes]]
    truncated_name: bool = False


def read_name(msg: bytes, pos: int) -> tuple[str, int, bool]:
    """Decode a possibly-compressed name at ``pos``.

    Returns ``(name, next_pos, truncated)``. A pointer loop or an over-long
    name truncates the name instead of failing.
    """
    labels: list[bytes] = []
    size = 0
    end = None
    hops = 0
    visited = set()
    truncated = False
    while True:
        if pos >= len(msg):
            raise DnsParseError("name runs past message end")
        length = msg[pos]
        if length & 0xC0 == 0xC0:
            if pos + 1 >= len(msg):
                raise DnsParseError("truncated pointer")
            target = ((length & 0x3F) << 8) | msg[pos + 1]
            if end is None:
                end = pos + 2
            hops += 1
            if target in visited or hops > MAX_POINTER_HOPS:
                truncated = True
                break
            visited.add(target)
            pos = target
            continue
        if length & 0xC0:
            raise DnsParseError("reserved label type")
        pos += 1
        if length == 0:
            break
        if pos + length > len(msg):
            raise DnsParseError("label runs past message end")
        if size + length + 1 > MAX_NAME_LEN:
            truncated = True
        else:
            labels.append(msg[pos : pos + length])
            size += length + 1
        pos += length
    name = b".".join(labels).decode("latin-1").lower()[:MAX_NAME_LEN]
    return name, (end if end is not None else pos), truncated


def parse_message(msg: bytes) -> DnsMessage:
    """Parse one DNS message, raising :class:`DnsParseError` on anything malformed."""
    if len(msg) < 12:
        raise DnsParseError("short header")
    _, flags, qd, an, ns, ar = struct.unpack_from("!HHHHHH", msg, 0)
    if qd == 0 or (flags >> 11) & 0xF > 6:
        raise DnsParseError("implausible header")
    pos = 12
    truncated = False
    questions = []
    for _ in range(qd):
        name, pos, cut = read_name(msg, pos)
        truncated |= cut
        if pos + 4 > len(msg):
            raise DnsParseError("truncated question")
        qtype, qclass = struct.unpack_from("!HH", msg, pos)
        pos += 4
        questions.append((name, qtype, qclass))
    records = []
    for _ in range(an + ns + ar):
        name, pos, cut = read_name(msg, pos)
        truncated |= cut
        if pos + 10 > len(msg):
            raise DnsParseError("truncated resource record")
        rtype, rclass, ttl, rdlen = struct.unpack_from("!HHIH", msg, pos)
        pos += 10
        if pos + rdlen > len(msg):
            raise DnsParseError("truncated rdata")
        records.append((name, rtype, rclass, ttl, msg[pos : pos + rdlen]))
        pos += rdlen
    return DnsMessage(
        is_response=bool(flags & 0x8000),
        questions=questions,
        answers=records[:an],
        truncated_name=truncated,
    )


def parse_dns(flow: FlowRecord) -> DnsFeatures | None:
    """DNS features of a UDP flow with port 53 on either side.

    Questions are gathered from request messages and A/AAAA answers from
    response messages, in packet order. Returns ``None`` unless at least
    one payload parses as DNS.
    """
    if flow.protocol != UDP or DNS_PORT not in (flow.key.port_a, flow.key.port_b):
        return None
    feats = DnsFeatures()
    parsed_any = False
    for pkt in flow.packets:
        try:
            msg = parse_message(pkt.payload)
        except DnsParseError:
            continue
        parsed_any = True
        feats.truncated |= msg.truncated_name
        if not msg.is_response:
            for name, qtype, qclass in msg.questions:
                feats.dns_query_name.append(name)
                feats.dns_query_name_len.append(len(name))
                feats.dns_query_type.append(qtype)
                feats.dns_query_class.append(qclass)
            continue
        for _, rtype, _, ttl, rdata in msg.answers:
            if rtype == TYPE_A and len(rdata) == 4:
                ip = str(ipaddress.IPv4Address(rdata))
            elif rtype == TYPE_AAAA and len(rdata) == 16:
                ip = str(ipaddress.IPv6Address(rdata))
            else:
                continue
            feats.dns_answer_ttl.append(ttl)
            feats.dns_answer_ip.append(ip)
    if not parsed_any:
        return None
    if feats.truncated:
        log.debug("truncated DNS name in flow %s", flow.key)
    feats.dns_query_cnt = len(feats.dns_query_name)
    feats.dns_answer_cnt = len(feats.dns_answer_ttl)
    return feats
