"""TLS record and handshake metadata."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

from ..flows import FlowRecord
from ..packets import TCP, PacketRecord

CHANGE_CIPHER_SPEC = 20
ALERT = 21
HANDSHAKE = 22
APPLICATION_DATA = 23
_CONTENT_TYPES = {CHANGE_CIPHER_SPEC, ALERT, HANDSHAKE, APPLICATION_DATA}

CLIENT_HELLO = 1
SERVER_HELLO = 2
SERVER_KEY_EXCHANGE = 12
CLIENT_KEY_EXCHANGE = 16

MAX_RECORD_LEN = (1 << 14) + 2048
# Plaintext handshake bytes kept per direction.
MAX_HANDSHAKE_BUFFER = 1 << 16


def hex_code(value: int) -> str:
    return f"0x{value:04x}"


@dataclass
class TlsFeatures:
    tls_cnt: int = 0
    tls_len: list[int] = field(default_factory=list)
    tls_cs_cnt: int = 0
    tls_cs: list[str] = field(default_factory=list)
    tls_ext_cnt: int = 0
    tls_ext_types: list[str] = field(default_factory=list)
    tls_key_exchange_len: int = 0
    tls_svr_cnt: int = 0
    tls_svr_len: list[int] = field(default_factory=list)
    tls_svr_cs_cnt: int = 0
    tls_svr_cs: list[str] = field(default_factory=list)
    tls_svr_ext_cnt: int = 0
    tls_svr_ext_types: list[str] = field(default_factory=list)
    tls_svr_key_exchange_len: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def is_record_header(data: bytes, pos: int = 0) -> bool:
    """True when ``data[pos:]`` starts with a plausible TLS record header."""
    if len(data) < pos + 5:
        return False
    ctype, major, minor, length = struct.unpack_from("!BBBH", data, pos)
    return ctype in _CONTENT_TYPES and major == 3 and minor <= 4 and length <= MAX_RECORD_LEN


@dataclass
class _Direction:
    records: list[int] = field(default_factory=list)
    handshake: bytearray = field(default_factory=bytearray)
    pending: int = 0
    pending_is_handshake: bool = False
    encrypted: bool = False
    seen_record: bool = False

    def _keep(self, chunk: bytes) -> None:
        if not self.encrypted:
            room = MAX_HANDSHAKE_BUFFER - len(self.handshake)
            if room > 0:
                self.handshake += chunk[:room]

    def feed(self, payload: bytes) -> None:
        pos = 0
        if self.pending:
            take = min(self.pending, len(payload))
            if self.pending_is_handshake:
                self._keep(payload[:take])
            self.pending -= take
            pos = take
        while pos < len(payload):
            if not is_record_header(payload, pos):
                # lost sync; resume at the next packet boundary
                self.pending = 0
                return
            self.seen_record = True
            ctype, _, _, length = struct.unpack_from("!BBBH", payload, pos)
            self.records.append(length)
            body = payload[pos + 5 : pos + 5 + length]
            is_hs = ctype == HANDSHAKE and not self.encrypted
            if is_hs:
                self._keep(body)
            if ctype == CHANGE_CIPHER_SPEC:
                self.encrypted = True
            pos += 5 + length
            if pos > len(payload):
                self.pending = pos - len(payload)
                self.pending_is_handshake = is_hs
                return


def _handshake_messages(buf: bytes) -> list[tuple[int, int, bytes]]:
    """Split a handshake byte stream into ``(type, declared_length, body)``.

    The last body may be shorter than its declared length.
    """
    out = []
    pos = 0
    while pos + 4 <= len(buf):
        mtype = buf[pos]
        length = int.from_bytes(buf[pos + 1 : pos + 4], "big")
        out.append((mtype, length, bytes(buf[pos + 4 : pos + 4 + length])))
        pos += 4 + length
    return out


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("!H", self.take(2))[0]

    def vector(self, width: int) -> bytes:
        n = self.u8() if width == 1 else self.u16()
        return self.take(n)

    def at_end(self) -> bool:
        return self.pos >= len(self.data)


def _parse_extensions(r: _Reader, out: list[str]) -> None:
    if r.at_end():
        return
    total = r.u16()
    end = min(r.pos + total, len(r.data))
    while r.pos + 4 <= end:
        etype = r.u16()
        elen = r.u16()
        out.append(hex_code(etype))
        r.pos += elen
        if r.pos > end:
            break


def parse_client_hello(body: bytes) -> tuple[list[str], list[str]]:
    """Offered ciphersuites and extension types, in wire order.

    Parsing stops at the first malformation and returns what was read.
    """
    suites: list[str] = []
    exts: list[str] = []
    r = _Reader(body)
    try:
        r.take(2 + 32)
        r.vector(1)
        raw = r.vector(2)
        suites.extend(hex_code(v) for (v,) in struct.iter_unpack("!H", raw[: len(raw) & ~1]))
        r.vector(1)
        _parse_extensions(r, exts)
    except ValueError:
        pass
    return suites, exts


def parse_server_hello(body: bytes) -> tuple[list[str], list[str]]:
    """Selected ciphersuite (as a one-element list) and extension types."""
    suites: list[str] = []
    exts: list[str] = []
    r = _Reader(body)
    try:
        r.take(2 + 32)
        r.vector(1)
        suites.append(hex_code(r.u16()))
        r.u8()
        _parse_extensions(r, exts)
    except ValueError:
        pass
    return suites, exts


def _tcp_payloads(packets: Sequence[PacketRecord]) -> list[bytes]:
    return [p.payload for p in packets if p.protocol == TCP and p.payload]


def parse_tls(flow: FlowRecord) -> TlsFeatures | None:
    """TLS features of a flow, or ``None`` when no packet starts a TLS record.

    Detection is by content, not port. Client fields come from the
    initiator's first ClientHello, server fields from the responder's
    first ServerHello.
    """
    if flow.protocol != TCP:
        return None
    fwd, rev = _Direction(), _Direction()
    for payload in _tcp_payloads(flow.fwd_packets):
        fwd.feed(payload)
    for payload in _tcp_payloads(flow.rev_packets):
        rev.feed(payload)
    if not (fwd.seen_record or rev.seen_record):
        return None

    feats = TlsFeatures(
        tls_cnt=len(fwd.records),
        tls_len=list(fwd.records),
        tls_svr_cnt=len(rev.records),
        tls_svr_len=list(rev.records),
    )
    hello = False
    for mtype, length, body in _handshake_messages(fwd.handshake):
        if mtype == CLIENT_HELLO and not hello:
            hello = True
            feats.tls_cs, feats.tls_ext_types = parse_client_hello(body)
        elif mtype == CLIENT_KEY_EXCHANGE and not feats.tls_key_exchange_len:
            feats.tls_key_exchange_len = length
    hello = False
    for mtype, length, body in _handshake_messages(rev.handshake):
        if mtype == SERVER_HELLO and not hello:
            hello = True
            feats.tls_svr_cs, feats.tls_svr_ext_types = parse_server_hello(body)
        elif mtype == SERVER_KEY_EXCHANGE and not feats.tls_svr_key_exchange_len:
            feats.tls_svr_key_exchange_len = length
    feats.tls_cs_cnt = len(feats.tls_cs)
    feats.tls_ext_cnt = len(feats.tls_ext_types)
    feats.tls_svr_cs_cnt = len(feats.tls_svr_cs)
    feats.tls_svr_ext_cnt = len(feats.tls_svr_ext_types)
    return feats
