"""First HTTP/1.x request/response pair of a TCP flow."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from ..flows import FlowRecord
from ..packets import TCP

METHODS = (b"GET", b"POST", b"HEAD", b"PUT", b"DELETE", b"OPTIONS", b"TRACE", b"CONNECT", b"PATCH")
MAX_FIELD_LEN = 4096
MAX_HEADER_BLOCK = 1 << 16

_REQUEST_LINE = re.compile(rb"^(" + b"|".join(METHODS) + rb") (\S+) HTTP/1\.[0-9]\r?$")
_STATUS_LINE = re.compile(rb"^HTTP/1\.[0-9] ([0-9]{3})(?: .*)?\r?$")


@dataclass
class HttpFeatures:
    http_method: str = ""
    http_uri: str = ""
    http_host: str = ""
    http_code: int = 0
    http_content_type: str = ""
    http_content_len: int = -1
    truncated: bool = field(default=False, compare=False)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        del d["truncated"]
        return d


def _clamp(raw: bytes) -> tuple[str, bool]:
    text = raw.decode("latin-1")
    if len(text) > MAX_FIELD_LEN:
        return text[:MAX_FIELD_LEN], True
    return text, False


def _header_block(chunks: list[bytes]) -> list[bytes]:
    """Lines of a header block, stopping at the blank line or end of data."""
    data = b""
    for chunk in chunks:
        data += chunk
        if b"\r\n\r\n" in data or len(data) >= MAX_HEADER_BLOCK:
            break
    head = data.split(b"\r\n\r\n", 1)[0][:MAX_HEADER_BLOCK]
    return head.split(b"\r\n")


def _headers(lines: list[bytes]) -> dict[str, bytes]:
    out: dict[str, bytes] = {}
    for line in lines:
        name, sep, value = line.partition(b":")
        if not sep:
            continue
        key = name.strip().lower().decode("latin-1")
        out.setdefault(key, value.strip())
    return out


def parse_http(flow: FlowRecord) -> HttpFeatures | None:
    """HTTP features from the first request in the initiator direction.

    The response is the first responder packet at or after the request
    that opens with an HTTP/1.x status line.
    """
    if flow.protocol != TCP:
        return None
    fwd = [p for p in flow.fwd_packets if p.payload]
    start = None
    for i, pkt in enumerate(fwd):
        if pkt.payload.startswith(METHODS):
            first = pkt.payload.split(b"\n", 1)[0]
            if _REQUEST_LINE.match(first):
                start = i
                break
    if start is None:
        return None

    lines = _header_block([p.payload for p in fwd[start:]])
    method, uri, _ = lines[0].split(b" ", 2)
    headers = _headers(lines[1:])
    feats = HttpFeatures(http_method=method.decode("latin-1"))
    feats.http_uri, cut_uri = _clamp(uri)
    feats.http_host, cut_host = _clamp(headers.get("host", b""))
    feats.truncated = cut_uri or cut_host

    req_ts = fwd[start].timestamp_us
    rev = [p for p in flow.rev_packets if p.payload and p.timestamp_us >= req_ts]
    for i, pkt in enumerate(rev):
        m = _STATUS_LINE.match(pkt.payload.split(b"\n", 1)[0])
        if not m:
            continue
        code = int(m.group(1))
        feats.http_code = code if 100 <= code <= 599 else 0
        resp = _headers(_header_block([p.payload for p in rev[i:]])[1:])
        feats.http_content_type, cut = _clamp(resp.get("content-type", b""))
        feats.truncated |= cut
        length = resp.get("content-length", b"").strip()
        feats.http_content_len = int(length) if length.isdigit() else -1
        break
    return feats
