"""Test helpers that build frames, conversations and capture files with dpkt."""

from __future__ import annotations

import ipaddress
import socket
import struct
from dataclasses import dataclass, field
from pathlib import Path

import dpkt

T0 = 1_600_000_000_000_000  # µs

FLAG_BITS = {"F": dpkt.tcp.TH_FIN, "S": dpkt.tcp.TH_SYN, "R": dpkt.tcp.TH_RST,
             "P": dpkt.tcp.TH_PUSH, "A": dpkt.tcp.TH_ACK}


def _addr(ip: str) -> bytes:
    return ipaddress.ip_address(ip).packed


def _flags(spec: str) -> int:
    value = 0
    for ch in spec:
        value |= FLAG_BITS[ch]
    return value


def transport(proto: str, sport: int, dport: int, flags: str = "", payload: bytes = b"", tcp_opts: bytes = b""):
    if proto == "tcp":
        seg = dpkt.tcp.TCP(sport=sport, dport=dport, flags=_flags(flags), data=payload, win=65535)
        if tcp_opts:
            seg.opts = tcp_opts
            seg.off = (20 + len(tcp_opts)) // 4
        return seg
    return dpkt.udp.UDP(sport=sport, dport=dport, data=payload, ulen=8 + len(payload))


def ip_packet(src: str, dst: str, seg, proto: str) -> dpkt.Packet:
    p = dpkt.ip.IP_PROTO_TCP if proto == "tcp" else dpkt.ip.IP_PROTO_UDP
    if ipaddress.ip_address(src).version == 6:
        pkt = dpkt.ip6.IP6(src=_addr(src), dst=_addr(dst), nxt=p, hlim=64, data=seg)
        pkt.plen = len(bytes(seg))
        return pkt
    return dpkt.ip.IP(src=_addr(src), dst=_addr(dst), p=p, ttl=64, data=seg)


def ethernet(payload, ethertype: int | None = None) -> bytes:
    if ethertype is None:
        ethertype = dpkt.ethernet.ETH_TYPE_IP6 if isinstance(payload, dpkt.ip6.IP6) else dpkt.ethernet.ETH_TYPE_IP
    eth = dpkt.ethernet.Ethernet(src=b"\x02" * 6, dst=b"\x04" * 6, type=ethertype)
    eth.data = payload
    return bytes(eth)


def frame(src, dst, sport, dport, proto="tcp", flags="", payload=b"", tcp_opts=b"") -> bytes:
    seg = transport(proto, sport, dport, flags, payload, tcp_opts)
    return ethernet(ip_packet(src, dst, seg, proto))


def arp_frame() -> bytes:
    arp = dpkt.arp.ARP(sha=b"\x02" * 6, spa=socket.inet_aton("10.0.0.1"), tpa=socket.inet_aton("10.0.0.2"))
    return ethernet(arp, dpkt.ethernet.ETH_TYPE_ARP)


@dataclass
class Conversation:
    """A two-party exchange; ``send`` appends one frame per call."""

    client: tuple[str, int] = ("10.0.0.1", 40000)
    server: tuple[str, int] = ("10.0.0.2", 80)
    proto: str = "tcp"
    t: int = T0
    frames: list[tuple[bytes, int]] = field(default_factory=list)

    def send(self, dt_us: int, side: str, flags: str = "", payload: bytes = b"", tcp_opts: bytes = b""):
        self.t += dt_us
        a, b = (self.client, self.server) if side == "c" else (self.server, self.client)
        self.frames.append((frame(a[0], b[0], a[1], b[1], self.proto, flags, payload, tcp_opts), self.t))
        return self

    def handshake(self, dt_us: int = 1000):
        return self.send(0, "c", "S").send(dt_us, "s", "SA").send(dt_us, "c", "A")

    def close(self, dt_us: int = 1000):
        return self.send(dt_us, "c", "FA").send(dt_us, "s", "FA").send(dt_us, "c", "A")


def write_pcap(path: str | Path, frames, link_type: int = 1, nano: bool = False, big_endian: bool = False) -> Path:
    """Classic pcap writer, kept separate from the package's own writer."""
    e = ">" if big_endian else "<"
    magic = 0xA1B23C4D if nano else 0xA1B2C3D4
    with open(path, "wb") as fh:
        fh.write(struct.pack(e + "IHHiIII", magic, 2, 4, 0, 0, 65535, link_type))
        for data, ts_us in frames:
            sub = (ts_us % 1_000_000) * (1000 if nano else 1)
            fh.write(struct.pack(e + "IIII", ts_us // 1_000_000, sub, len(data), len(data)))
            fh.write(data)
    return Path(path)


def write_pcapng(path: str | Path, frames, link_type: int = 1) -> Path:
    with open(path, "wb") as fh:
        w = dpkt.pcapng.Writer(fh, linktype=link_type)
        for data, ts_us in frames:
            w.writepkt(data, ts=ts_us / 1e6)
    return Path(path)


# ---------------------------------------------------------------- TLS bytes


def tls_record(ctype: int, body: bytes, version: int = 0x0303) -> bytes:
    return struct.pack("!BHH", ctype, version, len(body)) + body


def handshake(mtype: int, body: bytes) -> bytes:
    return struct.pack("!B", mtype) + len(body).to_bytes(3, "big") + body


def _extensions(exts) -> bytes:
    if exts is None:
        return b""
    blob = b"".join(struct.pack("!HH", t, len(d)) + d for t, d in exts)
    return struct.pack("!H", len(blob)) + blob


def client_hello(ciphers, exts=None, session_id: bytes = b"") -> bytes:
    body = struct.pack("!H", 0x0303) + b"\x11" * 32
    body += struct.pack("!B", len(session_id)) + session_id
    body += struct.pack("!H", 2 * len(ciphers)) + b"".join(struct.pack("!H", c) for c in ciphers)
    body += b"\x01\x00"
    body += _extensions(exts)
    return handshake(1, body)


def server_hello(cipher: int, exts=None) -> bytes:
    body = struct.pack("!H", 0x0303) + b"\x22" * 32 + b"\x00"
    body += struct.pack("!HB", cipher, 0)
    body += _extensions(exts)
    return handshake(2, body)


# ---------------------------------------------------------------- DNS bytes


def dns_query(name: str, qtype: int = dpkt.dns.DNS_A, qid: int = 0x1234) -> bytes:
    msg = dpkt.dns.DNS(id=qid, op=dpkt.dns.DNS_RD)
    msg.qd = [dpkt.dns.DNS.Q(name=name, type=qtype, cls=dpkt.dns.DNS_IN)]
    msg.an, msg.ns, msg.ar = [], [], []
    return bytes(msg)


def dns_response(name: str, answers=(), rcode: int = 0, qid: int = 0x1234, qtype: int = dpkt.dns.DNS_A) -> bytes:
    """``answers`` is a list of ``(type, ttl, value)``; value is an IP or a CNAME target."""
    msg = dpkt.dns.DNS(id=qid, op=dpkt.dns.DNS_RD | dpkt.dns.DNS_RA, rcode=rcode)
    msg.qr = dpkt.dns.DNS_R
    msg.qd = [dpkt.dns.DNS.Q(name=name, type=qtype, cls=dpkt.dns.DNS_IN)]
    msg.an = []
    for rtype, ttl, value in answers:
        rr = dpkt.dns.DNS.RR(name=name, type=rtype, cls=dpkt.dns.DNS_IN, ttl=ttl)
        if rtype == dpkt.dns.DNS_A:
            rr.ip = socket.inet_aton(value)
            rr.rdata = rr.ip
        elif rtype == dpkt.dns.DNS_AAAA:
            rr.ip6 = socket.inet_pton(socket.AF_INET6, value)
            rr.rdata = rr.ip6
        else:
            rr.cname = value
        msg.an.append(rr)
    msg.ns, msg.ar = [], []
    return bytes(msg)
