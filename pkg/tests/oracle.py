"""Independent brute-force feature computation.

Frames are dissected with dpkt, flows are grouped by scanning for a matching
endpoint pair, and every statistic is computed with plain loops and exact
rational arithmetic. Nothing here imports flowkit.
"""

from __future__ import annotations

import ipaddress
import json
import math
import struct
from fractions import Fraction
from pathlib import Path

import dpkt

SCHEMA = json.loads((Path(__file__).parents[1] / "src" / "flowkit" / "schema.json").read_text())
INTERVAL_EDGES_US = [e * 1000 for e in SCHEMA["edges"]["intervals_ms"]]
HDR_EDGES = SCHEMA["edges"]["hdr_bytes"]
PLD_EDGES = SCHEMA["edges"]["pld_bytes"]


def bucket_scan(values, edges):
    """Histogram by scanning every bucket's [lo, hi) range."""
    bounds = [-math.inf, *edges, math.inf]
    counts = []
    for lo, hi in zip(bounds, bounds[1:]):
        counts.append(sum(1 for v in values if lo <= v < hi))
    return counts


def dissect(buf: bytes, ts: int):
    eth = dpkt.ethernet.Ethernet(buf)
    ip = eth.data
    if isinstance(ip, dpkt.ip.IP):
        net_len = ip.hl * 4
        ip_payload_len = ip.len - net_len
        src, dst = ipaddress.ip_address(ip.src), ipaddress.ip_address(ip.dst)
    elif isinstance(ip, dpkt.ip6.IP6):
        net_len = 40
        ip_payload_len = ip.plen
        src, dst = ipaddress.ip_address(ip.src), ipaddress.ip_address(ip.dst)
    else:
        return None
    seg = ip.data
    if isinstance(seg, dpkt.tcp.TCP):
        proto, thl, flags = 6, seg.off * 4, seg.flags
    elif isinstance(seg, dpkt.udp.UDP):
        proto, thl, flags = 17, 8, 0
    else:
        return None
    return {
        "ts": ts,
        "src": (str(src), seg.sport),
        "dst": (str(dst), seg.dport),
        "proto": proto,
        "flags": flags,
        "hdr": net_len + thl,
        "pld": ip_payload_len - thl,
        "payload": bytes(seg.data),
    }


def group(frames):
    """Flows as dicts of initiator/responder and per-direction packet lists."""
    flows = []
    for buf, ts in frames:
        pkt = dissect(buf, ts)
        if pkt is None:
            continue
        for flow in flows:
            ends = {flow["init"], flow["resp"]}
            if flow["proto"] == pkt["proto"] and {pkt["src"], pkt["dst"]} == ends:
                break
        else:
            flow = {"init": pkt["src"], "resp": pkt["dst"], "proto": pkt["proto"], "fwd": [], "rev": []}
            flows.append(flow)
        (flow["fwd"] if pkt["src"] == flow["init"] else flow["rev"]).append(pkt)
    return flows


def _direction(pkts):
    n = len(pkts)
    stamps = sorted(p["ts"] for p in pkts)
    intervals = [stamps[i + 1] - stamps[i] for i in range(n - 1)]
    hdrs = [p["hdr"] for p in pkts]
    plds = [p["pld"] for p in pkts]
    flags = [0] * 5
    for p in pkts:
        for i, bit in enumerate((0x10, 0x08, 0x04, 0x02, 0x01)):
            if p["flags"] & bit:
                flags[i] += 1
    if n:
        mean = Fraction(sum(plds), n)
        var = sum((Fraction(x) - mean) ** 2 for x in plds) / n
        median = sorted(plds)[(n - 1) // 2]
        hdr_mean = Fraction(sum(hdrs), n)
        pld_max = max(plds)
    else:
        mean = var = hdr_mean = Fraction(0)
        median = pld_max = 0
    return {
        "intervals_ccnt": bucket_scan(intervals, INTERVAL_EDGES_US),
        "ack_psh_rst_syn_fin_cnt": flags,
        "hdr_distinct": len(set(hdrs)),
        "hdr_ccnt": bucket_scan(hdrs, HDR_EDGES),
        "pld_distinct": len(set(plds)),
        "pld_ccnt": bucket_scan(plds, PLD_EDGES),
        "hdr_mean": float(hdr_mean),
        "hdr_bin_40": sum(1 for h in hdrs if 28 <= h <= 40),
        "pld_bin_128": sum(1 for x in plds if x < 128),
        "pld_bin_inf": sum(1 for x in plds if x > 1024),
        "pld_max": pld_max,
        "pld_mean": float(mean),
        "pld_medium": median,
        "pld_var": float(var),
    }


def metadata(flow):
    allp = flow["fwd"] + flow["rev"]
    start = min(p["ts"] for p in allp)
    end = max(p["ts"] for p in allp)
    out = {
        "sa": flow["init"][0],
        "da": flow["resp"][0],
        "pr": flow["proto"],
        "src_port": flow["init"][1],
        "dst_port": flow["resp"][1],
        "bytes_out": sum(p["pld"] for p in flow["fwd"]),
        "num_pkts_out": len(flow["fwd"]),
        "bytes_in": sum(p["pld"] for p in flow["rev"]),
        "num_pkts_in": len(flow["rev"]),
        "time_start": start,
        "time_end": end,
        "time_length": (end - start) / 1e6,
    }
    out.update(_direction(flow["fwd"]))
    out.update({f"rev_{k}": v for k, v in _direction(flow["rev"]).items()})
    return out


# ---------------------------------------------------------------- TLS


def _code(v: int) -> str:
    return "0x%04x" % v


def _tls_direction(pkts):
    """Record lengths and handshake messages via dpkt's TLS record factory."""
    stream = b"".join(p["payload"] for p in pkts if p["payload"])
    try:
        records, _ = dpkt.ssl.tls_multi_factory(stream)
    except dpkt.ssl.SSL3Exception:
        return [], []
    lengths = [r.length for r in records]
    hs = b""
    for r in records:
        if r.type == 20:
            break
        if r.type == 22:
            hs += r.data
    msgs = []
    pos = 0
    while pos + 4 <= len(hs):
        mtype = hs[pos]
        length = struct.unpack("!I", b"\x00" + hs[pos + 1 : pos + 4])[0]
        msgs.append((mtype, length, hs[pos : pos + 4 + length]))
        pos += 4 + length
    return lengths, msgs


def tls(flow):
    if flow["proto"] != 6:
        return None
    out_len, out_msgs = _tls_direction(flow["fwd"])
    in_len, in_msgs = _tls_direction(flow["rev"])
    if not out_len and not in_len:
        return None
    res = {
        "tls_cnt": len(out_len), "tls_len": out_len,
        "tls_cs_cnt": 0, "tls_cs": [], "tls_ext_cnt": 0, "tls_ext_types": [], "tls_key_exchange_len": 0,
        "tls_svr_cnt": len(in_len), "tls_svr_len": in_len,
        "tls_svr_cs_cnt": 0, "tls_svr_cs": [], "tls_svr_ext_cnt": 0, "tls_svr_ext_types": [],
        "tls_svr_key_exchange_len": 0,
    }
    for mtype, length, raw in out_msgs:
        if mtype == 1 and not res["tls_cs"]:
            hello = dpkt.ssl.TLSHandshake(raw).data
            res["tls_cs"] = [_code(c.code) for c in hello.ciphersuites]
            res["tls_ext_types"] = [_code(t) for t, _ in getattr(hello, "extensions", [])]
        elif mtype == 16 and not res["tls_key_exchange_len"]:
            res["tls_key_exchange_len"] = length
    for mtype, length, raw in in_msgs:
        if mtype == 2 and not res["tls_svr_cs"]:
            hello = dpkt.ssl.TLSHandshake(raw).data
            res["tls_svr_cs"] = [_code(hello.ciphersuite.code)]
            res["tls_svr_ext_types"] = [_code(t) for t, _ in getattr(hello, "extensions", [])]
        elif mtype == 12 and not res["tls_svr_key_exchange_len"]:
            res["tls_svr_key_exchange_len"] = length
    for side in ("tls_", "tls_svr_"):
        res[f"{side}cs_cnt"] = len(res[f"{side}cs"])
        res[f"{side}ext_cnt"] = len(res[f"{side}ext_types"])
    return res


# ---------------------------------------------------------------- DNS


def dns(flow):
    if flow["proto"] != 17 or 53 not in (flow["init"][1], flow["resp"][1]):
        return None
    res = {"dns_query_cnt": 0, "dns_query_name_len": [], "dns_query_name": [], "dns_query_type": [],
           "dns_query_class": [], "dns_answer_cnt": 0, "dns_answer_ttl": [], "dns_answer_ip": []}
    parsed = False
    for p in sorted(flow["fwd"] + flow["rev"], key=lambda p: p["ts"]):
        try:
            msg = dpkt.dns.DNS(p["payload"])
        except (dpkt.UnpackError, struct.error, IndexError):
            continue
        if not msg.qd:
            continue
        parsed = True
        if msg.qr == dpkt.dns.DNS_Q:
            for q in msg.qd:
                name = q.name.lower()
                res["dns_query_name"].append(name)
                res["dns_query_name_len"].append(len(name))
                res["dns_query_type"].append(q.type)
                res["dns_query_class"].append(q.cls)
        else:
            for rr in msg.an:
                if rr.type == dpkt.dns.DNS_A:
                    ip = str(ipaddress.IPv4Address(rr.rdata))
                elif rr.type == dpkt.dns.DNS_AAAA:
                    ip = str(ipaddress.IPv6Address(rr.rdata))
                else:
                    continue
                res["dns_answer_ttl"].append(rr.ttl)
                res["dns_answer_ip"].append(ip)
    if not parsed:
        return None
    res["dns_query_cnt"] = len(res["dns_query_name"])
    res["dns_answer_cnt"] = len(res["dns_answer_ttl"])
    return res


# ---------------------------------------------------------------- HTTP


def http(flow):
    if flow["proto"] != 6:
        return None
    req = None
    for p in flow["fwd"]:
        if not p["payload"]:
            continue
        try:
            req = dpkt.http.Request(p["payload"])
            req_ts = p["ts"]
            break
        except (dpkt.UnpackError, dpkt.NeedData):
            continue
    if req is None:
        return None
    res = {"http_method": req.method, "http_uri": req.uri, "http_host": req.headers.get("host", ""),
           "http_code": 0, "http_content_type": "", "http_content_len": -1}
    for p in flow["rev"]:
        if p["ts"] < req_ts or not p["payload"].startswith(b"HTTP/1."):
            continue
        try:
            resp = dpkt.http.Response(p["payload"])
        except dpkt.NeedData:
            # body shorter than Content-Length; dpkt needs the header part only
            head = p["payload"].split(b"\r\n\r\n", 1)[0] + b"\r\n\r\n"
            resp = dpkt.http.Response(head.replace(b"Content-Length", b"X-Content-Length"))
            resp.headers["content-length"] = resp.headers.pop("x-content-length", "-1")
        res["http_code"] = int(resp.status)
        res["http_content_type"] = resp.headers.get("content-type", "")
        res["http_content_len"] = int(resp.headers.get("content-length", -1))
        break
    return res


def features(frames):
    """All oracle feature dicts for a frame list, in first-packet order."""
    out = []
    for flow in group(frames):
        row = metadata(flow)
        for fam in (tls(flow), dns(flow), http(flow)):
            if fam is not None:
                row.update(fam)
        out.append(row)
    return out
