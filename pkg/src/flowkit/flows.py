"""Bidirectional flow assembly keyed by canonical 5-tuple."""

from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

from .packets import TCP, IPAddress, PacketRecord

MAX_PACKETS_PER_DIRECTION = 200
DEFAULT_IDLE_TIMEOUT_US = 60_000_000


class FlowKey(NamedTuple):
    ip_a: IPAddress
    port_a: int
    ip_b: IPAddress
    port_b: int
    protocol: int


def flow_key(pkt: PacketRecord) -> FlowKey:
    """Direction-independent key: the smaller (ip, port) endpoint comes first."""
    a = (pkt.src_ip.packed, pkt.src_port)
    b = (pkt.dst_ip.packed, pkt.dst_port)
    if a <= b:
        return FlowKey(pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port, pkt.protocol)
    return FlowKey(pkt.dst_ip, pkt.dst_port, pkt.src_ip, pkt.src_port, pkt.protocol)


class Termination(str, enum.Enum):
    FIN = "fin"
    RST = "rst"
    IDLE_TIMEOUT = "idle_timeout"
    CAPTURE_END = "capture_end"
    PACKET_CAP = "packet_cap"


@dataclass(frozen=True)
class FlowRecord:
    key: FlowKey
    initiator: tuple[IPAddress, int]
    fwd_packets: tuple[PacketRecord, ...]
    rev_packets: tuple[PacketRecord, ...]
    time_start_us: int
    time_end_us: int
    termination: Termination
    fwd_overflow: int = 0
    rev_overflow: int = 0

    @property
    def protocol(self) -> int:
        return self.key.protocol

    @property
    def responder(self) -> tuple[IPAddress, int]:
        a = (self.key.ip_a, self.key.port_a)
        return (self.key.ip_b, self.key.port_b) if a == self.initiator else a

    @property
    def packets(self) -> list[PacketRecord]:
        """Stored packets of both directions in timestamp order."""
        return sorted(self.fwd_packets + self.rev_packets, key=lambda p: p.timestamp_us)


@dataclass
class _FlowState:
    key: FlowKey
    initiator: tuple[IPAddress, int]
    fwd: list[PacketRecord] = field(default_factory=list)
    rev: list[PacketRecord] = field(default_factory=list)
    fwd_overflow: int = 0
    rev_overflow: int = 0
    last_ts: int = 0
    fin_fwd: bool = False
    fin_rev: bool = False
    rst: bool = False

    @property
    def closed(self) -> bool:
        return self.rst or (self.fin_fwd and self.fin_rev)

    def add(self, pkt: PacketRecord, cap: int) -> None:
        forward = (pkt.src_ip, pkt.src_port) == self.initiator
        if forward:
            if len(self.fwd) < cap:
                self.fwd.append(pkt)
            else:
                self.fwd_overflow += 1
        else:
            if len(self.rev) < cap:
                self.rev.append(pkt)
            else:
                self.rev_overflow += 1
        self.last_ts = max(self.last_ts, pkt.timestamp_us)
        if pkt.protocol == TCP:
            flags = pkt.tcp_flags
            if flags.rst:
                self.rst = True
            if flags.fin:
                if forward:
                    self.fin_fwd = True
                else:
                    self.fin_rev = True

    def finish(self, fallback: Termination) -> FlowRecord:
        fwd = tuple(sorted(self.fwd, key=lambda p: p.timestamp_us))
        rev = tuple(sorted(self.rev, key=lambda p: p.timestamp_us))
        stamps = [p.timestamp_us for p in fwd[:1] + fwd[-1:] + rev[:1] + rev[-1:]]
        if self.rst:
            reason = Termination.RST
        elif self.fin_fwd and self.fin_rev:
            reason = Termination.FIN
        elif self.fwd_overflow or self.rev_overflow:
            reason = Termination.PACKET_CAP
        else:
            reason = fallback
        return FlowRecord(
            key=self.key,
            initiator=self.initiator,
            fwd_packets=fwd,
            rev_packets=rev,
            time_start_us=min(stamps),
            time_end_us=max(stamps),
            termination=reason,
            fwd_overflow=self.fwd_overflow,
            rev_overflow=self.rev_overflow,
        )


class FlowAssembler:
    """Single-writer flow table.

    Feed packets in capture order with :meth:`add`; finished flows are
    returned as they terminate. Call :meth:`flush` at end of input.

    A TCP flow that has seen RST, or FIN from both sides, stays in the table
    to absorb trailing packets until it goes idle; a fresh SYN on its key
    starts a new flow instead.
    """

    def __init__(
        self,
        idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US,
        max_packets: int = MAX_PACKETS_PER_DIRECTION,
    ):
        if idle_timeout_us <= 0:
            raise ValueError("idle_timeout_us must be positive")
        self.idle_timeout_us = idle_timeout_us
        self.max_packets = max_packets
        # ordered by last activity, oldest first
        self._table: OrderedDict[FlowKey, _FlowState] = OrderedDict()
        self.packets_seen = 0

    def add(self, pkt: PacketRecord) -> list[FlowRecord]:
        done = self._expire(pkt.timestamp_us)
        self.packets_seen += 1
        key = flow_key(pkt)
        state = self._table.get(key)
        if state is not None:
            new_syn = pkt.protocol == TCP and pkt.tcp_flags.syn and not pkt.tcp_flags.ack
            if state.closed and new_syn:
                del self._table[key]
                done.append(state.finish(Termination.CAPTURE_END))
                state = None
        if state is None:
            state = _FlowState(key=key, initiator=(pkt.src_ip, pkt.src_port))
            self._table[key] = state
        else:
            self._table.move_to_end(key)
        state.add(pkt, self.max_packets)
        return done

    def _expire(self, now: int) -> list[FlowRecord]:
        done = []
        while self._table:
            key, state = next(iter(self._table.items()))
            if now - state.last_ts <= self.idle_timeout_us:
                break
            del self._table[key]
            done.append(state.finish(Termination.IDLE_TIMEOUT))
        return done

    def flush(self) -> list[FlowRecord]:
        done = [state.finish(Termination.CAPTURE_END) for state in self._table.values()]
        self._table.clear()
        return done


def assemble(
    packets: Iterable[PacketRecord],
    idle_timeout_us: int = DEFAULT_IDLE_TIMEOUT_US,
    max_packets: int = MAX_PACKETS_PER_DIRECTION,
) -> Iterator[FlowRecord]:
    """Group an ordered packet stream into bidirectional flows."""
    assembler = FlowAssembler(idle_timeout_us, max_packets)
    for pkt in packets:
        yield from assembler.add(pkt)
    yield from assembler.flush()
