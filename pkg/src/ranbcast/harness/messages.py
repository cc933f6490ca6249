"""Typed interface messages carried over simulated latency links."""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Any

from ..errors import IllegalMessage, NoSuchLink, RuntimeInvariantViolation
from ..topology import InterfaceKind, Topology
from .engine import PHASE_DELIVERY, Event, EventKind, EventQueue


class BodyKind(str, enum.Enum):
    SYNC_NEGOTIATION = "SyncNegotiation"
    SYNC_PDU = "SyncPdu"
    RBMA_SETUP = "RbmaSetup"
    RBMA_UPDATE = "RbmaUpdate"
    RRC = "Rrc"
    PDU_SESSION = "PduSessionModification"
    USER_DATA = "UserData"


K = InterfaceKind
B = BodyKind
LEGAL_BODIES: dict[InterfaceKind, frozenset[BodyKind]] = {
    K.N2: frozenset({B.PDU_SESSION}),
    K.N3: frozenset({B.USER_DATA}),
    K.M1NG: frozenset({B.USER_DATA}),
    K.XnC: frozenset({B.SYNC_NEGOTIATION, B.RBMA_SETUP, B.RBMA_UPDATE, B.RRC}),
    K.XnU: frozenset({B.SYNC_PDU, B.USER_DATA}),
    K.F1C: frozenset({B.RBMA_SETUP, B.RBMA_UPDATE, B.RRC}),
    K.F1U: frozenset({B.SYNC_PDU, B.USER_DATA}),
    K.F1M: frozenset({B.SYNC_NEGOTIATION, B.RBMA_SETUP}),
    K.E1: frozenset({B.RBMA_SETUP, B.PDU_SESSION}),
    K.Uu: frozenset({B.RRC, B.RBMA_UPDATE, B.USER_DATA}),
}
del K, B


@dataclass(frozen=True)
class InterfaceMessage:
    interface_kind: InterfaceKind
    source: str
    destination: str
    body_kind: BodyKind
    body: Any = field(default=None, compare=False)

    def __post_init__(self) -> None:
        kind = InterfaceKind(self.interface_kind)
        body_kind = BodyKind(self.body_kind)
        object.__setattr__(self, "interface_kind", kind)
        object.__setattr__(self, "body_kind", body_kind)
        if body_kind not in LEGAL_BODIES[kind]:
            raise IllegalMessage(f"{body_kind.value} may not travel over {kind.value}")


@dataclass(frozen=True)
class Delivery:
    msg_id: int
    message: InterfaceMessage
    sent_us: int


@dataclass(frozen=True)
class LatencySpike:
    a: str
    b: str
    kind: InterfaceKind
    from_us: int
    to_us: int
    extra_us: int

    def applies(self, msg: InterfaceMessage, now_us: int) -> bool:
        return (
            msg.interface_kind is self.kind
            and {self.a, self.b} == {_lnode(msg.source), _lnode(msg.destination)}
            and self.from_us <= now_us < self.to_us
        )


def _lnode(node: str) -> str:
    return "ue" if node.startswith("ue") else node


class MessageBus:
    """Schedules deliveries and keeps the sent / delivered / dropped ledger."""

    def __init__(self, topology: Topology, queue: EventQueue, seed: int = 0) -> None:
        self.topology = topology
        self.queue = queue
        self.rng = random.Random(seed)
        self.spikes: list[LatencySpike] = []
        self.sent = 0
        self.delivered = 0
        self.dropped: list[tuple[int, Delivery, str]] = []
        self._in_flight: dict[int, Delivery] = {}
        self.per_interface: dict[str, int] = {}

    def deliver(self, message: InterfaceMessage, now_us: int) -> Event:
        link = self.topology.link(message.source, message.destination, message.interface_kind)
        if link is None:
            raise NoSuchLink(
                f"no {message.interface_kind.value} link {message.source} -> {message.destination}"
            )
        delay = link.latency_us
        if link.jitter_us:
            delay += self.rng.randint(0, link.jitter_us)
        for spike in self.spikes:
            if spike.applies(message, now_us):
                delay += spike.extra_us
        d = Delivery(self.sent, message, now_us)
        self.sent += 1
        self._in_flight[d.msg_id] = d
        key = message.interface_kind.value
        self.per_interface[key] = self.per_interface.get(key, 0) + 1
        return self.queue.push(now_us + delay, EventKind.MESSAGE_DELIVERY, d, PHASE_DELIVERY)

    def accept(self, d: Delivery) -> None:
        if self._in_flight.pop(d.msg_id, None) is None:
            raise RuntimeInvariantViolation(f"message {d.msg_id} delivered twice or never sent")
        self.delivered += 1

    def drop(self, d: Delivery, now_us: int, reason: str) -> None:
        """Explicit loss injection: the message vanishes, but on the record."""
        if self._in_flight.pop(d.msg_id, None) is None:
            raise RuntimeInvariantViolation(f"message {d.msg_id} dropped twice or never sent")
        self.dropped.append((now_us, d, reason))

    @property
    def in_flight(self) -> int:
        return len(self._in_flight)

    def check_conservation(self) -> None:
        if self.sent != self.delivered + len(self.dropped) + self.in_flight:
            raise RuntimeInvariantViolation(
                f"message ledger broken: sent {self.sent} != delivered {self.delivered}"
                f" + dropped {len(self.dropped)} + in flight {self.in_flight}"
            )
        if self.in_flight:
            raise RuntimeInvariantViolation(f"{self.in_flight} messages never delivered")


def deliver(bus: MessageBus, message: InterfaceMessage, now_us: int) -> Event:
    return bus.deliver(message, now_us)


@dataclass(frozen=True)
class XcastTunnel:
    """Multicast user-plane tunnel feeding one DU with one RBMA's content."""

    tunnel_id: int
    endpoints: tuple[str, str]
    rbma_id: int


class TunnelTable:
    """At most one active tunnel per (RBMA, DU); reopening returns the existing one."""

    def __init__(self) -> None:
        self._by_key: dict[tuple[int, int], XcastTunnel] = {}

    def open(self, rbma_id: int, source: str, du_id: int) -> XcastTunnel:
        key = (rbma_id, du_id)
        tunnel = self._by_key.get(key)
        if tunnel is None:
            tunnel = XcastTunnel(len(self._by_key) + 1, (source, f"du:{du_id}"), rbma_id)
            self._by_key[key] = tunnel
        return tunnel

    def close(self, rbma_id: int, du_id: int) -> XcastTunnel:
        try:
            return self._by_key.pop((rbma_id, du_id))
        except KeyError:
            raise RuntimeInvariantViolation(f"no tunnel for RBMA {rbma_id} at du:{du_id}") from None

    def active(self) -> list[XcastTunnel]:
        return sorted(self._by_key.values(), key=lambda t: t.tunnel_id)
