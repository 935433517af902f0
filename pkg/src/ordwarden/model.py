"""Shared domain types for flows, packets, windows and scores."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Tuple

WINDOW_PACKETS = 201
WINDOW_DIFFS = WINDOW_PACKETS - 1


class OrdwardenError(Exception):
    """Base class for all errors raised by this package."""


class SeqOutOfRange(OrdwardenError, ValueError):
    pass


class NonMonotonicArrival(OrdwardenError, ValueError):
    pass


class Transport(str, enum.Enum):
    TCP = "tcp"
    GENERIC = "generic"


class Label(str, enum.Enum):
    LEGITIMATE = "legitimate"
    COVERT2 = "covert2"
    COVERT3 = "covert3"
    COVERT4 = "covert4"
    COVERT5 = "covert5"

    @property
    def is_covert(self) -> bool:
        return self is not Label.LEGITIMATE

    @property
    def verdict(self) -> "Verdict":
        return Verdict.COVERT if self.is_covert else Verdict.LEGITIMATE

    @classmethod
    def for_group_size(cls, n: int) -> "Label":
        try:
            return cls("covert%d" % n)
        except ValueError:
            raise ValueError("no label for %d-PDU groups" % n) from None


class Verdict(str, enum.Enum):
    LEGITIMATE = "legitimate"
    COVERT = "covert"


Endpoint = Tuple[str, int]

_ID_RE = re.compile(r"^(?P<t>tcp|generic):(?P<sh>[^:>]+):(?P<sp>\d+)>(?P<dh>[^:>]+):(?P<dp>\d+)$")


@dataclass(frozen=True, order=True)
class FlowKey:
    """Direction-normalized 5-tuple.

    ``endpoint_a`` is always the lexicographically smaller endpoint; ``reverse``
    is True when the scored direction is b->a.
    """

    transport: Transport
    endpoint_a: Endpoint
    endpoint_b: Endpoint
    reverse: bool = False

    def __post_init__(self):
        if self.endpoint_a == self.endpoint_b:
            raise ValueError("flow endpoints must be distinct")
        if self.endpoint_b < self.endpoint_a:
            raise ValueError("endpoint_a must sort before endpoint_b; use FlowKey.directed()")

    @classmethod
    def directed(cls, transport, src: Endpoint, dst: Endpoint) -> "FlowKey":
        transport = Transport(transport)
        if src <= dst:
            return cls(transport, src, dst, False)
        return cls(transport, dst, src, True)

    @property
    def src(self) -> Endpoint:
        return self.endpoint_b if self.reverse else self.endpoint_a

    @property
    def dst(self) -> Endpoint:
        return self.endpoint_a if self.reverse else self.endpoint_b

    @property
    def flow_id(self) -> str:
        (sh, sp), (dh, dp) = self.src, self.dst
        return "%s:%s:%d>%s:%d" % (self.transport.value, sh, sp, dh, dp)

    @classmethod
    def from_id(cls, flow_id: str) -> "FlowKey":
        """Parse a flow id; ids not in ``transport:host:port>host:port`` form
        become opaque generic keys so foreign JSONL files still load."""
        m = _ID_RE.match(flow_id)
        if m is None:
            return cls(Transport.GENERIC, (flow_id, 0), (flow_id, 1), False)
        return cls.directed(m["t"], (m["sh"], int(m["sp"])), (m["dh"], int(m["dp"])))

    def __str__(self):
        if self.endpoint_a[0] == self.endpoint_b[0] and self.endpoint_a[1:] == (0,):
            return self.endpoint_a[0]
        return self.flow_id


@dataclass(frozen=True)
class PduRecord:
    flow: FlowKey
    arrival_index: int
    seq_raw: int
    seq_field_bits: int = 32
    timestamp: int = 0  # microseconds since epoch


def validate_pdu(p: PduRecord, previous: Optional[PduRecord] = None) -> PduRecord:
    """Check a record's invariants, optionally against its predecessor in the flow."""
    if p.seq_field_bits not in (8, 32):
        raise ValueError("seq_field_bits must be 8 or 32, got %r" % p.seq_field_bits)
    if not 0 <= p.seq_raw < (1 << p.seq_field_bits):
        raise SeqOutOfRange("seq %d does not fit in %d bits" % (p.seq_raw, p.seq_field_bits))
    if p.arrival_index < 0:
        raise NonMonotonicArrival("negative arrival index %d" % p.arrival_index)
    if previous is not None and p.arrival_index <= previous.arrival_index:
        raise NonMonotonicArrival(
            "arrival index %d follows %d" % (p.arrival_index, previous.arrival_index))
    return p


def validate_flow(records: Iterable[PduRecord]) -> list:
    out = []
    prev = None
    for p in records:
        if prev is not None and p.flow != prev.flow:
            raise ValueError("records from different flows: %s, %s" % (prev.flow, p.flow))
        out.append(validate_pdu(p, prev))
        prev = p
    return out


@dataclass(frozen=True)
class OrderWindow:
    """201 PDUs of one flow reduced to ranks and retained order differences."""

    flow: FlowKey
    ranks: Tuple[int, ...]
    diffs: Tuple[int, ...]
    dropped_overruns: int = 0

    def __post_init__(self):
        if len(self.ranks) != WINDOW_PACKETS:
            raise ValueError("window needs %d ranks, got %d" % (WINDOW_PACKETS, len(self.ranks)))
        if len(self.diffs) != WINDOW_DIFFS - self.dropped_overruns:
            raise ValueError("diff count does not match dropped_overruns")


@dataclass(frozen=True)
class ScoredFlow:
    flow: FlowKey
    coding: str
    s_len: int
    c_len: int
    label: Optional[Label] = None
    window: int = 0
    kappa: Fraction = field(init=False)

    def __post_init__(self):
        if self.s_len <= 0 or self.c_len <= 0:
            raise ValueError("s_len and c_len must be positive")
        object.__setattr__(self, "kappa", Fraction(self.s_len, self.c_len))

    @property
    def flow_id(self) -> str:
        return str(self.flow)


def seq_values(records: Sequence[PduRecord]) -> list:
    return [p.seq_raw for p in records]
