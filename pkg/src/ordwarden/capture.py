"""Packet capture and JSONL flow ingestion, plus window cutting.

Only classic pcap is supported (both byte orders, micro- and nanosecond
variants) with Ethernet, raw-IP and Linux cooked link layers.
"""

from __future__ import annotations

import enum
import ipaddress
import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

from .model import (
    WINDOW_PACKETS,
    FlowKey,
    OrdwardenError,
    PduRecord,
    Transport,
    validate_pdu,
)

log = logging.getLogger(__name__)

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229

ETH_IPV4 = 0x0800
ETH_IPV6 = 0x86DD
ETH_VLAN = (0x8100, 0x88A8)

PROTO_TCP = 6
PROTO_UDP = 17


class BadCapture(OrdwardenError):
    pass


class NoUsableFlows(OrdwardenError):
    pass


class FlowTooShort(OrdwardenError, ValueError):
    pass


class ExtractorKind(str, enum.Enum):
    TCP32 = "tcp32"
    GENERIC8 = "generic8"
    GENERIC32 = "generic32"


@dataclass(frozen=True)
class SeqExtractor:
    """Where the sequence field lives.

    ``tcp32`` reads the TCP header sequence number. The generic kinds read
    one byte (or four, big-endian) at ``offset`` into the transport payload
    of TCP or UDP packets.
    """

    kind: ExtractorKind = ExtractorKind.TCP32
    offset: int = 0
    include_empty: bool = True  # tcp32 only: keep segments without payload

    def __post_init__(self):
        object.__setattr__(self, "kind", ExtractorKind(self.kind))
        if self.offset < 0:
            raise ValueError("offset must be >= 0")

    @property
    def bits(self) -> int:
        return 8 if self.kind is ExtractorKind.GENERIC8 else 32

    @property
    def transport(self) -> Transport:
        return Transport.TCP if self.kind is ExtractorKind.TCP32 else Transport.GENERIC

    def extract(self, proto: int, tcp_seq: Optional[int], payload: bytes) -> Optional[int]:
        if self.kind is ExtractorKind.TCP32:
            if proto != PROTO_TCP or tcp_seq is None:
                return None
            if not payload and not self.include_empty:
                return None
            return tcp_seq
        width = 1 if self.kind is ExtractorKind.GENERIC8 else 4
        chunk = payload[self.offset:self.offset + width]
        if len(chunk) < width:
            return None
        return int.from_bytes(chunk, "big")


@dataclass
class CaptureStats:
    packets_read: int = 0
    flows_seen: int = 0
    flows_with_window: int = 0
    packets_skipped: int = 0


@dataclass(frozen=True)
class RawPacket:
    ts_us: int
    src: Tuple[str, int]
    dst: Tuple[str, int]
    proto: int
    tcp_seq: Optional[int]
    payload: bytes = field(repr=False)


# -- pcap reading ------------------------------------------------------------

def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise BadCapture("truncated %s (wanted %d bytes, got %d)" % (what, n, len(data)))
    return data


def iter_pcap(path) -> Iterator[Tuple[int, int, bytes]]:
    """Yield ``(linktype, ts_us, frame)`` for each record of a classic pcap file."""
    with open(path, "rb") as fh:
        head = fh.read(24)
        if len(head) < 24:
            raise BadCapture("%s: file too short for a pcap header" % path)
        for endian in ("<", ">"):
            magic = struct.unpack(endian + "I", head[:4])[0]
            if magic in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
                break
        else:
            raise BadCapture("%s: not a classic pcap file" % path)
        nanos = magic == PCAP_MAGIC_NS
        linktype = struct.unpack(endian + "I", head[20:24])[0] & 0x0FFFFFFF
        rec = struct.Struct(endian + "IIII")
        while True:
            hdr = fh.read(16)
            if not hdr:
                return
            if len(hdr) < 16:
                raise BadCapture("%s: truncated record header" % path)
            sec, frac, caplen, _ = rec.unpack(hdr)
            if caplen > 1 << 24:
                raise BadCapture("%s: implausible record length %d" % (path, caplen))
            frame = _read_exact(fh, caplen, "record")
            ts_us = sec * 1_000_000 + (frac // 1000 if nanos else frac)
            yield linktype, ts_us, frame


def _ip_payload(linktype: int, frame: bytes) -> Optional[Tuple[int, bytes]]:
    """Return ``(ethertype-ish ip version, ip packet)`` or None for non-IP frames."""
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            return None
        etype = struct.unpack("!H", frame[12:14])[0]
        off = 14
        while etype in ETH_VLAN and len(frame) >= off + 4:
            etype = struct.unpack("!H", frame[off + 2:off + 4])[0]
            off += 4
        pkt = frame[off:]
    elif linktype == LINKTYPE_LINUX_SLL:
        if len(frame) < 16:
            return None
        etype = struct.unpack("!H", frame[14:16])[0]
        pkt = frame[16:]
    elif linktype in (LINKTYPE_RAW, LINKTYPE_IPV4, LINKTYPE_IPV6):
        if not frame:
            return None
        version = frame[0] >> 4
        etype = ETH_IPV4 if version == 4 else ETH_IPV6 if version == 6 else None
        pkt = frame
    else:
        raise BadCapture("unsupported link type %d" % linktype)
    if etype not in (ETH_IPV4, ETH_IPV6):
        return None
    return etype, pkt


def decode_frame(linktype: int, ts_us: int, frame: bytes) -> Optional[RawPacket]:
    """Parse one frame down to its TCP/UDP header; None if it is anything else."""
    found = _ip_payload(linktype, frame)
    if found is None:
        return None
    etype, pkt = found
    if etype == ETH_IPV4:
        if len(pkt) < 20:
            return None
        ihl = (pkt[0] & 0x0F) * 4
        total = struct.unpack("!H", pkt[2:4])[0]
        frag = struct.unpack("!H", pkt[6:8])[0]
        if frag & 0x1FFF:  # non-first fragment
            return None
        proto = pkt[9]
        src = str(ipaddress.IPv4Address(pkt[12:16]))
        dst = str(ipaddress.IPv4Address(pkt[16:20]))
        seg = pkt[ihl:total] if total >= ihl else pkt[ihl:]
    else:
        if len(pkt) < 40:
            return None
        plen = struct.unpack("!H", pkt[4:6])[0]
        proto = pkt[6]
        src = str(ipaddress.IPv6Address(pkt[8:24]))
        dst = str(ipaddress.IPv6Address(pkt[24:40]))
        seg = pkt[40:40 + plen]
    if proto == PROTO_TCP:
        if len(seg) < 20:
            return None
        sport, dport, seq = struct.unpack("!HHI", seg[:8])
        doff = (seg[12] >> 4) * 4
        return RawPacket(ts_us, (src, sport), (dst, dport), proto, seq, seg[doff:])
    if proto == PROTO_UDP:
        if len(seg) < 8:
            return None
        sport, dport, ulen = struct.unpack("!HHH", seg[:6])
        return RawPacket(ts_us, (src, sport), (dst, dport), proto, None, seg[8:ulen])
    return None


# -- ingestion -----------------------------------------------------------------

FlowMap = Dict[FlowKey, List[PduRecord]]


def _finish(flows: FlowMap, stats: CaptureStats) -> Tuple[FlowMap, CaptureStats]:
    stats.flows_seen = len(flows)
    stats.flows_with_window = sum(len(v) >= WINDOW_PACKETS for v in flows.values())
    if stats.flows_with_window == 0:
        raise NoUsableFlows("no flow reaches %d PDUs (%d flows seen)" % (WINDOW_PACKETS, stats.flows_seen))
    return flows, stats


def ingest_capture(path, extractor: SeqExtractor = SeqExtractor(),
                   flow_filter: Optional[Callable[[FlowKey], bool]] = None,
                   require_window: bool = True) -> Tuple[FlowMap, CaptureStats]:
    """Group the packets of a pcap file into per-direction flows.

    Records are kept in capture order. Packets whose sequence field cannot be
    extracted are counted in ``packets_skipped``.
    """
    flows: FlowMap = OrderedDict()
    stats = CaptureStats()
    for linktype, ts_us, frame in iter_pcap(path):
        stats.packets_read += 1
        pkt = decode_frame(linktype, ts_us, frame)
        if pkt is None:
            stats.packets_skipped += 1
            continue
        seq = extractor.extract(pkt.proto, pkt.tcp_seq, pkt.payload)
        if seq is None:
            stats.packets_skipped += 1
            continue
        key = FlowKey.directed(extractor.transport, pkt.src, pkt.dst)
        if flow_filter is not None and not flow_filter(key):
            stats.packets_skipped += 1
            continue
        recs = flows.setdefault(key, [])
        recs.append(PduRecord(key, len(recs), seq, extractor.bits, pkt.ts_us))
    if not require_window:
        stats.flows_seen = len(flows)
        stats.flows_with_window = sum(len(v) >= WINDOW_PACKETS for v in flows.values())
        return flows, stats
    return _finish(flows, stats)


def ingest_jsonl(path, flow_filter: Optional[Callable[[FlowKey], bool]] = None,
                 require_window: bool = True) -> Tuple[FlowMap, CaptureStats]:
    """Read the JSON-lines flow format, one packet object per line."""
    flows: FlowMap = OrderedDict()
    stats = CaptureStats()
    keys: Dict[str, FlowKey] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            stats.packets_read += 1
            try:
                obj = json.loads(line)
                fid = str(obj["flow"])
                key = keys.get(fid) or keys.setdefault(fid, FlowKey.from_id(fid))
                if flow_filter is not None and not flow_filter(key):
                    stats.packets_skipped += 1
                    continue
                recs = flows.setdefault(key, [])
                rec = PduRecord(key, int(obj["i"]), int(obj["seq"]), int(obj.get("bits", 32)),
                                int(obj.get("ts_us", 0)))
                validate_pdu(rec, recs[-1] if recs else None)
            except (ValueError, KeyError, TypeError) as exc:
                raise BadCapture("%s:%d: %s" % (path, lineno, exc)) from exc
            recs.append(rec)
    if not require_window:
        stats.flows_seen = len(flows)
        stats.flows_with_window = sum(len(v) >= WINDOW_PACKETS for v in flows.values())
        return flows, stats
    return _finish(flows, stats)


def is_pcap(path) -> bool:
    with open(path, "rb") as fh:
        head = fh.read(4)
    if len(head) < 4:
        return False
    return any(struct.unpack(e + "I", head)[0] in (PCAP_MAGIC_US, PCAP_MAGIC_NS) for e in "<>")


def ingest(path, extractor: SeqExtractor = SeqExtractor(), **kwargs) -> Tuple[FlowMap, CaptureStats]:
    """Dispatch on file content: pcap magic means pcap, anything else JSONL."""
    if not Path(path).exists():
        raise FileNotFoundError(path)
    if is_pcap(path):
        return ingest_capture(path, extractor, **kwargs)
    return ingest_jsonl(path, **kwargs)


# -- windows -------------------------------------------------------------------

def cut_windows(flow: Sequence[PduRecord], mode: str = "first", stride: int = WINDOW_PACKETS) -> list:
    """Cut 201-PDU windows from one flow.

    ``mode="first"`` gives one window; ``mode="sliding"`` gives
    ``(len - 201) // stride + 1`` windows.
    """
    if len(flow) < WINDOW_PACKETS:
        raise FlowTooShort("flow has %d PDUs, need %d" % (len(flow), WINDOW_PACKETS))
    if mode == "first":
        return [list(flow[:WINDOW_PACKETS])]
    if mode != "sliding":
        raise ValueError("unknown window mode %r" % mode)
    if stride < 1:
        raise ValueError("stride must be >= 1")
    count = (len(flow) - WINDOW_PACKETS) // stride + 1
    return [list(flow[k * stride:k * stride + WINDOW_PACKETS]) for k in range(count)]


def parse_window_mode(text: str) -> Tuple[str, int]:
    """``first`` or ``sliding[:STRIDE]``."""
    if text == "first":
        return "first", WINDOW_PACKETS
    if text.startswith("sliding"):
        _, _, rest = text.partition(":")
        return "sliding", int(rest) if rest else WINDOW_PACKETS
    raise ValueError("window mode must be 'first' or 'sliding[:STRIDE]', got %r" % text)


# -- writing -------------------------------------------------------------------

def _ip_checksum(header: bytes) -> int:
    total = sum(struct.unpack("!%dH" % (len(header) // 2), header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


_ETH_HEADER = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + struct.pack("!H", ETH_IPV4)


def build_frame(src: Tuple[str, int], dst: Tuple[str, int], proto: int, payload: bytes,
                tcp_seq: int = 0, ip_id: int = 0) -> bytes:
    """Minimal Ethernet/IPv4/{UDP,TCP} frame. Transport checksums are left zero."""
    if proto == PROTO_UDP:
        l4 = struct.pack("!HHHH", src[1], dst[1], 8 + len(payload), 0) + payload
    elif proto == PROTO_TCP:
        flags = 0x18 if payload else 0x10  # PSH|ACK or bare ACK
        l4 = struct.pack("!HHIIBBHHH", src[1], dst[1], tcp_seq, 0, 5 << 4, flags, 65535, 0, 0) + payload
    else:
        raise ValueError("unsupported protocol %d" % proto)
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(l4), ip_id & 0xFFFF, 0x4000, 64, proto, 0,
                     ipaddress.IPv4Address(src[0]).packed, ipaddress.IPv4Address(dst[0]).packed)
    ip = ip[:10] + struct.pack("!H", _ip_checksum(ip)) + ip[12:]
    return _ETH_HEADER + ip + l4


class PcapWriter:
    """Little-endian microsecond classic pcap writer (Ethernet link type)."""

    def __init__(self, fh, snaplen: int = 65535, linktype: int = LINKTYPE_ETHERNET):
        self._fh = fh
        fh.write(struct.pack("<IHHiIII", PCAP_MAGIC_US, 2, 4, 0, 0, snaplen, linktype))

    def write(self, ts_us: int, frame: bytes):
        sec, usec = divmod(ts_us, 1_000_000)
        self._fh.write(struct.pack("<IIII", sec, usec, len(frame), len(frame)))
        self._fh.write(frame)
