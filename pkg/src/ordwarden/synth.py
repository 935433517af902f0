"""Synthetic message-ordering covert flows and legitimate flows with ground truth."""

from __future__ import annotations

import csv
import heapq
import json
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

from .capture import PROTO_TCP, PROTO_UDP, PcapWriter, build_frame
from .encoding import rank_window, unwrap_sequences
from .model import WINDOW_PACKETS, FlowKey, Label, OrdwardenError, PduRecord, Transport

BASE_TS_US = 1_500_000_000 * 1_000_000


class RankOutOfRange(OrdwardenError, ValueError):
    pass


# -- permutation coding -------------------------------------------------------

def bits_per_group(n: int) -> int:
    """Largest whole number of bits a group of n PDUs can carry."""
    return math.factorial(n).bit_length() - 1


@dataclass(frozen=True)
class Capacity:
    theoretical: float  # m * log2(n!)
    block_bits: int     # m * floor(log2(n!)), one Lehmer block per group
    packed_bits: int    # floor(m * log2(n!)), mixed-radix packing


def capacity(n: int, m: int) -> Capacity:
    if n < 2 or m < 1:
        raise ValueError("need n >= 2 and m >= 1")
    return Capacity(m * math.log2(math.factorial(n)), m * bits_per_group(n), packed_bits(n, m))


def packed_bits(n: int, m: int) -> int:
    # exact floor(log2((n!)^m)) without float error
    return (math.factorial(n) ** m).bit_length() - 1


def permutation_from_rank(rank: int, n: int) -> Tuple[int, ...]:
    """Lexicographic (Lehmer-code) unranking of a permutation of range(n)."""
    if not 0 <= rank < math.factorial(n):
        raise RankOutOfRange("rank %d outside 0..%d!-1" % (rank, n))
    items = list(range(n))
    out = []
    for i in range(n - 1, -1, -1):
        digit, rank = divmod(rank, math.factorial(i))
        out.append(items.pop(digit))
    return tuple(out)


def rank_of_permutation(perm: Sequence[int]) -> int:
    n = len(perm)
    if sorted(perm) != list(range(n)):
        raise ValueError("not a permutation of range(%d): %r" % (n, perm))
    rank = 0
    for i, p in enumerate(perm):
        smaller = sum(1 for q in perm[i + 1:] if q < p)
        rank += smaller * math.factorial(n - 1 - i)
    return rank


def _bits_to_int(bits) -> int:
    text = "".join(str(int(b)) for b in bits) if not isinstance(bits, str) else bits
    if text and set(text) - {"0", "1"}:
        raise ValueError("bit block must contain only 0/1")
    return int(text, 2) if text else 0


def _int_to_bits(value: int, width: int) -> str:
    return format(value, "0%db" % width) if width else ""


def encode_permutation(bits, n: int) -> Tuple[int, ...]:
    """Map a block of floor(log2 n!) bits to the permutation with that Lehmer rank."""
    width = bits_per_group(n)
    if len(bits) != width:
        raise ValueError("need %d bits for n=%d, got %d" % (width, n, len(bits)))
    return permutation_from_rank(_bits_to_int(bits), n)


def decode_permutation(perm: Sequence[int]) -> str:
    rank = rank_of_permutation(perm)
    width = bits_per_group(len(perm))
    if rank >= 1 << width:
        raise RankOutOfRange("permutation rank %d not produced by a %d-bit block" % (rank, width))
    return _int_to_bits(rank, width)


@dataclass(frozen=True)
class PermutationCode:
    """Bit blocks <-> packet-group orderings.

    ``packing="block"`` spends floor(log2 n!) bits on each group, so some
    orderings never occur. ``packing="radix"`` reads the whole payload as one
    integer in base n!, giving every group a near-uniform ordering and the
    full floor(m log2 n!) bits.
    """

    n: int
    packing: str = "radix"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.packing not in ("radix", "block"):
            raise ValueError("packing must be 'radix' or 'block'")

    @property
    def bits_per_group(self) -> int:
        return bits_per_group(self.n)

    def payload_bits(self, m: int) -> int:
        return packed_bits(self.n, m) if self.packing == "radix" else m * self.bits_per_group

    def encode(self, bits: str, m: int) -> List[Tuple[int, ...]]:
        if len(bits) != self.payload_bits(m):
            raise ValueError("payload must be %d bits, got %d" % (self.payload_bits(m), len(bits)))
        if self.packing == "block":
            w = self.bits_per_group
            return [encode_permutation(bits[g * w:(g + 1) * w], self.n) for g in range(m)]
        value = _bits_to_int(bits)
        base = math.factorial(self.n)
        digits = []
        for _ in range(m):
            value, d = divmod(value, base)
            digits.append(d)
        return [permutation_from_rank(d, self.n) for d in digits]

    def decode(self, perms: Sequence[Sequence[int]]) -> str:
        m = len(perms)
        if self.packing == "block":
            return "".join(decode_permutation(p) for p in perms)
        base = math.factorial(self.n)
        value = 0
        for p in reversed(perms):
            value = value * base + rank_of_permutation(p)
        width = self.payload_bits(m)
        if value >= 1 << width:
            raise RankOutOfRange("decoded payload exceeds %d bits" % width)
        return _int_to_bits(value, width)


# -- flow specs ---------------------------------------------------------------

def _check_iat(iat_us):
    lo, hi = iat_us
    if not 0 <= lo <= hi:
        raise ValueError("bad inter-arrival range %r" % (iat_us,))


@dataclass(frozen=True)
class CovertSpec:
    n: int
    m: int
    seed: int
    iat_us: Tuple[int, int] = (10_000, 500_000)
    seq_field_bits: int = 8
    packing: str = "radix"
    isn: Optional[int] = None  # initial sequence number; drawn from seed when None
    seq_step: int = 1

    def __post_init__(self):
        if self.n not in (2, 3, 4, 5):
            raise ValueError("n must be 2..5, got %r" % self.n)
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.seq_field_bits not in (8, 32):
            raise ValueError("seq_field_bits must be 8 or 32")
        _check_iat(self.iat_us)

    @property
    def label(self) -> Label:
        return Label.for_group_size(self.n)


@dataclass(frozen=True)
class LegitSpec:
    length: int
    seed: int
    p_reorder: float = 0.005
    p_retransmit: float = 0.0015
    iat_us: Tuple[int, int] = (1_000, 50_000)
    seq_field_bits: int = 32
    isn: Optional[int] = None
    seq_step: int = 1

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be >= 1")
        for p in (self.p_reorder, self.p_retransmit):
            if not 0 <= p < 1:
                raise ValueError("probabilities must lie in [0, 1)")
        if self.seq_field_bits not in (8, 32):
            raise ValueError("seq_field_bits must be 8 or 32")
        _check_iat(self.iat_us)


@dataclass
class SynthFlow:
    key: FlowKey
    records: List[PduRecord]
    label: Label
    n: int = 0
    m: int = 0
    seed: int = 0
    bits: Optional[str] = field(default=None, repr=False)

    @property
    def flow_id(self) -> str:
        return str(self.key)


def flow_key(kind: int, index: int, seed: int, transport=Transport.GENERIC) -> FlowKey:
    """Deterministic endpoints: one /16 per traffic kind, port derived from the seed."""
    hi, lo = divmod(index, 256)
    src = ("10.%d.%d.%d" % (kind, hi % 256, lo), 20000 + seed % 40000)
    dst = ("192.0.2.%d" % (1 + kind), 9000)
    return FlowKey.directed(transport, src, dst)


def _records(key, seqs, bits, rng, iat_us, step, isn):
    if isn is None:
        isn = rng.getrandbits(bits)
    mask = (1 << bits) - 1
    ts = BASE_TS_US
    out = []
    for i, s in enumerate(seqs):
        ts += rng.randint(*iat_us)
        out.append(PduRecord(key, i, (isn + s * step) & mask, bits, ts))
    return out


def generate_covert(spec: CovertSpec, key: Optional[FlowKey] = None) -> SynthFlow:
    """Send positions 0..n*m-1, each group of n reordered by the payload.

    Returns the flow in arrival order together with the payload bits.
    """
    rng = random.Random(spec.seed)
    code = PermutationCode(spec.n, spec.packing)
    nbits = code.payload_bits(spec.m)
    bits = _int_to_bits(rng.getrandbits(nbits), nbits) if nbits else ""
    perms = code.encode(bits, spec.m)
    order = [g * spec.n + p for g, perm in enumerate(perms) for p in perm]
    key = key or flow_key(spec.n, 0, spec.seed, _transport(spec.seq_field_bits, None))
    recs = _records(key, order, spec.seq_field_bits, rng, spec.iat_us, spec.seq_step, spec.isn)
    return SynthFlow(key, recs, spec.label, spec.n, spec.m, spec.seed, bits)


def decode_covert(records: Sequence[PduRecord], n: int, packing: str = "radix") -> str:
    """Receiver side: recover payload bits from the arrival order, group by group."""
    if len(records) % n:
        raise ValueError("flow length %d is not a multiple of n=%d" % (len(records), n))
    bits = records[0].seq_field_bits if records else 32
    seqs = unwrap_sequences([p.seq_raw for p in records], bits)
    perms = []
    for g in range(0, len(seqs), n):
        ranks = rank_window(seqs[g:g + n])
        perms.append(tuple(r - 1 for r in ranks))
    return PermutationCode(n, packing).decode(perms)


def generate_legit(spec: LegitSpec, key: Optional[FlowKey] = None) -> SynthFlow:
    """Mostly in-order stream with occasional late packets and duplicates.

    A reordered packet arrives 1-3 slots after its send position; a
    retransmitted packet is sent again 1-3 slots later. Output is truncated
    to ``spec.length`` packets.
    """
    rng = random.Random(spec.seed)
    order = list(range(spec.length))
    i = 0
    while i < len(order):
        if rng.random() < spec.p_reorder:
            shift = rng.randint(1, 3)
            order.insert(min(i + shift, len(order) - 1), order.pop(i))
            i += shift
        i += 1
    out: List[int] = []
    pending: List[Tuple[int, int]] = []  # (due position, seq)
    for s in order:
        while pending and pending[0][0] <= len(out):
            out.append(heapq.heappop(pending)[1])
        out.append(s)
        if rng.random() < spec.p_retransmit:
            heapq.heappush(pending, (len(out) + rng.randint(1, 3), s))
    out.extend(s for _, s in sorted(pending))
    out = out[:spec.length]
    key = key or flow_key(0, 0, spec.seed, _transport(spec.seq_field_bits, None))
    recs = _records(key, out, spec.seq_field_bits, rng, spec.iat_us, spec.seq_step, spec.isn)
    return SynthFlow(key, recs, Label.LEGITIMATE, 0, 0, spec.seed)


# -- corpora ------------------------------------------------------------------

def flow_seed(master_seed: int, index: int) -> int:
    return master_seed ^ index


def _transport(bits: int, transport) -> Transport:
    if transport is None:
        return Transport.TCP if bits == 32 else Transport.GENERIC
    transport = Transport(transport)
    if transport is Transport.TCP and bits != 32:
        raise ValueError("TCP flows carry 32-bit sequence numbers")
    return transport


def covert_corpus(n: int, flows: int, master_seed: int, groups=(100, 4000), transport=None,
                  **kw) -> List[SynthFlow]:
    """``flows`` covert flows with group counts drawn from ``groups`` (inclusive range).

    The lower bound is raised to the smallest m that fills one 201-PDU window.
    """
    out = []
    min_m = -(-WINDOW_PACKETS // n)
    for i in range(flows):
        seed = flow_seed(master_seed, i)
        if isinstance(groups, int):
            m = groups
        else:
            m = random.Random(seed).randint(max(groups[0], min_m), max(groups[1], min_m))
        spec = CovertSpec(n=n, m=m, seed=seed, **kw)
        key = flow_key(n, i, master_seed, _transport(spec.seq_field_bits, transport))
        out.append(generate_covert(spec, key))
    return out


HEAVY_SHARE = 0.06
HEAVY_P_REORDER = (0.02, 0.45)


def legit_corpus(flows: int, master_seed: int, length: int = 300, heavy_share: float = HEAVY_SHARE,
                 heavy_p_reorder: Tuple[float, float] = HEAVY_P_REORDER, transport=None,
                 **kw) -> List[SynthFlow]:
    """Legitimate flows; a ``heavy_share`` of them sit on paths with heavy
    reordering, their p_reorder drawn uniformly from ``heavy_p_reorder``.
    Without that tail no legitimate flow ever scores below about 5."""
    out = []
    for i in range(flows):
        seed = flow_seed(master_seed, i)
        mix = random.Random("mix:%d" % seed)
        params = dict(kw)
        if mix.random() < heavy_share:
            params["p_reorder"] = mix.uniform(*heavy_p_reorder)
        spec = LegitSpec(length=length, seed=seed, **params)
        key = flow_key(0, i, master_seed, _transport(spec.seq_field_bits, transport))
        out.append(generate_legit(spec, key))
    return out


# -- output -------------------------------------------------------------------

def emit(flows: Sequence[SynthFlow], path, fmt: str = "pcap", payload_offset: int = 0) -> None:
    """Write flows as a pcap capture or as JSONL.

    In pcap mode, TCP-keyed flows become TCP segments whose header carries
    the sequence number; other flows become UDP datagrams with the sequence
    field (1 or 4 bytes, big-endian) at ``payload_offset``. Packets of all
    flows are merged by timestamp; per-flow order is preserved.
    """
    if not flows:
        raise ValueError("no flows to emit")
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8") as fh:
            for f in flows:
                fid = f.flow_id
                for p in f.records:
                    fh.write(json.dumps({"flow": fid, "i": p.arrival_index, "seq": p.seq_raw,
                                         "bits": p.seq_field_bits, "ts_us": p.timestamp}) + "\n")
        return
    if fmt != "pcap":
        raise ValueError("format must be 'pcap' or 'jsonl'")
    streams = [((p.timestamp, fi, p.arrival_index), p) for fi, f in enumerate(flows) for p in f.records]
    streams.sort(key=lambda t: t[0])
    with open(path, "wb") as fh:
        w = PcapWriter(fh)
        for ip_id, (_, p) in enumerate(streams):
            width = p.seq_field_bits // 8
            if p.flow.transport is Transport.TCP:
                frame = build_frame(p.flow.src, p.flow.dst, PROTO_TCP, b"\x00" * 8, tcp_seq=p.seq_raw,
                                    ip_id=ip_id)
            else:
                payload = bytes(payload_offset) + p.seq_raw.to_bytes(width, "big") + b"\x00" * 4
                frame = build_frame(p.flow.src, p.flow.dst, PROTO_UDP, payload, ip_id=ip_id)
            w.write(p.timestamp, frame)


LABEL_COLUMNS = ("flow_id", "label", "n", "m", "seed")


def write_labels(flows: Iterable[SynthFlow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for f in flows:
            w.writerow([f.flow_id, f.label.value, f.n, f.m, f.seed])


def read_labels(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["flow_id"]: Label(row["label"]) for row in csv.DictReader(fh)}
