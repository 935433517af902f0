"""Turn a window of sequence numbers into ranks, order differences and a coding string."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

from .model import WINDOW_PACKETS, OrderWindow, PduRecord

OVERRUN_FACTOR = 5


class Coding(str, enum.Enum):
    C1 = "c1"  # str(diff)
    C2 = "c2"  # str(|diff|)
    C3 = "c3"  # str(diff) + parity letter
    C4 = "c4"  # str(|diff|) + parity letter

    @property
    def absolute(self) -> bool:
        return self in (Coding.C2, Coding.C4)

    @property
    def parity(self) -> bool:
        return self in (Coding.C3, Coding.C4)


DEFAULT_CODING = Coding.C4


class OverrunFilter(str, enum.Enum):
    """How compute_diffs suppresses suspicious jumps.

    SIGNED evaluates ``olddiff > diff * 5`` on signed values, which drops
    every backward step that follows a forward one. MAGNITUDE drops a diff
    whose absolute value exceeds five times the previous retained one.
    """

    NONE = "none"
    SIGNED = "signed"
    MAGNITUDE = "magnitude"


DEFAULT_FILTER = OverrunFilter.SIGNED


def unwrap_sequences(seqs: Sequence[int], bits: int) -> list:
    """Undo counter wraparound so values compare in true send order.

    A raw step is treated as a wrap when it goes backwards by more than half
    the counter space and by more than five times the last forward step.
    A late packet from before a wrap shows up as the mirror image (a forward
    jump of more than half the space) and is shifted back by one modulus.
    """
    if not seqs:
        return []
    modulus = 1 << bits
    half = modulus >> 1
    offset = 0
    out = [seqs[0]]
    last_forward = None
    prev = seqs[0]
    for raw in seqs[1:]:
        step = raw - prev
        big = last_forward is None or abs(step) > OVERRUN_FACTOR * last_forward
        if step < -half and big:
            offset += modulus
        elif step > half and big:
            offset -= modulus
        elif step > 0:
            last_forward = step
        out.append(raw + offset)
        prev = raw
    return out


def rank_window(seqs: Sequence[int]) -> list:
    """1-based stable ranks: equal values rank by arrival."""
    order = sorted(range(len(seqs)), key=lambda i: (seqs[i], i))
    ranks = [0] * len(seqs)
    for r, i in enumerate(order, 1):
        ranks[i] = r
    return ranks


def compute_diffs(ranks: Sequence[int], overrun_filter=OverrunFilter.NONE):
    """Differences between consecutive ranks.

    Returns ``(diffs, dropped)``. A dropped diff is neither emitted nor used
    as the reference for the next comparison.
    """
    if len(ranks) < 2:
        raise ValueError("need at least two ranks")
    mode = OverrunFilter(overrun_filter)
    diffs = []
    dropped = 0
    olddiff: Optional[int] = None
    for prev, cur in zip(ranks, ranks[1:]):
        diff = cur - prev
        if olddiff is not None:
            if mode is OverrunFilter.SIGNED and olddiff > diff * OVERRUN_FACTOR:
                dropped += 1
                continue
            if mode is OverrunFilter.MAGNITUDE and abs(diff) > OVERRUN_FACTOR * abs(olddiff):
                dropped += 1
                continue
        diffs.append(diff)
        olddiff = diff
    return diffs, dropped


def token(diff: int, coding: Coding) -> str:
    value = abs(diff) if coding.absolute else diff
    text = str(value)
    if coding.parity:
        text += "A" if abs(diff) % 2 == 1 else "B"
    return text


def encode(diffs: Sequence[int], coding=DEFAULT_CODING) -> bytes:
    if not diffs:
        raise ValueError("cannot encode an empty diff list")
    coding = Coding(coding)
    return "".join(token(d, coding) for d in diffs).encode("ascii")


@dataclass(frozen=True)
class EncodedWindow:
    window: OrderWindow
    coding: Coding
    s: bytes


def build_window(records: Sequence[PduRecord], overrun_filter=DEFAULT_FILTER) -> OrderWindow:
    """Reduce exactly 201 records of one flow to an OrderWindow."""
    if len(records) != WINDOW_PACKETS:
        raise ValueError("window needs %d records, got %d" % (WINDOW_PACKETS, len(records)))
    bits = records[0].seq_field_bits
    unwrapped = unwrap_sequences([p.seq_raw for p in records], bits)
    ranks = rank_window(unwrapped)
    diffs, dropped = compute_diffs(ranks, overrun_filter)
    return OrderWindow(records[0].flow, tuple(ranks), tuple(diffs), dropped)


def encode_window(window: OrderWindow, coding=DEFAULT_CODING) -> EncodedWindow:
    coding = Coding(coding)
    return EncodedWindow(window, coding, encode(window.diffs, coding))
