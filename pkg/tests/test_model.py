from fractions import Fraction

import pytest

from ordwarden.model import (
    FlowKey,
    Label,
    NonMonotonicArrival,
    OrderWindow,
    PduRecord,
    ScoredFlow,
    SeqOutOfRange,
    Transport,
    Verdict,
    validate_flow,
    validate_pdu,
)

KEY = FlowKey.directed("tcp", ("10.0.0.2", 4000), ("10.0.0.1", 80))


def rec(seq, bits=8, i=0):
    return PduRecord(KEY, i, seq, bits)


def test_validate_pdu_boundaries():
    assert validate_pdu(rec(255)) == rec(255)
    with pytest.raises(SeqOutOfRange):
        validate_pdu(rec(256))
    assert validate_pdu(rec(2**32 - 1, 32)).seq_raw == 2**32 - 1


def test_validate_pdu_rejects_regressing_arrival():
    with pytest.raises(NonMonotonicArrival):
        validate_pdu(rec(1, i=3), rec(0, i=3))
    with pytest.raises(NonMonotonicArrival):
        validate_flow([rec(1, i=1), rec(2, i=0)])


def test_flow_key_normalizes_direction():
    assert KEY.reverse
    assert KEY.endpoint_a == ("10.0.0.1", 80)
    assert KEY.src == ("10.0.0.2", 4000)
    other = FlowKey.directed("tcp", ("10.0.0.1", 80), ("10.0.0.2", 4000))
    assert not other.reverse and other != KEY
    assert FlowKey.from_id(KEY.flow_id) == KEY


def test_flow_key_rejects_identical_endpoints():
    with pytest.raises(ValueError):
        FlowKey.directed(Transport.TCP, ("h", 1), ("h", 1))


def test_opaque_flow_ids_round_trip():
    key = FlowKey.from_id("capture-7")
    assert str(key) == "capture-7"
    assert FlowKey.from_id(str(key)) == key


def test_scored_flow_kappa_is_exact_ratio():
    s = ScoredFlow(KEY, "c4", 400, 27)
    assert s.kappa == Fraction(400, 27)
    with pytest.raises(ValueError):
        ScoredFlow(KEY, "c4", 0, 27)


def test_labels_collapse_to_binary_verdicts():
    assert Label.LEGITIMATE.verdict is Verdict.LEGITIMATE
    assert all(Label.for_group_size(n).verdict is Verdict.COVERT for n in (2, 3, 4))


def test_order_window_shape_is_checked():
    ranks = tuple(range(1, 202))
    OrderWindow(KEY, ranks, (1,) * 200)
    OrderWindow(KEY, ranks, (1,) * 197, dropped_overruns=3)
    with pytest.raises(ValueError):
        OrderWindow(KEY, ranks, (1,) * 199)
