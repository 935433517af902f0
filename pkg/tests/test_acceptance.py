"""Acceptance gate. Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL line per criterion."""
import random
from fractions import Fraction
from statistics import mean

import pytest

from oracles import max_gain_midpoint
from ordwarden.capture import ExtractorKind, SeqExtractor, ingest
from ordwarden.compress import compress_len
from ordwarden.detection import (NAMED_THRESHOLDS, STANDARD_THRESHOLDS, ThresholdModel, TreeParams, evaluate,
                                 sweep, train_tree)
from ordwarden.encoding import Coding, compute_diffs, encode, rank_window
from ordwarden.model import Label
from ordwarden.scoring import score_flow, score_flows
from ordwarden.synth import LegitSpec, capacity, covert_corpus, decode_covert, emit, generate_legit, legit_corpus

criterion = pytest.mark.criterion

# Only the first window is scored, so long covert flows add generation time
# without changing kappa.
GROUPS = (100, 400)
CORPUS = 720


def scored(flows):
    scores, short = score_flows({f.key: f.records for f in flows}, labels={f.flow_id: f.label for f in flows})
    assert not short
    return scores


@pytest.fixture(scope="session")
def legit_scores():
    return scored(legit_corpus(CORPUS, 20240))


@pytest.fixture(scope="session")
def covert_scores():
    return {n: scored(covert_corpus(n, CORPUS, 1000 + n, groups=GROUPS)) for n in (2, 3, 4)}


@criterion(1, "compressor anchor: in-order flow gives |S|=400, |C|=27")
def test_c1_compressor_anchor():
    flow = generate_legit(LegitSpec(201, 1, p_reorder=0, p_retransmit=0))
    s, = score_flow(flow.records)
    assert (s.s_len, s.c_len) == (400, 27)
    assert s.kappa == Fraction(400, 27)
    assert compress_len(encode([1] * 200, Coding.C4)) == 27
    assert f"{float(s.kappa):.5f}" == "14.81481"


@criterion(2, "worked diff example")
def test_c2_worked_example():
    ranks = rank_window([100, 120, 160, 140])
    assert ranks == [1, 2, 4, 3]
    assert compute_diffs(ranks)[0] == [1, 2, -1]


@criterion(3, "capacity formulas")
def test_c3_capacity():
    assert round(capacity(4, 500).theoretical, 1) == 2292.5
    assert round(capacity(5, 400).theoretical, 1) == 2762.8


@criterion(4, "class-mean ordering and covert means within 25%")
def test_c4_class_means(legit_scores, covert_scores):
    means = {"legit": mean(float(s.kappa) for s in legit_scores)}
    means.update({n: mean(float(s.kappa) for s in covert_scores[n]) for n in (2, 3, 4)})
    print("class means:", {k: round(v, 3) for k, v in means.items()})
    assert means["legit"] > means[2] > means[3] > means[4]
    for n, ref in ((2, 3.983), (3, 2.621), (4, 2.259)):
        assert abs(means[n] - ref) <= 0.25 * ref, (n, means[n], ref)


@pytest.mark.parametrize("n,name,acc_min,f1_min", [
    (4, "4pdu-c45", Fraction(99, 100), Fraction(99, 100)),
    (3, "3pdu-c45", Fraction(99, 100), Fraction(99, 100)),
    (2, "2pdu", Fraction(92, 100), None),
])
@criterion(5, "detectability on the synthetic corpus")
def test_c5_detectability(legit_scores, covert_scores, n, name, acc_min, f1_min):
    report = evaluate(ThresholdModel(NAMED_THRESHOLDS[name]), legit_scores + covert_scores[n])
    print(name, report.as_row())
    assert report.cm.total == 2 * CORPUS
    assert report.accuracy >= acc_min
    if f1_min is not None:
        assert report.f1 >= f1_min


@criterion(6, "FPR monotone over the threshold sweep and small at 2.75")
def test_c6_fpr(legit_scores, covert_scores):
    data = legit_scores + covert_scores[3]
    rows = sweep(data, STANDARD_THRESHOLDS)
    fprs = [r.fpr for r in rows]
    assert len(fprs) == 32
    assert all(a <= b for a, b in zip(fprs, fprs[1:]))
    at = {r.threshold: r.fpr for r in rows}
    low, high = at[Fraction(11, 4)], at[Fraction(23, 5)]
    print("FPR(2.75)=%.3f%% FPR(4.6)=%.3f%%" % (100 * low, 100 * high))
    assert low < high
    assert low <= Fraction(2, 100)


@criterion(7, "depth-1 tree split equals the exhaustive max-gain midpoint")
def test_c7_tree_oracle():
    rng = random.Random(7)
    checked = 0
    for _ in range(50):
        size = rng.randint(4, 64)
        pool = [Fraction(rng.randint(200, 1500), 100) for _ in range(rng.randint(2, size))]
        points = [(rng.choice(pool), rng.random() < 0.5) for _ in range(size)]
        if len({c for _, c in points}) < 2:
            points[0] = (points[0][0], not points[0][1])
        data = [(k, Label.COVERT3 if c else Label.LEGITIMATE) for k, c in points]
        best = max_gain_midpoint(points, 1e-12)
        if best is None:
            continue
        tree = train_tree(data, TreeParams(max_depth=1, min_leaf=1, prune=False))
        assert tree.root.split == best[0]
        assert tree.root.gain == pytest.approx(best[1], abs=1e-9)
        checked += 1
    assert checked >= 45


@criterion(8, "pcap round trip preserves scores and covert payloads")
def test_c8_round_trip(tmp_path):
    flows = []
    for n in (2, 3, 4):
        flows += covert_corpus(n, 25, 800 + n, groups=(110, 160), seq_field_bits=32)
    flows += legit_corpus(25, 880)
    assert len(flows) == 100
    path = tmp_path / "rt.pcap"
    emit(flows, path)
    got, stats = ingest(path, SeqExtractor(ExtractorKind.TCP32))
    assert stats.flows_with_window == 100
    direct = scored(flows)
    via_pcap, short = score_flows(got, labels={f.flow_id: f.label for f in flows})
    assert not short and via_pcap == direct
    for f in flows:
        if f.label.is_covert:
            assert decode_covert(got[f.key], f.n) == f.bits


@criterion(9, "degenerate regime: TP=0 gives F1=0 at theta 2.5 on 2-PDU")
def test_c9_degenerate(legit_scores, covert_scores):
    report = evaluate(ThresholdModel(Fraction(5, 2)), legit_scores + covert_scores[2])
    print("theta 2.5, 2-PDU:", report.as_row())
    assert report.cm.tp == 0
    assert report.recall == 0
    assert report.f1 == 0
