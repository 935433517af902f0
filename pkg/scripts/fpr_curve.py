#!/usr/bin/env python3
"""False-positive rate of synthetic legitimate traffic across the standard sweep."""
import argparse

from fractions import Fraction

from ordwarden.detection import STANDARD_THRESHOLDS, ThresholdModel, fmt_number, pct
from ordwarden.model import Verdict
from ordwarden.scoring import score_flows
from ordwarden.synth import legit_corpus


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--flows", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--heavy-share", type=float, default=None, help="override the heavy-reordering share")
    args = ap.parse_args(argv)
    kw = {} if args.heavy_share is None else {"heavy_share": args.heavy_share}
    flows = legit_corpus(args.flows, args.seed, **kw)
    scores, _ = score_flows({f.key: f.records for f in flows})
    print("theta,fpr")
    for theta in STANDARD_THRESHOLDS:
        model = ThresholdModel(theta)
        fp = sum(1 for s in scores if model.classify(s.kappa) is Verdict.COVERT)
        print("%s,%s" % (fmt_number(theta), pct(Fraction(fp, len(scores)))))


if __name__ == "__main__":
    main()
