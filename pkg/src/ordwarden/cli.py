"""Command line entry point: generate, score, detect, train, evaluate."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import detection as det
from .capture import (
    BadCapture,
    ExtractorKind,
    NoUsableFlows,
    SeqExtractor,
    ingest,
    parse_window_mode,
)
from .encoding import Coding, OverrunFilter
from .model import WINDOW_PACKETS, Label, OrdwardenError, Verdict
from .scoring import ScoreConfig, read_scores, score_flows, write_scores
from .synth import covert_corpus, emit, legit_corpus, read_labels, write_labels

log = logging.getLogger("ordwarden")

EXIT_OK = 0
EXIT_POSITIVES = 1
EXIT_USAGE = 2

METRICS_SCHEMA = "#schema=ordwarden-metrics/1"
VERDICTS_SCHEMA = "#schema=ordwarden-verdicts/1"
METRIC_COLUMNS = ("threshold", "tp", "fp", "tn", "fn", "precision", "recall", "accuracy", "f1", "fpr")


class UsageError(Exception):
    pass


def _range(text: str):
    lo, sep, hi = text.partition(":")
    return (int(lo), int(hi)) if sep else int(lo)


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


def _theta(text: str) -> Fraction:
    if text in det.NAMED_THRESHOLDS:
        return det.NAMED_THRESHOLDS[text]
    return Fraction(text)


# -- generate -------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.seed is None:
        raise UsageError("--seed is required for generate")
    if args.flows < 1:
        raise UsageError("--flows must be >= 1")
    bits = 32 if args.transport == "tcp" else args.bits
    if args.transport == "tcp" and args.bits == 8:
        raise UsageError("TCP carries 32-bit sequence numbers; use --transport udp for --bits 8")
    transport = "tcp" if args.transport == "tcp" else "generic"
    if args.covert:
        if args.n is None:
            raise UsageError("--covert needs --n")
        flows = covert_corpus(args.n, args.flows, args.seed, groups=_range(args.groups), transport=transport,
                              seq_field_bits=bits, packing=args.packing)
    else:
        kw = {}
        if args.p_reorder is not None:
            kw["p_reorder"] = args.p_reorder
        if args.p_retransmit is not None:
            kw["p_retransmit"] = args.p_retransmit
        if args.heavy_share is not None:
            kw["heavy_share"] = args.heavy_share
        flows = legit_corpus(args.flows, args.seed, length=args.length, transport=transport,
                             seq_field_bits=bits, **kw)
    out = Path(args.output)
    fmt = args.format or ("jsonl" if out.suffix == ".jsonl" else "pcap")
    emit(flows, out, fmt, payload_offset=args.payload_offset)
    labels = Path(args.labels) if args.labels else out.with_name(out.name + ".labels.csv")
    write_labels(flows, labels)
    log.info("wrote %d flows to %s (labels: %s)", len(flows), out, labels)
    return EXIT_OK


# -- score ----------------------------------------------------------------------

def cmd_score(args) -> int:
    mode, stride = parse_window_mode(args.window)
    config = ScoreConfig(Coding(args.coding), OverrunFilter(args.filter), mode, stride)
    extractor = SeqExtractor(ExtractorKind(args.extractor), args.offset, not args.skip_empty)
    labels = {}
    for path in args.labels or []:
        labels.update(read_labels(path))
    scores = []
    for path in args.inputs:
        flows, stats = ingest(path, extractor, require_window=False)
        log.info("%s: %d packets, %d flows, %d with a full window, %d skipped", path, stats.packets_read,
                 stats.flows_seen, stats.flows_with_window, stats.packets_skipped)
        got, short = score_flows(flows, config, labels)
        for key in short:
            print("warning: flow %s has %d PDUs (< %d), not scored" % (key, len(flows[key]), WINDOW_PACKETS),
                  file=sys.stderr)
        scores.extend(got)
    if not scores:
        raise NoUsableFlows("no flow in the input reaches %d PDUs" % WINDOW_PACKETS)
    scores.sort(key=lambda s: (s.flow_id, s.window))
    fh, close = _open_out(args.output)
    try:
        write_scores(scores, fh)
    finally:
        if close:
            fh.close()
    return EXIT_OK


# -- detect ---------------------------------------------------------------------

def _summary(report: det.MetricsReport, name: str) -> str:
    r = report
    return ("%s: tp=%d fp=%d tn=%d fn=%d precision=%s recall=%s accuracy=%s f1=%s fpr=%s"
            % (name, r.cm.tp, r.cm.fp, r.cm.tn, r.cm.fn, *(det.pct(getattr(r, m)) or "n/a" for m in det.METRIC_NAMES)))


def cmd_detect(args) -> int:
    model = det.ThresholdModel(_theta(args.theta)) if args.theta is not None else det.load_model(args.model)
    scores = read_scores(args.scores)
    fh, close = _open_out(args.output)
    positives = 0
    try:
        fh.write(VERDICTS_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("flow_id", "window", "kappa", "verdict", "label"))
        for s in scores:
            v = det.classify(s, model)
            positives += v is Verdict.COVERT
            w.writerow((s.flow_id, s.window, "%.5f" % float(s.kappa), v.value, s.label.value if s.label else ""))
    finally:
        if close:
            fh.close()
    labelled = [s for s in scores if s.label is not None]
    if labelled:
        print(_summary(det.evaluate(model, labelled), "summary"), file=sys.stderr)
    print("%d of %d windows flagged covert" % (positives, len(scores)), file=sys.stderr)
    return EXIT_POSITIVES if positives else EXIT_OK


# -- train / evaluate --------------------------------------------------------------

def _labelled_scores(path, covert_label=None):
    scores = [s for s in read_scores(path) if s.label is not None]
    if covert_label:
        keep = Label(covert_label)
        scores = [s for s in scores if s.label in (Label.LEGITIMATE, keep)]
    if not scores:
        raise UsageError("%s holds no labelled rows" % path)
    return scores


def _tree_params(args) -> det.TreeParams:
    return det.TreeParams(args.max_depth, args.min_leaf, not args.no_prune, args.seed)


def cmd_train(args) -> int:
    scores = _labelled_scores(args.scores, args.covert_label)
    params = _tree_params(args)
    model = det.train_tree(scores, params)
    det.save_model(model, args.output)
    splits = ", ".join("%.5f" % float(x) for x in model.root.splits()) or "none"
    print("tree: depth %d, %d nodes, splits: %s" % (model.root.depth(), model.root.size(), splits), file=sys.stderr)
    print(_summary(det.evaluate(model, scores), "training"), file=sys.stderr)
    if args.cv:
        cv = det.cross_validate(scores, args.cv, params, args.seed)
        print("cv(%d): accuracy=%s f1=%s fpr=%s" % (args.cv, det.pct(cv.accuracy), det.pct(cv.f1), det.pct(cv.fpr)),
              file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    scores = _labelled_scores(args.scores, args.covert_label)
    if args.thresholds in ("standard", "paper"):
        thresholds = det.STANDARD_THRESHOLDS
    else:
        thresholds = [_theta(t.strip()) for t in args.thresholds.split(",") if t.strip()]
    reports = det.sweep(scores, thresholds)
    fh, close = _open_out(args.output)
    try:
        fh.write(METRICS_SCHEMA + "\n")
        w = csv.DictWriter(fh, METRIC_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(r.as_row())
    finally:
        if close:
            fh.close()
    if args.cv:
        cv = det.cross_validate(scores, args.cv, _tree_params(args), args.seed)
        print("c4.5 cv(%d): accuracy=%s f1=%s fpr=%s" % (args.cv, det.pct(cv.accuracy), det.pct(cv.f1),
                                                         det.pct(cv.fpr)), file=sys.stderr)
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def _add_tree_args(p):
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-leaf", type=int, default=2)
    p.add_argument("--no-prune", action="store_true", help="grow the full (over-fitted) tree")
    p.add_argument("--seed", type=int, default=0, help="seed for pruning holdout and CV folds")
    p.add_argument("--covert-label", choices=[l.value for l in Label if l.is_covert],
                   help="keep only legitimate rows and this covert class")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ordwarden", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize labelled covert or legitimate flows")
    kind = g.add_mutually_exclusive_group(required=True)
    kind.add_argument("--covert", action="store_true")
    kind.add_argument("--legit", action="store_true")
    g.add_argument("--n", type=int, choices=(2, 3, 4, 5), help="PDUs per covert group")
    g.add_argument("--groups", default="100:4000", help="groups per covert flow, M or LO:HI")
    g.add_argument("--flows", type=int, default=1)
    g.add_argument("--length", type=int, default=300, help="packets per legitimate flow")
    g.add_argument("--seed", type=int)
    g.add_argument("--transport", choices=("tcp", "udp"), default="tcp")
    g.add_argument("--bits", type=int, choices=(8, 32), default=32, help="sequence field width (udp only)")
    g.add_argument("--packing", choices=("radix", "block"), default="radix")
    g.add_argument("--p-reorder", type=float)
    g.add_argument("--p-retransmit", type=float)
    g.add_argument("--heavy-share", type=float)
    g.add_argument("--payload-offset", type=int, default=0)
    g.add_argument("--format", choices=("pcap", "jsonl"))
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--labels", help="label CSV path (default: OUTPUT.labels.csv)")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("score", help="compute kappa per flow window")
    s.add_argument("inputs", nargs="+", help="pcap or JSONL files")
    s.add_argument("--extractor", choices=[k.value for k in ExtractorKind], default="tcp32")
    s.add_argument("--offset", type=int, default=0, help="payload offset for generic extractors")
    s.add_argument("--skip-empty", action="store_true", help="ignore TCP segments without payload")
    s.add_argument("--coding", choices=[c.value for c in Coding], default="c4")
    s.add_argument("--filter", choices=[f.value for f in OverrunFilter], default="signed")
    s.add_argument("--window", default="first", help="first | sliding[:STRIDE]")
    s.add_argument("--labels", action="append", help="label CSV(s) to attach ground truth")
    s.add_argument("-o", "--output", default="-")
    s.set_defaults(func=cmd_score)

    d = sub.add_parser("detect", help="classify scored flows")
    d.add_argument("--scores", required=True)
    which = d.add_mutually_exclusive_group(required=True)
    which.add_argument("--theta", help="kappa threshold or a named one (%s)" % ", ".join(det.NAMED_THRESHOLDS))
    which.add_argument("--model", help="model JSON from 'train'")
    d.add_argument("-o", "--output", default="-")
    d.set_defaults(func=cmd_detect)

    t = sub.add_parser("train", help="learn a decision tree over kappa")
    t.add_argument("--scores", required=True)
    _add_tree_args(t)
    t.add_argument("--cv", type=int, default=0, help="also report k-fold cross-validation")
    t.add_argument("-o", "--output", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="threshold sweep metrics")
    e.add_argument("--scores", required=True)
    e.add_argument("--thresholds", default="standard", help="'standard' (the 32-value sweep) or a comma list")
    _add_tree_args(e)
    e.add_argument("--cv", type=int, default=0, help="also cross-validate a tree with this many folds")
    e.add_argument("-o", "--output", default="-")
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, OrdwardenError, ValueError, FileNotFoundError, BadCapture) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
