"""Threshold and single-feature decision-tree classifiers over kappa, plus metrics."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .model import Label, OrdwardenError, ScoredFlow, Verdict

log = logging.getLogger(__name__)

MODEL_VERSION = 1
GAIN_TOL = 1e-12

# Thresholds swept in the original evaluation.
STANDARD_THRESHOLDS = tuple(Fraction(t) for t in (
    "2", "2.5", "2.75", "3", "3.25", "3.5", "3.75", "3.9", "4", "4.025", "4.05", "4.075", "4.1",
    "4.15", "4.2", "4.25", "4.3", "4.4", "4.5", "4.6", "4.7", "4.8", "4.9", "5", "5.5", "6", "7",
    "8", "9", "10", "11", "12"))

NAMED_THRESHOLDS = {
    "2pdu": Fraction("4.6"),
    "3pdu": Fraction("3.0"),
    "4pdu": Fraction("2.75"),
    "mixture": Fraction("4.5"),
    "3pdu-c45": Fraction("2.88659"),
    "4pdu-c45": Fraction("2.59047"),
}


class DegenerateLabels(OrdwardenError, ValueError):
    pass


class TooFewSamples(OrdwardenError, ValueError):
    pass


def as_fraction(x) -> Fraction:
    """Exact value of a threshold; floats go through their shortest repr."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def is_covert(label) -> bool:
    if isinstance(label, Label):
        return label.is_covert
    if isinstance(label, Verdict):
        return label is Verdict.COVERT
    if isinstance(label, bool):
        return label
    return Label(label).is_covert


# -- models --------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdModel:
    """covert iff kappa < theta; a tie counts as legitimate."""

    theta: Fraction
    training_meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        theta = as_fraction(self.theta)
        if not 0 < theta < 15:
            raise ValueError("theta must lie in (0, 15), got %s" % theta)
        object.__setattr__(self, "theta", theta)

    def classify(self, kappa) -> Verdict:
        return Verdict.COVERT if as_fraction(kappa) < self.theta else Verdict.LEGITIMATE


@dataclass
class Node:
    """Tree node. Internal nodes send ``kappa < split`` left."""

    verdict: Verdict
    covert: int = 0
    legit: int = 0
    split: Optional[Fraction] = None
    left: Optional["Node"] = None
    right: Optional["Node"] = None
    gain: float = 0.0
    gain_ratio: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def leaf(self) -> "Node":
        return Node(self.verdict, self.covert, self.legit)

    def depth(self) -> int:
        return 0 if self.is_leaf else 1 + max(self.left.depth(), self.right.depth())

    def size(self) -> int:
        return 1 if self.is_leaf else 1 + self.left.size() + self.right.size()

    def splits(self) -> List[Fraction]:
        if self.is_leaf:
            return []
        return self.left.splits() + [self.split] + self.right.splits()


@dataclass(frozen=True)
class TreeParams:
    max_depth: Optional[int] = None
    min_leaf: int = 2
    prune: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass
class TreeModel:
    root: Node
    params: TreeParams = TreeParams()
    training_meta: dict = field(default_factory=dict)

    def classify(self, kappa) -> Verdict:
        k = as_fraction(kappa)
        node = self.root
        while not node.is_leaf:
            node = node.left if k < node.split else node.right
        return node.verdict

    def as_threshold(self) -> Optional[ThresholdModel]:
        """The equivalent ThresholdModel for a covert-left stump, else None."""
        r = self.root
        if (not r.is_leaf and r.left.is_leaf and r.right.is_leaf
                and r.left.verdict is Verdict.COVERT and r.right.verdict is Verdict.LEGITIMATE):
            return ThresholdModel(r.split, dict(self.training_meta))
        return None


Model = Union[ThresholdModel, TreeModel]


def classify(scored, model: Model) -> Verdict:
    kappa = scored.kappa if isinstance(scored, ScoredFlow) else scored
    if isinstance(kappa, float) and not math.isfinite(kappa):
        raise ValueError("kappa must be finite")
    return model.classify(kappa)


# -- metrics -------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def tally(cls, truth: Iterable[bool], predicted: Iterable[bool]) -> "ConfusionMatrix":
        tp = fp = tn = fn = 0
        for t, p in zip(truth, predicted):
            if p:
                tp, fp = (tp + 1, fp) if t else (tp, fp + 1)
            else:
                fn, tn = (fn + 1, tn) if t else (fn, tn + 1)
        return cls(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> Optional[Fraction]:
    return Fraction(num, den) if den else None


@dataclass(frozen=True)
class MetricsReport:
    """Exact metrics for one confusion matrix; None marks an undefined ratio."""

    cm: ConfusionMatrix
    threshold: Optional[Fraction] = None

    @property
    def precision(self) -> Optional[Fraction]:
        return _ratio(self.cm.tp, self.cm.tp + self.cm.fp)

    @property
    def recall(self) -> Optional[Fraction]:
        return _ratio(self.cm.tp, self.cm.tp + self.cm.fn)

    @property
    def accuracy(self) -> Optional[Fraction]:
        return _ratio(self.cm.tp + self.cm.tn, self.cm.total)

    @property
    def f1(self) -> Optional[Fraction]:
        # 2pr/(p+r) rewritten in counts: stays defined (as 0) when TP = 0
        return _ratio(2 * self.cm.tp, 2 * self.cm.tp + self.cm.fp + self.cm.fn)

    @property
    def fpr(self) -> Optional[Fraction]:
        return _ratio(self.cm.fp, self.cm.fp + self.cm.tn)

    def as_row(self) -> dict:
        row = {"threshold": "" if self.threshold is None else fmt_number(self.threshold),
               "tp": self.cm.tp, "fp": self.cm.fp, "tn": self.cm.tn, "fn": self.cm.fn}
        for name in METRIC_NAMES:
            row[name] = pct(getattr(self, name))
        return row


METRIC_NAMES = ("precision", "recall", "accuracy", "f1", "fpr")


def metrics(cm: ConfusionMatrix, threshold=None) -> MetricsReport:
    if cm.total <= 0:
        raise ValueError("empty confusion matrix")
    return MetricsReport(cm, None if threshold is None else as_fraction(threshold))


def pct(value: Optional[Fraction]) -> str:
    """Percentage with three decimals, or empty for an undefined metric."""
    return "" if value is None else "%.3f" % (float(value) * 100)


def fmt_number(x) -> str:
    f = float(x)
    return repr(f) if f != int(f) else str(int(f))


# -- labelled data ---------------------------------------------------------------

Sample = Tuple[Fraction, bool]


def labelled(data) -> List[Sample]:
    """Normalize ScoredFlows or ``(kappa, label)`` pairs to ``(Fraction, is_covert)``."""
    out = []
    for item in data:
        if isinstance(item, ScoredFlow):
            if item.label is None:
                raise ValueError("flow %s has no label" % item.flow_id)
            out.append((item.kappa, item.label.is_covert))
        else:
            k, lab = item
            out.append((as_fraction(k), is_covert(lab)))
    return out


def _require_both(samples: Sequence[Sample]):
    pos = sum(1 for _, c in samples if c)
    if pos == 0 or pos == len(samples):
        raise DegenerateLabels("need both covert and legitimate samples (%d of %d covert)" % (pos, len(samples)))
    return pos, len(samples) - pos


def evaluate(model: Model, data) -> MetricsReport:
    samples = labelled(data)
    cm = ConfusionMatrix.tally((c for _, c in samples),
                               (model.classify(k) is Verdict.COVERT for k, _ in samples))
    return metrics(cm, model.theta if isinstance(model, ThresholdModel) else None)


def sweep(data, thresholds: Sequence = STANDARD_THRESHOLDS) -> List[MetricsReport]:
    """One MetricsReport per threshold over a labelled set."""
    samples = labelled(data)
    _require_both(samples)
    ks = sorted(samples)
    reports = []
    for theta in thresholds:
        theta = as_fraction(theta)
        cm = ConfusionMatrix.tally((c for _, c in ks), (k < theta for k, _ in ks))
        reports.append(MetricsReport(cm, theta))
    return reports


# -- tree learning ------------------------------------------------------------------

def entropy(pos: int, neg: int) -> float:
    n = pos + neg
    h = 0.0
    for c in (pos, neg):
        if c:
            p = c / n
            h -= p * math.log2(p)
    return h


def split_gain(lpos: int, lneg: int, rpos: int, rneg: int) -> Tuple[float, float]:
    """Information gain and gain ratio of a binary split."""
    nl, nr = lpos + lneg, rpos + rneg
    n = nl + nr
    gain = entropy(lpos + rpos, lneg + rneg) - (nl / n) * entropy(lpos, lneg) - (nr / n) * entropy(rpos, rneg)
    info = entropy(nl, nr)
    return gain, (gain / info if info > 0 else 0.0)


def _groups(samples: Sequence[Sample]) -> List[Tuple[Fraction, int, int]]:
    """Distinct kappa values in ascending order with their (covert, legit) counts."""
    groups: List[Tuple[Fraction, int, int]] = []
    for k, c in sorted(samples, key=lambda s: s[0]):
        if groups and groups[-1][0] == k:
            v, p, q = groups[-1]
            groups[-1] = (v, p + c, q + (not c))
        else:
            groups.append((k, int(c), int(not c)))
    return groups


def best_split(samples: Sequence[Sample], min_leaf: int = 1):
    """Maximal-information-gain cut among boundary midpoints.

    Candidates are midpoints between adjacent distinct values unless both
    values carry a single, identical class. Ties go to the smallest cut.
    Returns ``(split, gain, gain_ratio)`` or None when no admissible cut exists.
    """
    groups = _groups(samples)
    tot_p = sum(g[1] for g in groups)
    tot_n = sum(g[2] for g in groups)
    best = None
    lp = ln = 0
    for (v, p, q), (w, p2, q2) in zip(groups, groups[1:]):
        lp += p
        ln += q
        if (p == 0 and p2 == 0) or (q == 0 and q2 == 0):
            continue  # same single class on both sides
        if lp + ln < min_leaf or (tot_p - lp) + (tot_n - ln) < min_leaf:
            continue
        gain, ratio = split_gain(lp, ln, tot_p - lp, tot_n - ln)
        if best is None or gain > best[1] + GAIN_TOL:
            best = ((v + w) / 2, gain, ratio)
    return best


def _majority(pos: int, neg: int) -> Verdict:
    return Verdict.COVERT if pos > neg else Verdict.LEGITIMATE


def _grow(samples: Sequence[Sample], params: TreeParams, depth: int) -> Node:
    pos = sum(1 for _, c in samples if c)
    neg = len(samples) - pos
    node = Node(_majority(pos, neg), pos, neg)
    if pos == 0 or neg == 0:
        return node
    if params.max_depth is not None and depth >= params.max_depth:
        return node
    if len(samples) < 2 * params.min_leaf:
        return node
    found = best_split(samples, params.min_leaf)
    if found is None or found[1] <= GAIN_TOL:
        return node
    split, gain, ratio = found
    node.split, node.gain, node.gain_ratio = split, gain, ratio
    node.left = _grow([s for s in samples if s[0] < split], params, depth + 1)
    node.right = _grow([s for s in samples if s[0] >= split], params, depth + 1)
    return node


def _errors(node: Node, samples: Sequence[Sample]) -> int:
    tree = TreeModel(node)
    return sum(1 for k, c in samples if (tree.classify(k) is Verdict.COVERT) != c)


def _prune(node: Node, samples: Sequence[Sample]) -> Node:
    """Reduced-error pruning, bottom-up, on held-out samples."""
    if node.is_leaf:
        return node
    node.left = _prune(node.left, [s for s in samples if s[0] < node.split])
    node.right = _prune(node.right, [s for s in samples if s[0] >= node.split])
    as_leaf = sum(1 for _, c in samples if (node.verdict is Verdict.COVERT) != c)
    if as_leaf <= _errors(node, samples):
        return node.leaf()
    return node


def stratified_folds(samples: Sequence[Sample], folds: int, seed: int) -> List[int]:
    """Fold index per sample; classes are shuffled then dealt round-robin."""
    rng = random.Random(seed)
    pos = [i for i, (_, c) in enumerate(samples) if c]
    neg = [i for i, (_, c) in enumerate(samples) if not c]
    rng.shuffle(pos)
    rng.shuffle(neg)
    assign = [0] * len(samples)
    for slot, i in enumerate(pos + neg):
        assign[i] = slot % folds
    return assign


def train_tree(data, params: TreeParams = TreeParams()) -> TreeModel:
    """Grow a binary tree over kappa, C4.5-style.

    Cut points maximize information gain (C4.5's rule for a continuous
    attribute); the gain ratio is recorded on each node. With
    ``params.prune`` a stratified third of the data is held out for
    reduced-error pruning.
    """
    samples = labelled(data)
    pos, neg = _require_both(samples)
    if len(samples) < 2 * params.min_leaf:
        raise TooFewSamples("need at least %d samples" % (2 * params.min_leaf))
    meta = {"samples": len(samples), "covert": pos, "legitimate": neg}
    if params.prune and min(pos, neg) >= 3:
        assign = stratified_folds(samples, 3, params.seed)
        grow = [s for s, f in zip(samples, assign) if f != 0]
        hold = [s for s, f in zip(samples, assign) if f == 0]
        root = _prune(_grow(grow, params, 0), hold)
        meta.update(pruned=True, grow_samples=len(grow), prune_samples=len(hold))
    else:
        if params.prune:
            log.warning("too few samples per class to hold out a pruning set; tree left unpruned")
        root = _grow(samples, params, 0)
        meta["pruned"] = False
    return TreeModel(root, params, meta)


@dataclass
class CVReport:
    folds: List[MetricsReport]
    pooled: MetricsReport

    def mean(self, name: str) -> Optional[Fraction]:
        vals = [getattr(r, name) for r in self.folds]
        vals = [v for v in vals if v is not None]
        return sum(vals, Fraction(0)) / len(vals) if vals else None

    @property
    def precision(self):
        return self.mean("precision")

    @property
    def recall(self):
        return self.mean("recall")

    @property
    def accuracy(self):
        return self.mean("accuracy")

    @property
    def f1(self):
        return self.mean("f1")

    @property
    def fpr(self):
        return self.mean("fpr")


def cross_validate(data, folds: int = 10, params: TreeParams = TreeParams(), seed: int = 0) -> CVReport:
    """Stratified k-fold evaluation of train_tree; metrics averaged over folds."""
    samples = labelled(data)
    pos, neg = _require_both(samples)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if len(samples) < folds or min(pos, neg) < 2:
        raise TooFewSamples("%d samples (%d covert) cannot fill %d folds" % (len(samples), pos, folds))
    assign = stratified_folds(samples, folds, seed)
    reports = []
    for f in range(folds):
        train = [s for s, a in zip(samples, assign) if a != f]
        test = [s for s, a in zip(samples, assign) if a == f]
        model = train_tree(train, params)
        reports.append(evaluate(model, test))
    pooled = ConfusionMatrix()
    for r in reports:
        pooled = pooled + r.cm
    return CVReport(reports, metrics(pooled))


# -- model files ------------------------------------------------------------------

def _frac_str(x: Fraction) -> str:
    return "%d/%d" % (x.numerator, x.denominator)


def _flatten(node: Node, out: list) -> int:
    idx = len(out)
    out.append(None)
    if node.is_leaf:
        out[idx] = {"verdict": node.verdict.value, "covert": node.covert, "legitimate": node.legit}
    else:
        entry = {"split": float(node.split), "split_exact": _frac_str(node.split),
                 "gain": node.gain, "gain_ratio": node.gain_ratio,
                 "covert": node.covert, "legitimate": node.legit}
        out[idx] = entry
        entry["left"] = _flatten(node.left, out)
        entry["right"] = _flatten(node.right, out)
    return idx


def _build(nodes: list, idx: int) -> Node:
    e = nodes[idx]
    if "verdict" in e:
        return Node(Verdict(e["verdict"]), e.get("covert", 0), e.get("legitimate", 0))
    split = Fraction(e["split_exact"]) if "split_exact" in e else as_fraction(float(e["split"]))
    left, right = _build(nodes, e["left"]), _build(nodes, e["right"])
    pos, neg = e.get("covert", left.covert + right.covert), e.get("legitimate", left.legit + right.legit)
    return Node(_majority(pos, neg), pos, neg, split, left, right, e.get("gain", 0.0), e.get("gain_ratio", 0.0))


def model_to_dict(model: Model) -> dict:
    if isinstance(model, ThresholdModel):
        t = model.theta
        nodes = [{"split": float(t), "split_exact": _frac_str(t), "left": 1, "right": 2},
                 {"verdict": Verdict.COVERT.value}, {"verdict": Verdict.LEGITIMATE.value}]
        return {"version": MODEL_VERSION, "kind": "threshold", "theta": float(t), "nodes": nodes,
                "training_meta": dict(model.training_meta)}
    nodes: list = []
    _flatten(model.root, nodes)
    p = model.params
    meta = dict(model.training_meta, max_depth=p.max_depth, min_leaf=p.min_leaf, prune=p.prune, seed=p.seed)
    return {"version": MODEL_VERSION, "kind": "tree", "nodes": nodes, "training_meta": meta}


def model_from_dict(doc: dict) -> Model:
    if doc.get("version") != MODEL_VERSION:
        raise ValueError("unsupported model version %r" % doc.get("version"))
    nodes = doc["nodes"]
    if doc["kind"] == "threshold":
        e = nodes[0]
        theta = Fraction(e["split_exact"]) if "split_exact" in e else as_fraction(float(doc["theta"]))
        return ThresholdModel(theta, doc.get("training_meta", {}))
    if doc["kind"] != "tree":
        raise ValueError("unknown model kind %r" % doc["kind"])
    meta = dict(doc.get("training_meta", {}))
    params = TreeParams(meta.get("max_depth"), meta.get("min_leaf", 2), meta.get("prune", True), meta.get("seed", 0))
    return TreeModel(_build(nodes, 0), params, meta)


def save_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
