"""End-to-end per-flow scoring: window, rank, diff, encode, compress."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

from .capture import FlowTooShort, cut_windows
from .compress import DEFAULT_COMPRESSOR, CompressorSpec, compress_len
from .encoding import DEFAULT_CODING, DEFAULT_FILTER, Coding, OverrunFilter, build_window, encode_window
from .model import WINDOW_PACKETS, FlowKey, Label, PduRecord, ScoredFlow

log = logging.getLogger(__name__)

THREADS_ENV = "ORDWARDEN_THREADS"


@dataclass(frozen=True)
class ScoreConfig:
    coding: Coding = DEFAULT_CODING
    overrun_filter: OverrunFilter = DEFAULT_FILTER
    window_mode: str = "first"
    stride: int = WINDOW_PACKETS
    compressor: CompressorSpec = DEFAULT_COMPRESSOR


DEFAULT_CONFIG = ScoreConfig()


def score_window(records: Sequence[PduRecord], config: ScoreConfig = DEFAULT_CONFIG,
                 label: Optional[Label] = None, index: int = 0) -> ScoredFlow:
    window = build_window(records, config.overrun_filter)
    enc = encode_window(window, config.coding)
    return ScoredFlow(window.flow, enc.coding.value, len(enc.s), compress_len(enc.s, config.compressor),
                      label=label, window=index)


def score_flow(records: Sequence[PduRecord], config: ScoreConfig = DEFAULT_CONFIG,
               label: Optional[Label] = None) -> List[ScoredFlow]:
    """Score every window of one flow. Raises FlowTooShort below 201 PDUs."""
    windows = cut_windows(records, config.window_mode, config.stride)
    return [score_window(w, config, label, i) for i, w in enumerate(windows)]


def _score_job(args):
    records, config, label = args
    try:
        return score_flow(records, config, label)
    except FlowTooShort:
        return None


def worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def score_flows(flows: Dict[FlowKey, Sequence[PduRecord]], config: ScoreConfig = DEFAULT_CONFIG,
                labels: Optional[Dict[str, Label]] = None, workers: Optional[int] = None):
    """Score many flows, returning ``(scores, skipped_keys)``.

    Output is sorted by flow id then window so reruns are byte-identical
    regardless of worker scheduling.
    """
    labels = labels or {}
    keys = list(flows)
    jobs = [(flows[k], config, labels.get(str(k))) for k in keys]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 32:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_score_job, jobs, chunksize=16))
    else:
        results = [_score_job(j) for j in jobs]
    scores, skipped = [], []
    for key, res in zip(keys, results):
        if res is None:
            skipped.append(key)
        else:
            scores.extend(res)
    scores.sort(key=lambda s: (s.flow_id, s.window))
    return scores, skipped


def kappas(scores: Iterable[ScoredFlow]) -> list:
    return [s.kappa for s in scores]


SCORES_SCHEMA = "#schema=ordwarden-scores/1"
SCORE_COLUMNS = ("flow_id", "coding", "s_len", "c_len", "kappa", "window", "label")


def write_scores(scores: Iterable[ScoredFlow], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    fh.write(SCORES_SCHEMA + "\n")
    w.writerow(SCORE_COLUMNS)
    for s in scores:
        w.writerow([s.flow_id, s.coding, s.s_len, s.c_len, "%.5f" % float(s.kappa), s.window,
                    s.label.value if s.label else ""])


def _data_lines(fh):
    for line in fh:
        if not line.startswith("#"):
            yield line


def read_scores(path) -> List[ScoredFlow]:
    """Load a scores CSV. kappa is rebuilt exactly from s_len/c_len."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(_data_lines(fh)):
            label = Label(row["label"]) if row.get("label") else None
            out.append(ScoredFlow(FlowKey.from_id(row["flow_id"]), row["coding"], int(row["s_len"]),
                                  int(row["c_len"]), label=label, window=int(row.get("window") or 0)))
    return out
