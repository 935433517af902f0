"""Detection of message-ordering covert channels from packet order compressibility."""

from .compress import compress_len, kappa
from .detection import (
    STANDARD_THRESHOLDS,
    ThresholdModel,
    TreeModel,
    TreeParams,
    classify,
    cross_validate,
    sweep,
    train_tree,
)
from .encoding import Coding, OverrunFilter, compute_diffs, encode, rank_window, unwrap_sequences
from .model import FlowKey, Label, PduRecord, ScoredFlow, Verdict
from .scoring import ScoreConfig, score_flow, score_flows

__version__ = "0.1.0"
