"""Confusion-matrix accounting and the six frame-classification criteria.

Positive class (label 1) = frame containing a lesion. Ratios with a zero
denominator are reported as None ("undefined"), never coerced to 0 or 1.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        # shard merge: addition must equal single-pass accumulation
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )


def accumulate(predictions, truths) -> ConfusionCounts:
    """Tally TP/FP/TN/FN from parallel 0/1 label sequences."""
    preds = np.asarray(predictions)
    truth = np.asarray(truths)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise ValueError(f"label arrays must be equal-length 1-D: {preds.shape} vs {truth.shape}")
    for name, a in (("predictions", preds), ("truths", truth)):
        if not np.isin(a, (0, 1)).all():
            raise ValueError(f"{name} must contain only 0/1 labels")
    return ConfusionCounts(
        tp=int(((preds == 1) & (truth == 1)).sum()),
        fp=int(((preds == 1) & (truth == 0)).sum()),
        tn=int(((preds == 0) & (truth == 0)).sum()),
        fn=int(((preds == 0) & (truth == 1)).sum()),
    )


def _ratio(num: int, den: int):
    return num / den if den else None


def compute_metrics(c: ConfusionCounts) -> dict:
    """accuracy, recall, precision, specificity, dice, fppf as fractions in [0,1].

    dice is the F1 tally 2tp/(2tp+fp+fn); fppf is false positives per evaluated
    frame, fp/total. Undefined ratios come back as None.
    """
    if c.total == 0:
        raise ValueError("no frames evaluated")
    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "recall": _ratio(c.tp, c.tp + c.fn),
        "precision": _ratio(c.tp, c.tp + c.fp),
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "dice": _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        "fppf": c.fp / c.total,
    }


def format_metric(value, percent: bool = True) -> str:
    if value is None:
        return "undefined"
    return f"{value * 100:.2f}%" if percent else f"{value:.6f}"
