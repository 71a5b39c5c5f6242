"""Confusion-matrix statistics and ROC/AUC for binary particle classification.

The positive class is always "particle" (+1). Ratios with a zero denominator
are reported as ``None``, never as 0, so that downstream PPV-focused checks
cannot silently read an undefined value as a bad-but-defined one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Confusion", "EvaluationReport", "confusion", "summarize", "roc_auc"]


@dataclass(frozen=True)
class Confusion:
    """2x2 contingency counts with particle as the positive class."""

    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"negative count {name}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class EvaluationReport:
    confusion: Confusion
    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    balanced_accuracy: float | None
    auc: float | None = None

    def to_dict(self) -> dict:
        return {
            "confusion": {
                "tp": self.confusion.tp,
                "fp": self.confusion.fp,
                "tn": self.confusion.tn,
                "fn": self.confusion.fn,
            },
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "ppv": self.ppv,
            "balanced_accuracy": self.balanced_accuracy,
            "auc": self.auc,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        c = d["confusion"]
        return cls(
            confusion=Confusion(tp=c["tp"], fp=c["fp"], tn=c["tn"], fn=c["fn"]),
            sensitivity=d.get("sensitivity"),
            specificity=d.get("specificity"),
            ppv=d.get("ppv"),
            balanced_accuracy=d.get("balanced_accuracy"),
            auc=d.get("auc"),
        )


def confusion(truth, pred) -> Confusion:
    """Count the 2x2 table of true vs. predicted labels (+1 / -1).

    Raises ValueError on length mismatch or empty input.
    """
    t = np.asarray(truth)
    p = np.asarray(pred)
    if t.shape != p.shape:
        raise ValueError(f"length mismatch: {t.shape} truth vs {p.shape} predictions")
    if t.size == 0:
        raise ValueError("empty label sequences")
    pos_t = t > 0
    pos_p = p > 0
    return Confusion(
        tp=int(np.sum(pos_t & pos_p)),
        fp=int(np.sum(~pos_t & pos_p)),
        tn=int(np.sum(~pos_t & ~pos_p)),
        fn=int(np.sum(pos_t & ~pos_p)),
    )


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def summarize(c: Confusion, auc: float | None = None) -> EvaluationReport:
    """Derive sensitivity, specificity, PPV and balanced accuracy from counts."""
    sens = _ratio(c.tp, c.tp + c.fn)
    spec = _ratio(c.tn, c.tn + c.fp)
    ppv = _ratio(c.tp, c.tp + c.fp)
    bacc = (sens + spec) / 2.0 if sens is not None and spec is not None else None
    return EvaluationReport(
        confusion=c,
        sensitivity=sens,
        specificity=spec,
        ppv=ppv,
        balanced_accuracy=bacc,
        auc=auc,
    )


def roc_auc(scores, truth) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic.

    Fraction of (positive, negative) pairs with score_+ > score_-, ties
    counted 1/2; equivalent to the trapezoidal area under the ROC.
    Requires at least one sample of each class.
    """
    s = np.asarray(scores, dtype=float)
    t = np.asarray(truth)
    if s.shape != t.shape:
        raise ValueError(f"length mismatch: {s.shape} scores vs {t.shape} labels")
    pos = s[t > 0]
    neg = s[t <= 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("roc_auc needs at least one sample of each class")
    # Rank-sum form: average ranks handle ties at 1/2 per pair.
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(combined.size, dtype=float)
    ranks[order] = np.arange(1, combined.size + 1, dtype=float)
    # Average the ranks of tied values.
    sorted_vals = combined[order]
    i = 0
    while i < sorted_vals.size:
        j = i
        while j + 1 < sorted_vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    rank_sum_pos = ranks[: pos.size].sum()
    u = rank_sum_pos - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))
