"""Binary classification metrics with malicious as the positive class."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from efc.errors import SingleClassError


class DegenerateMetricWarning(UserWarning):
    """Precision or recall has a zero denominator; F1 was reported as 0."""


def _binary(labels, name: str) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if y.size and not np.isin(y, (0, 1)).all():
        raise ValueError(f"{name} must be binary (0 benign, 1 malicious)")
    return y.astype(np.int8)


def confusion(verdict_labels, truth_labels) -> tuple[int, int, int, int]:
    """Return ``(tp, fp, fn, tn)``; 1 marks malicious in both inputs."""
    pred = _binary(verdict_labels, "verdict_labels")
    truth = _binary(truth_labels, "truth_labels")
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} verdicts vs {truth.size} labels")
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    tn = int(np.sum((pred == 0) & (truth == 0)))
    return tp, fp, fn, tn


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """Precision and recall; a zero denominator yields 0."""
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return p, r


def f1_score(tp: int, fp: int, fn: int) -> tuple[float, bool]:
    """F1 plus a flag telling whether a degenerate denominator forced it to 0."""
    if tp + fp == 0 or tp + fn == 0:
        return 0.0, True
    p, r = precision_recall(tp, fp, fn)
    if p + r == 0:
        return 0.0, False
    return 2 * p * r / (p + r), False


def f1(tp: int, fp: int, fn: int) -> float:
    """Harmonic mean of precision and recall.

    When ``tp + fp`` or ``tp + fn`` is zero the score is 0 and a
    :class:`DegenerateMetricWarning` is emitted.
    """
    value, degenerate = f1_score(tp, fp, fn)
    if degenerate:
        warnings.warn(
            f"F1 undefined for tp={tp}, fp={fp}, fn={fn}; reporting 0", DegenerateMetricWarning, stacklevel=2
        )
    return value


def _check_scores(scores, truth_labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = _binary(truth_labels, "truth_labels")
    if s.shape != y.shape:
        raise ValueError(f"length mismatch: {s.size} scores vs {y.size} labels")
    if np.isnan(s).any():
        raise ValueError("scores contain NaN")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise SingleClassError("AUC needs both benign and malicious samples")
    return s, y


def roc_curve(scores, truth_labels) -> list[tuple[float, float]]:
    """ROC points ``(fpr, tpr)`` from (0, 0) to (1, 1).

    One point per distinct score, thresholding at ``score >= t`` for ``t``
    descending.
    """
    s, y = _check_scores(scores, truth_labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tps = np.cumsum(y)
    fps = np.cumsum(1 - y)
    # last index of each run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    n_pos, n_neg = tps[-1], fps[-1]
    points = [(0.0, 0.0)]
    points += [(float(fps[k] / n_neg), float(tps[k] / n_pos)) for k in ends]
    return points


def auc_score(scores, truth_labels) -> float:
    """Probability that a random malicious sample outscores a random benign one.

    Computed from midranks (Mann-Whitney U), so ties count 1/2.
    """
    s, y = _check_scores(scores, truth_labels)
    ranks = rankdata(s, method="average")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc(scores, truth_labels) -> tuple[list[tuple[float, float]], float]:
    return roc_curve(scores, truth_labels), auc_score(scores, truth_labels)


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    auc: float
    roc: list[tuple[float, float]] = field(default_factory=list)
    f1_degenerate: bool = False
    extra: dict[str, float | int | str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_text(self) -> str:
        """Flat ``key=value`` lines; ROC points are written separately."""
        items: dict[str, object] = {
            "n": self.n,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "f1_degenerate": str(self.f1_degenerate).lower(),
            "auc": self.auc,
            "roc_points": len(self.roc),
        }
        items.update(self.extra)
        return "".join(f"{k}={_fmt(v)}\n" for k, v in items.items())

    def roc_csv(self) -> str:
        return "fpr,tpr\n" + "".join(f"{x!r},{y!r}\n" for x, y in self.roc)


def _fmt(v: object) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def parse_report(text: str) -> dict[str, str]:
    """Read back a report written by :meth:`EvalReport.to_text`."""
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def evaluate(verdict_labels: Sequence[int], scores: Sequence[float], truth_labels: Sequence[int]) -> EvalReport:
    """Full report: confusion cells, precision/recall/F1 at the verdicts, ROC and AUC from the scores."""
    tp, fp, fn, tn = confusion(verdict_labels, truth_labels)
    roc, auc = roc_auc(scores, truth_labels)
    value, degenerate = f1_score(tp, fp, fn)
    if degenerate:
        warnings.warn(f"F1 undefined for tp={tp}, fp={fp}, fn={fn}; reporting 0", DegenerateMetricWarning, stacklevel=2)
    p, r = precision_recall(tp, fp, fn)
    return EvalReport(tp, fp, fn, tn, p, r, value, auc, roc, degenerate)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation, ignoring NaN entries."""
    arr = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std())
