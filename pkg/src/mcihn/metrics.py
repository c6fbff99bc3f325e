"""Evaluation metrics: Acc-2/3/5/7, weighted F1, MAE, Pearson correlation.

Continuous sentiment scores in [-1, 1] are discretized by named schemes
before classification metrics apply. The binary rule is negative (< 0)
versus non-negative; seven-class uses equal-width bins; the five-level
scheme bins around the usual score levels with midpoint edges, and the
three-level scheme merges its outer levels. Boundary scores fall into the
higher bin (except +1, which stays in the top bin).
"""

from __future__ import annotations

import bisect
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SCHEME_FAMILIES = ("mosi", "sims")


@dataclass(frozen=True)
class DiscretizationScheme:
    """Monotone binning of [-1, 1] into ordered class labels."""

    name: str
    edges: tuple[float, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.edges) + 1:
            raise ValueError(f"{self.name}: need one more label than edge")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValueError(f"{self.name}: edges must be strictly increasing")


def _equal_width(name: str, k: int) -> DiscretizationScheme:
    edges = tuple(-1.0 + 2.0 * i / k for i in range(1, k))
    labels = tuple(range(-(k // 2), k // 2 + 1)) if k % 2 else tuple(range(k))
    return DiscretizationScheme(name, edges, labels)


SCHEMES: dict[str, DiscretizationScheme] = {
    "mosi2": DiscretizationScheme("mosi2", (0.0,), (0, 1)),
    "sims2": DiscretizationScheme("sims2", (0.0,), (0, 1)),
    "sims3": DiscretizationScheme("sims3", (-0.25, 0.25), (-1, 0, 1)),
    "sims5": DiscretizationScheme("sims5", (-0.75, -0.25, 0.25, 0.75), (-2, -1, 0, 1, 2)),
    "mosi7": _equal_width("mosi7", 7),
}


def discretize(score: float, scheme: str | DiscretizationScheme) -> int:
    """Class label for a continuous score; clamps (with a warning) outside [-1, 1]."""
    if isinstance(scheme, str):
        try:
            scheme = SCHEMES[scheme]
        except KeyError:
            raise ValueError(f"unknown discretization scheme {scheme!r}") from None
    s = float(score)
    if s < -1.0 or s > 1.0:
        warnings.warn(f"score {s} outside [-1, 1]; clamping", stacklevel=2)
        s = min(1.0, max(-1.0, s))
    return scheme.labels[bisect.bisect_right(scheme.edges, s)]


def discretize_all(scores: Sequence[float], scheme) -> list[int]:
    return [discretize(s, scheme) for s in scores]


def accuracy(pred_labels: Sequence, true_labels: Sequence) -> float:
    """Exact-match fraction."""
    _check_aligned(pred_labels, true_labels)
    return float(sum(1 for p, t in zip(pred_labels, true_labels) if p == t) / len(true_labels))


def f1_weighted(pred_labels: Sequence, true_labels: Sequence) -> float:
    """Per-class F1 weighted by true-class support; undefined F1 counts as 0."""
    _check_aligned(pred_labels, true_labels)
    total = len(true_labels)
    out = 0.0
    for c in sorted(set(true_labels) | set(pred_labels)):
        tp = sum(1 for p, t in zip(pred_labels, true_labels) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred_labels, true_labels) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred_labels, true_labels) if p != c and t == c)
        support = tp + fn
        if support == 0:
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / support
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out += f1 * support / total
    return float(out)


def pearson_corr(scores: Sequence[float], labels: Sequence[float]) -> tuple[float, bool]:
    """(r, degenerate) where degenerate marks a zero-variance argument (r = 0)."""
    _check_aligned(scores, labels)
    if len(scores) < 2:
        raise ValueError("pearson_corr needs n >= 2")
    x = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(xc @ xc)
    vy = float(yc @ yc)
    if vx == 0.0 or vy == 0.0:
        return 0.0, True
    return float((xc @ yc) / np.sqrt(vx * vy)), False


def mae(scores: Sequence[float], labels: Sequence[float]) -> float:
    """Mean absolute error, matching the training loss convention exactly."""
    _check_aligned(scores, labels)
    diff = np.asarray(scores, dtype=np.float64) - np.asarray(labels, dtype=np.float64)
    return float(np.mean(np.abs(diff)))


def _check_aligned(a: Sequence, b: Sequence) -> None:
    if len(a) != len(b):
        raise ValueError(f"lengths differ: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("empty inputs")


@dataclass
class MetricsReport:
    """One evaluation pass. Accuracy fields apply per scheme family:
    mosi reports acc2/acc7, sims reports acc2/acc3/acc5."""

    n: int
    scheme: str
    mae: float
    corr: float
    corr_degenerate: bool = False
    f1: Optional[float] = None
    acc2: Optional[float] = None
    acc3: Optional[float] = None
    acc5: Optional[float] = None
    acc7: Optional[float] = None
    acc2_rule: str = "neg_vs_nonneg"
    acc2_drop_neutral: bool = False
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "acc2": self.acc2,
            "acc3": self.acc3,
            "acc5": self.acc5,
            "acc7": self.acc7,
            "f1": self.f1,
            "mae": self.mae,
            "corr": self.corr,
            "n": self.n,
            "scheme": {
                "family": self.scheme,
                "acc2_rule": self.acc2_rule,
                "acc2_drop_neutral": self.acc2_drop_neutral,
            },
            "corr_degenerate": self.corr_degenerate,
        }
        out.update(self.extras)
        return out

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def evaluate(
    predictions: Sequence[float],
    labels: Sequence[float],
    scheme: str = "mosi",
    acc2_drop_neutral: bool = False,
) -> MetricsReport:
    """Fill every metric that applies to the scheme family ('mosi' or 'sims')."""
    if scheme not in SCHEME_FAMILIES:
        raise ValueError(f"unknown scheme family {scheme!r}; expected one of {SCHEME_FAMILIES}")
    _check_aligned(predictions, labels)
    # MAE and correlation use the raw scores; only the class metrics need
    # clamping, done up front here rather than warning per prediction.
    raw_preds = [float(p) for p in predictions]
    preds = [min(1.0, max(-1.0, p)) for p in raw_preds]
    trues = [float(t) for t in labels]
    binary_scheme = "mosi2" if scheme == "mosi" else "sims2"
    if acc2_drop_neutral:
        kept = [(p, t) for p, t in zip(preds, trues) if t != 0.0]
    else:
        kept = list(zip(preds, trues))
    corr, degenerate = pearson_corr(raw_preds, trues) if len(preds) >= 2 else (0.0, True)
    report = MetricsReport(
        n=len(preds),
        scheme=scheme,
        mae=mae(raw_preds, trues),
        corr=corr,
        corr_degenerate=degenerate,
        acc2_drop_neutral=acc2_drop_neutral,
    )
    if kept:
        bp = discretize_all([p for p, _ in kept], binary_scheme)
        bt = discretize_all([t for _, t in kept], binary_scheme)
        report.acc2 = accuracy(bp, bt)
        report.f1 = f1_weighted(bp, bt)
    if scheme == "mosi":
        report.acc7 = accuracy(discretize_all(preds, "mosi7"), discretize_all(trues, "mosi7"))
    else:
        report.acc3 = accuracy(discretize_all(preds, "sims3"), discretize_all(trues, "sims3"))
        report.acc5 = accuracy(discretize_all(preds, "sims5"), discretize_all(trues, "sims5"))
    return report
