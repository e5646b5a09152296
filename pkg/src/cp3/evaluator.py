"""Confusion counting against dataset ground truth and the standard metrics.

Shadow pixels score as background.  Unknown and outside-ROI pixels are
skipped.  Undefined ratios (zero denominator) are NaN.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .dataset import GT
from .errors import InvalidInput

METRIC_NAMES = ("recall", "specificity", "fpr", "fnr", "pwc", "precision", "f_measure")
METRIC_HEADERS = ("Recall", "Specificity", "FPR", "FNR", "PWC", "Precision", "F-Measure")


class EmptyEvaluation(InvalidInput):
    """No pixel was counted, so no metric is defined."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise InvalidInput(f"{f.name} must be nonnegative, got {v}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return merge(self, other)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def merge(a: ConfusionCounts, b: ConfusionCounts) -> ConfusionCounts:
    return ConfusionCounts(a.tp + b.tp, a.fp + b.fp, a.tn + b.tn, a.fn + b.fn)


def accumulate(counts: ConfusionCounts, mask, gt) -> ConfusionCounts:
    """Add one frame's outcomes to ``counts``.

    ``mask`` is boolean foreground; ``gt`` holds decoded label levels.
    """
    mask = np.asarray(mask, dtype=bool)
    gt = np.asarray(gt)
    if mask.shape != gt.shape:
        raise InvalidInput(f"mask shape {mask.shape} does not match ground truth {gt.shape}")
    scored = (gt != GT.UNKNOWN) & (gt != GT.OUTSIDE_ROI)
    truth = gt == GT.FOREGROUND
    tp = int(np.count_nonzero(scored & mask & truth))
    fp = int(np.count_nonzero(scored & mask & ~truth))
    fn = int(np.count_nonzero(scored & ~mask & truth))
    tn = int(np.count_nonzero(scored & ~mask & ~truth))
    return merge(counts, ConfusionCounts(tp, fp, tn, fn))


@dataclass(frozen=True)
class MetricsReport:
    recall: float
    specificity: float
    fpr: float
    fnr: float
    pwc: float
    precision: float
    f_measure: float

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


def metrics(counts: ConfusionCounts) -> MetricsReport:
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    total = tp + fp + tn + fn
    if total == 0:
        raise EmptyEvaluation("no pixels were scored")
    recall = _ratio(tp, tp + fn)
    precision = _ratio(tp, tp + fp)
    if math.isnan(recall) or math.isnan(precision) or recall + precision == 0:
        f = math.nan
    else:
        f = 2 * precision * recall / (precision + recall)
    specificity = _ratio(tn, tn + fp)
    # complements, so recall + fnr and specificity + fpr round to exactly 1
    return MetricsReport(
        recall=recall,
        specificity=specificity,
        fpr=1.0 - specificity,
        fnr=1.0 - recall,
        pwc=100.0 * (fn + fp) / total,
        precision=precision,
        f_measure=f,
    )


def aggregate(reports) -> MetricsReport:
    """Per-metric mean over videos, ignoring undefined entries."""
    reports = list(reports)
    if not reports:
        raise InvalidInput("nothing to aggregate")
    table = np.array([astuple(r) for r in reports], dtype=np.float64)
    out = []
    for col in table.T:
        ok = col[~np.isnan(col)]
        out.append(float(ok.mean()) if ok.size else math.nan)
    return MetricsReport(*out)


def _fmt(x: float) -> str:
    return "undefined" if math.isnan(x) else f"{x:.4f}"


def format_table(rows: dict[str, MetricsReport]) -> str:
    """Plain-text table, one row per named report."""
    names = list(rows)
    width = max([len("Sequence")] + [len(n) for n in names])
    cols = [max(len(h), 9) for h in METRIC_HEADERS]
    head = "Sequence".ljust(width) + "  " + "  ".join(h.rjust(c) for h, c in zip(METRIC_HEADERS, cols))
    lines = [head, "-" * len(head)]
    for name in names:
        r = rows[name]
        cells = [_fmt(getattr(r, m)).rjust(c) for m, c in zip(METRIC_NAMES, cols)]
        lines.append(name.ljust(width) + "  " + "  ".join(cells))
    return "\n".join(lines) + "\n"


def format_keyvalue(report: MetricsReport, prefix: str = "", counts: ConfusionCounts | None = None) -> str:
    """``key=value`` lines; undefined values are written as ``nan``."""
    lines = []
    if counts is not None:
        for name in ("tp", "fp", "tn", "fn"):
            lines.append(f"{prefix}{name}={getattr(counts, name)}")
    for name in METRIC_NAMES:
        lines.append(f"{prefix}{name}={getattr(report, name)!r}")
    return "\n".join(lines) + "\n"
