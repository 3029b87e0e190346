import math
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, Field, NonNegativeInt, field_validator

from utils.errors import AllUndefined, EmptyMatrix
from utils.quality_data import HIER_ORDER, HierLabel


METRIC_NAMES = ("accuracy", "precision", "recall", "specificity", "npv", "p4", "custom")


class BinaryConfusion(BaseModel):
    tp: NonNegativeInt = 0
    fp: NonNegativeInt = 0
    tn: NonNegativeInt = 0
    fn: NonNegativeInt = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "BinaryConfusion") -> "BinaryConfusion":
        return BinaryConfusion(tp=self.tp + other.tp, fp=self.fp + other.fp, tn=self.tn + other.tn, fn=self.fn + other.fn)

    def swapped(self) -> "BinaryConfusion":
        """The same outcomes seen with the positive and negative classes exchanged."""
        return BinaryConfusion(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)

    @classmethod
    def from_predictions(cls, truths: Iterable[bool], predictions: Iterable[bool]) -> "BinaryConfusion":
        counts = {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
        for truth, predicted in zip(truths, predictions, strict=True):
            match (bool(truth), bool(predicted)):
                case (True, True):
                    counts["tp"] += 1
                case (False, True):
                    counts["fp"] += 1
                case (False, False):
                    counts["tn"] += 1
                case (True, False):
                    counts["fn"] += 1
        return cls(**counts)


class HierConfusion(BaseModel):
    """3x3 tallies, rows = ground truth, columns = prediction, both in P-bar/PL-bar/PL order."""

    counts: list[list[NonNegativeInt]] = Field(default_factory=lambda: [[0] * 3 for _ in range(3)])

    @field_validator("counts")
    @classmethod
    def _check_shape(cls, counts):
        if len(counts) != 3 or any(len(row) != 3 for row in counts):
            raise ValueError("HierConfusion needs a 3x3 count grid")
        return counts

    def cell(self, truth: HierLabel, predicted: HierLabel) -> int:
        return self.counts[truth.index][predicted.index]

    def record(self, truth: HierLabel, predicted: HierLabel) -> None:
        self.counts[truth.index][predicted.index] += 1

    def __add__(self, other: "HierConfusion") -> "HierConfusion":
        return HierConfusion(counts=[[a + b for a, b in zip(row, other_row)] for row, other_row in zip(self.counts, other.counts)])

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def row_sums(self) -> dict[HierLabel, int]:
        return {label: sum(self.counts[label.index]) for label in HIER_ORDER}

    def row_fractions(self) -> list[list[Optional[float]]]:
        fractions = []
        for row in self.counts:
            row_total = sum(row)
            fractions.append([count / row_total if row_total else None for count in row])
        return fractions

    def to_json_dict(self) -> dict:
        return {
            "labels": [label.value for label in HIER_ORDER],
            "counts": [list(row) for row in self.counts],
            "row_fractions": self.row_fractions(),
        }


class MetricReport(BaseModel):
    """Scores for one evaluation; None marks an Undefined metric."""

    accuracy: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    specificity: Optional[float] = None
    npv: Optional[float] = None
    p4: Optional[float] = None
    custom: Optional[float] = None

    def to_json_dict(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


class MetricSummary(BaseModel):
    mean: float
    std: float
    defined: int
    excluded: int


class AggregateReport(BaseModel):
    k: int = Field(ge=1)
    metrics: dict[str, MetricSummary]

    def to_json_dict(self) -> dict:
        return {"k": self.k, "metrics": {name: self.metrics[name].model_dump() for name in METRIC_NAMES}}


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    if denominator == 0:
        return None
    return numerator / denominator


def harmonic_mean(components: list[Optional[float]]) -> Optional[float]:
    # Undefined component -> Undefined; zero component -> 0 (the limit)
    if any(value is None for value in components):
        return None
    if any(value == 0 for value in components):
        return 0.0
    return len(components) / sum(1.0 / value for value in components)


def binary_metrics(cm: BinaryConfusion) -> MetricReport:
    if cm.total == 0:
        raise EmptyMatrix("Cannot score an empty confusion matrix")
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    specificity = _ratio(cm.tn, cm.tn + cm.fp)
    npv = _ratio(cm.tn, cm.tn + cm.fn)
    return MetricReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=precision,
        recall=recall,
        specificity=specificity,
        npv=npv,
        p4=harmonic_mean([precision, recall, specificity, npv]),
        custom=harmonic_mean([precision, specificity]),
    )


def collapse_binary(h: HierConfusion) -> BinaryConfusion:
    """Group P-bar and PL-bar as low quality (negative), PL as high quality (positive)."""
    good = HierLabel.EYE_GOOD_LIGHT.index
    bad = [HierLabel.NO_EYE.index, HierLabel.EYE_BAD_LIGHT.index]
    return BinaryConfusion(
        tp=h.counts[good][good],
        fn=sum(h.counts[good][col] for col in bad),
        fp=sum(h.counts[row][good] for row in bad),
        tn=sum(h.counts[row][col] for row in bad for col in bad),
    )


def aggregate(reports: list[MetricReport]) -> AggregateReport:
    if not reports:
        raise ValueError("Cannot aggregate an empty list of reports")
    summaries = {}
    for name in METRIC_NAMES:
        values = [getattr(report, name) for report in reports if getattr(report, name) is not None]
        if not values:
            raise AllUndefined(f"{name} is undefined in every run")
        # Sample standard deviation (n - 1)
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        summaries[name] = MetricSummary(
            mean=float(np.mean(values)),
            std=std,
            defined=len(values),
            excluded=len(reports) - len(values),
        )
    return AggregateReport(k=len(reports), metrics=summaries)


def _display(name: str, value: Optional[float], spread: bool = False) -> str:
    if value is None or math.isnan(value):
        return "undefined"
    if name == "accuracy":
        return f"{100 * value:.3f}%"
    return f"{value:.4f}" if spread else f"{value:.3f}"


def format_report(report: MetricReport) -> dict[str, str]:
    """Display strings: accuracy in percent with 3 decimals, scores with 3 decimals."""
    return {name: _display(name, getattr(report, name)) for name in METRIC_NAMES}


def format_aggregate(agg: AggregateReport) -> dict[str, str]:
    formatted = {}
    for name in METRIC_NAMES:
        summary = agg.metrics[name]
        formatted[name] = f"{_display(name, summary.mean)} ± {_display(name, summary.std, spread=True)}"
    return formatted
