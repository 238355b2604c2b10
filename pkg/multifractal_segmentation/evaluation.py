from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Optional

from sklearn.metrics import confusion_matrix  # type: ignore

from .segment import SegmentationMask

LOG = logging.getLogger(__name__)

METRIC_NAMES = ("ppv", "npv", "sensitivity", "specificity", "accuracy")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Pixel counts of a test mask (rows) against a reference mask."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must not be negative")

    @property
    def population(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def transposed(self) -> ConfusionMatrix:
        """The matrix seen with test and reference swapped."""
        return ConfusionMatrix(tp=self.tp, fp=self.fn, fn=self.fp, tn=self.tn)


@dataclass(frozen=True)
class MetricsReport:
    """The five indicators in percent; None where a denominator is 0."""

    cm: ConfusionMatrix
    ppv: Optional[float]
    npv: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    accuracy: Optional[float]

    def to_dict(self) -> dict[str, object]:
        report: dict[str, object] = asdict(self.cm)
        report.update((name, getattr(self, name)) for name in METRIC_NAMES)
        return report

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def format_table(self) -> str:
        cm = self.cm

        def cell(count: int) -> str:
            if not cm.population:
                return f"{count:>9d}"
            return f"{count:>9d} ({100 * count / cm.population:6.2f}%)"

        def percent(value: Optional[float]) -> str:
            return "undefined" if value is None else f"{value:.2f}%"

        rows = [
            f"{'':12s}{'ref water':>20s}{'ref land':>20s}",
            f"{'test water':12s}{cell(cm.tp):>20s}{cell(cm.fp):>20s}"
            f"  PPV {percent(self.ppv)}",
            f"{'test land':12s}{cell(cm.fn):>20s}{cell(cm.tn):>20s}"
            f"  NPV {percent(self.npv)}",
            f"{'':12s}{'Sens ' + percent(self.sensitivity):>20s}"
            f"{'Spec ' + percent(self.specificity):>20s}"
            f"  Acc {percent(self.accuracy)}",
        ]
        return "\n".join(rows)


def confusion(
    test: SegmentationMask, reference: SegmentationMask
) -> ConfusionMatrix:
    if test.shape != reference.shape:
        raise ValueError(
            f"test mask {test.shape} and reference mask {reference.shape}"
            " differ in size"
        )
    counts = confusion_matrix(
        reference.water.ravel(), test.water.ravel(), labels=[False, True]
    )
    (tn, fp), (fn, tp) = counts.tolist()
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def _percent(numerator: int, denominator: int) -> Optional[float]:
    if not denominator:
        return None
    return 100.0 * numerator / denominator


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    report = MetricsReport(
        cm=cm,
        ppv=_percent(cm.tp, cm.tp + cm.fp),
        npv=_percent(cm.tn, cm.tn + cm.fn),
        sensitivity=_percent(cm.tp, cm.tp + cm.fn),
        specificity=_percent(cm.tn, cm.tn + cm.fp),
        accuracy=_percent(cm.tp + cm.tn, cm.population),
    )
    undefined = [
        name for name in METRIC_NAMES if getattr(report, name) is None
    ]
    if undefined:
        LOG.warning(f"Undefined metrics: {', '.join(undefined)}")
    return report

