# Copyright (C) 2025-2026, crowdship-sim contributors.

# This program is licensed under the Apache License 2.0.
# See LICENSE or go to <https://opensource.org/licenses/Apache-2.0> for full license details.

from dataclasses import dataclass

from .hoeffding_tree import Label

__all__ = ["PrequentialMetrics", "prequential_update"]


@dataclass
class PrequentialMetrics:
    """
    Confusion counts of a test-then-train evaluation, the positive class is `Label.DELAY`.

    Ratios whose denominator is still zero are reported as None.
    """

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float | None:
        return (self.tp + self.tn) / self.total if self.total else None

    @property
    def precision(self) -> float | None:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> float | None:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    def update(self, predicted: Label, actual: Label) -> "PrequentialMetrics":
        if predicted == Label.DELAY:
            if actual == Label.DELAY:
                self.tp += 1
            else:
                self.fp += 1
        elif actual == Label.DELAY:
            self.fn += 1
        else:
            self.tn += 1
        return self

    def as_row(self) -> dict[str, float | None]:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall}


def prequential_update(metrics: PrequentialMetrics, predicted: Label, actual: Label) -> PrequentialMetrics:
    """
    Count one prediction against its actual outcome.

    Args:
        metrics: PrequentialMetrics: The running counts, updated in place
        predicted: Label: The predicted label
        actual: Label: The observed label

    Returns:
        PrequentialMetrics: The updated metrics
    """
    return metrics.update(predicted, actual)
