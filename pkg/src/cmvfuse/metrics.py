"""Accuracy / macro-F1 reports over the three sentiment classes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graphs import LABELS


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: list[list[int]]
    loss: float | None = None

    @classmethod
    def from_confusion(cls, confusion, loss: float | None = None) -> "EvalReport":
        """Rows are gold classes, columns predictions. Undefined ratios are 0."""
        cm = np.asarray(confusion, dtype=np.int64)
        tp = np.diag(cm).astype(float)
        predicted = cm.sum(axis=0).astype(float)
        actual = cm.sum(axis=1).astype(float)
        precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
        recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
        denom = precision + recall
        f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
        total = cm.sum()
        return cls(
            accuracy=float(tp.sum() / total) if total else 0.0,
            macro_f1=float(f1.mean()),
            precision=precision.tolist(),
            recall=recall.tolist(),
            f1=f1.tolist(),
            confusion=cm.tolist(),
            loss=loss,
        )

    @classmethod
    def from_predictions(cls, gold: Sequence[int], predicted: Sequence[int],
                         loss: float | None = None) -> "EvalReport":
        cm = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
        for g, p in zip(gold, predicted):
            cm[g, p] += 1
        return cls.from_confusion(cm, loss)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": {
                label: {"precision": p, "recall": r, "f1": f}
                for label, p, r, f in zip(LABELS, self.precision, self.recall, self.f1)
            },
            "confusion": self.confusion,
            "loss": self.loss,
        }

    def to_text(self) -> str:
        lines = [f"accuracy  {self.accuracy:.4f}", f"macro_f1  {self.macro_f1:.4f}"]
        if self.loss is not None:
            lines.append(f"ce_loss   {self.loss:.4f}")
        lines.append(f"{'class':<10}{'precision':>10}{'recall':>10}{'f1':>10}")
        for label, p, r, f in zip(LABELS, self.precision, self.recall, self.f1):
            lines.append(f"{label:<10}{p:>10.4f}{r:>10.4f}{f:>10.4f}")
        lines.append("confusion (rows gold, cols predicted): " + str(self.confusion))
        return "\n".join(lines)
