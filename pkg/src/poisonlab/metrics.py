"""Evaluation metrics: accuracy, macro recall/F1/FDR, detection and correction rates.

Classification metrics are standard confusion-matrix definitions with macro
averaging. Detection/correction rates compare a PoisonRecord against a
SanitizationOutcome: detected means the sanitizer touched a poisoned row at
all; corrected means it fully repaired it (true label restored for flips,
removal for injected rows).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import PoisonRecord
from .sanitizer import SanitizationOutcome

METRIC_NAMES = (
    "accuracy",
    "recall_macro",
    "f1_macro",
    "fdr",
    "detection_rate",
    "correction_rate",
)


@dataclass(frozen=True)
class MetricsBundle:
    accuracy: float
    recall_macro: float
    f1_macro: float
    fdr: float
    detection_rate: float | None = None
    correction_rate: float | None = None

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "recall_macro": self.recall_macro,
            "f1_macro": self.f1_macro,
            "fdr": self.fdr,
            "detection_rate": self.detection_rate,
            "correction_rate": self.correction_rate,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MetricsBundle":
        return cls(
            accuracy=float(doc["accuracy"]),
            recall_macro=float(doc["recall_macro"]),
            f1_macro=float(doc["f1_macro"]),
            fdr=float(doc["fdr"]),
            detection_rate=None
            if doc.get("detection_rate") is None
            else float(doc["detection_rate"]),
            correction_rate=None
            if doc.get("correction_rate") is None
            else float(doc["correction_rate"]),
        )


def confusion(y_true, y_pred, class_count: int) -> np.ndarray:
    """C x C count matrix; entry (t, p) counts rows with true t predicted p."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be equal-length vectors")
    if y_true.size == 0:
        raise ValueError("empty input")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.min() < 0 or arr.max() >= class_count:
            raise ValueError(f"{name} contains labels outside [0, {class_count})")
    flat = y_true * class_count + y_pred
    return np.bincount(flat, minlength=class_count * class_count).reshape(
        class_count, class_count
    )


def accuracy(conf: np.ndarray) -> float:
    total = conf.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(conf) / total)


def recall_macro(conf: np.ndarray) -> float:
    """Mean recall over the classes that actually appear in y_true."""
    row_sums = conf.sum(axis=1)
    present = row_sums > 0
    if not present.any():
        raise ValueError("empty confusion matrix")
    recalls = np.diag(conf)[present] / row_sums[present]
    return float(recalls.mean())


def f1_macro(conf: np.ndarray) -> float:
    """Mean F1 over classes present in y_true; F1 = 0 when precision + recall = 0."""
    row_sums = conf.sum(axis=1)
    col_sums = conf.sum(axis=0)
    diag = np.diag(conf)
    present = np.flatnonzero(row_sums > 0)
    if present.size == 0:
        raise ValueError("empty confusion matrix")
    f1s = []
    for c in present:
        recall = diag[c] / row_sums[c]
        precision = diag[c] / col_sums[c] if col_sums[c] > 0 else 0.0
        denom = precision + recall
        f1s.append(2.0 * precision * recall / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


def fdr(conf: np.ndarray) -> float:
    """Macro false discovery rate over classes with at least one prediction."""
    col_sums = conf.sum(axis=0)
    predicted = col_sums > 0
    if not predicted.any():
        raise ValueError("no predictions at all")
    rates = (col_sums[predicted] - np.diag(conf)[predicted]) / col_sums[predicted]
    return float(rates.mean())


def detection_rate(record: PoisonRecord, outcome: SanitizationOutcome) -> float | None:
    """Fraction of poisoned rows the sanitizer touched (relabeled or removed)."""
    poisoned = set(record.poisoned_indices())
    if not poisoned:
        return None
    touched = {e.index for e in outcome.relabeled} | {e.index for e in outcome.removed}
    return len(poisoned & touched) / len(poisoned)


def correction_rate(record: PoisonRecord, outcome: SanitizationOutcome) -> float | None:
    """Fraction of poisoned rows fully repaired.

    A flipped row is corrected iff its final label equals the pre-attack
    label and it was not removed; an injected row is corrected iff removed.
    """
    total = record.budget
    if total == 0:
        return None
    relabeled_to = {e.index: e.new_label for e in outcome.relabeled}
    removed = {e.index for e in outcome.removed}
    corrected = 0
    for f in record.flipped:
        final = relabeled_to.get(f.index, f.new_label)
        if f.index not in removed and final == f.old_label:
            corrected += 1
    for inj in record.injected:
        if inj.index in removed:
            corrected += 1
    return corrected / total


def compute_bundle(
    y_true,
    y_pred,
    class_count: int,
    record: PoisonRecord | None = None,
    outcome: SanitizationOutcome | None = None,
) -> MetricsBundle:
    """All six metrics for one experiment cell; DR/CR only when a sanitizer ran."""
    conf = confusion(y_true, y_pred, class_count)
    dr = cr = None
    if record is not None and outcome is not None:
        dr = detection_rate(record, outcome)
        cr = correction_rate(record, outcome)
    return MetricsBundle(
        accuracy=accuracy(conf),
        recall_macro=recall_macro(conf),
        f1_macro=f1_macro(conf),
        fdr=fdr(conf),
        detection_rate=dr,
        correction_rate=cr,
    )
