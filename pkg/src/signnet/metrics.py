"""Top-1 accuracy reports: overall, per sign group and per class."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data.groups import GROUPS, group_of

NUM_CLASSES = 43

# Published comparison figures (top-1 %), reproduced verbatim for context only.
REFERENCE_OVERALL = {
    "Proposed Method": 99.81,
    "Proposed Method with Google Inception": 99.57,
    "Committee of CNNs": 99.46,
    "Human Performance": 98.84,
    "Multi-Scale CNN": 98.31,
    "pLSA": 98.14,
    "Random Forest": 96.14,
}
REFERENCE_GROUPS = {
    "Proposed Method": (99.86, 100.0, 99.95, 99.72, 99.89, 99.87),
    "Committee of CNNs": (99.47, 99.93, 99.72, 99.89, 99.07, 99.22),
    "Human": (98.32, 99.87, 98.89, 100.00, 99.21, 100.00),
    "Multi-Scale CNN": (98.61, 99.87, 94.44, 97.18, 98.3, 98.63),
    "pLSA": (98.82, 98.27, 97.93, 96.86, 96.95, 100.00),
    "Random Forest": (95.95, 99.13, 87.50, 99.27, 92.08, 98.73),
}

_DIGITS = 4


def _pct(correct, total):
    return None if total == 0 else round(100.0 * correct / total, _DIGITS)


@dataclass
class MetricsReport:
    samples: int
    correct: int
    confusion: np.ndarray  # rows: true class, columns: predicted class
    group_counts: list
    group_correct: list

    @property
    def overall(self):
        return _pct(self.correct, self.samples)

    @property
    def groups(self):
        return {g: _pct(c, n) for g, c, n in zip(GROUPS, self.group_correct, self.group_counts)}

    @property
    def class_counts(self):
        return self.confusion.sum(axis=1)

    def per_class(self):
        diag = np.diag(self.confusion)
        return {k: _pct(int(diag[k]), int(n)) for k, n in enumerate(self.class_counts) if n}

    def weighted_group_mean(self):
        """Sample-weighted mean of the group accuracies (equals ``overall``)."""
        total = sum(self.group_counts)
        if total == 0:
            return None
        return 100.0 * sum(self.group_correct) / total

    def records(self):
        yield {"kind": "overall", "top1": self.overall, "samples": self.samples, "correct": self.correct}
        for g, c, n in zip(GROUPS, self.group_correct, self.group_counts):
            yield {"kind": "group", "group": g, "top1": _pct(c, n), "samples": n, "correct": c}
        diag = np.diag(self.confusion)
        for k, n in enumerate(self.class_counts):
            if n:
                yield {"kind": "class", "class_id": k, "group": GROUPS[group_of(k)],
                       "top1": _pct(int(diag[k]), int(n)), "samples": int(n), "correct": int(diag[k])}
        for name, acc in REFERENCE_OVERALL.items():
            yield {"kind": "reference_overall", "method": name, "top1": acc}
        for name, accs in REFERENCE_GROUPS.items():
            yield {"kind": "reference_groups", "method": name, **dict(zip(GROUPS, accs))}
        rows, cols = np.nonzero(self.confusion)
        yield {"kind": "confusion", "entries": [[int(r), int(c), int(self.confusion[r, c])] for r, c in zip(rows, cols)]}

    def to_jsonl(self):
        return "".join(json.dumps(r) + "\n" for r in self.records())

    def to_text(self):
        def fmt(v):
            return "     n/a" if v is None else f"{v:8.{_DIGITS}f}"

        lines = [f"overall top-1 {fmt(self.overall)} %  ({self.correct}/{self.samples})", "", "group            top-1 %  samples"]
        for g, c, n in zip(GROUPS, self.group_correct, self.group_counts):
            lines.append(f"{g:<15}{fmt(_pct(c, n))}  {n:>7}")
        lines += ["", "class  group            top-1 %  samples"]
        diag = np.diag(self.confusion)
        for k, n in enumerate(self.class_counts):
            if n:
                lines.append(f"{k:>5}  {GROUPS[group_of(k)]:<15}{fmt(_pct(int(diag[k]), int(n)))}  {int(n):>7}")
        lines += ["", "published reference (top-1 %, not reproduced here)"]
        for name, acc in REFERENCE_OVERALL.items():
            lines.append(f"  {name:<40}{acc:6.2f}")
        return "\n".join(lines)


def evaluate_predictions(predicted, labels, num_classes=NUM_CLASSES):
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    hits = predicted == labels
    groups = np.array([group_of(c) for c in labels], dtype=np.int64)
    counts = [int((groups == g).sum()) for g in range(len(GROUPS))]
    correct = [int(hits[groups == g].sum()) for g in range(len(GROUPS))]
    return MetricsReport(int(labels.size), int(hits.sum()), confusion, counts, correct)
