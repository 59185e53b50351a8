"""Group-wise metrics, checkpoint selection, and minority-identification quality."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import FeatureDataset, ValidationError
from .probe import LinearScorer


@dataclass(frozen=True)
class EvalReport:
    split: str
    n: int
    average_accuracy: float
    per_group_accuracy: dict[tuple[int, int], float] = field(default_factory=dict)  # (attribute, class) -> acc
    group_sizes: dict[tuple[int, int], int] = field(default_factory=dict)
    worst_group_accuracy: float | None = None
    balanced_group_error: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "split": self.split,
            "n": self.n,
            "average_accuracy": self.average_accuracy,
            "worst_group_accuracy": self.worst_group_accuracy,
            "balanced_group_error": self.balanced_group_error,
            "per_group_accuracy": {f"a{a}_y{y}": v for (a, y), v in sorted(self.per_group_accuracy.items())},
            "group_sizes": {f"a{a}_y{y}": v for (a, y), v in sorted(self.group_sizes.items())},
        }


@dataclass(frozen=True)
class IdentificationReport:
    precision: float
    recall: float
    worst_group: tuple[int, int]  # (attribute, class)
    identified_count: int
    worst_group_size: int
    empty_identified: bool = False

    def to_json_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "worst_group": {"attribute": self.worst_group[0], "class": self.worst_group[1]},
            "identified_count": self.identified_count,
            "worst_group_size": self.worst_group_size,
            "empty_identified": self.empty_identified,
        }


def evaluate(
    scorer: LinearScorer, ds: FeatureDataset, split: str = "test", group_metrics: bool = True
) -> EvalReport:
    """Accuracy report over one split; group metrics use true (attribute, class) cells.

    Empty groups are excluded from the worst-group minimum and the balanced
    error mean; ``group_sizes`` records which cells were populated.
    """
    idx = ds.split_indices(split)
    if idx.size == 0:
        raise ValidationError(f"split {split!r} is empty")
    x = ds.features[idx].astype(np.float64)
    y = ds.labels[idx]
    pred = scorer.predict(x)
    correct = pred == y
    avg = float(correct.mean())
    if not group_metrics:
        return EvalReport(split=split, n=int(idx.size), average_accuracy=avg)
    if ds.attributes is None:
        raise ValidationError("group metrics requested but dataset has no attributes")
    attrs = ds.attributes[idx]
    per_group: dict[tuple[int, int], float] = {}
    sizes: dict[tuple[int, int], int] = {}
    for a in range(ds.attribute_count):
        for cls in range(ds.class_count):
            mask = (attrs == a) & (y == cls)
            size = int(mask.sum())
            if size == 0:
                continue
            sizes[(a, cls)] = size
            per_group[(a, cls)] = float(correct[mask].mean())
    accs = list(per_group.values())
    return EvalReport(
        split=split,
        n=int(idx.size),
        average_accuracy=avg,
        per_group_accuracy=per_group,
        group_sizes=sizes,
        worst_group_accuracy=min(accs),
        balanced_group_error=1.0 - float(np.mean(accs)),
    )


def select_model(
    snapshots: list[LinearScorer], ds: FeatureDataset, split: str = "val", criterion: str = "wga"
) -> tuple[LinearScorer, int, EvalReport]:
    """Pick the snapshot with the best validation score.

    ``criterion`` is "wga" (highest worst-group accuracy, needs attributes)
    or "avg" (highest average accuracy, the usual rule for plain baselines).
    Ties resolve to the earliest epoch. Returns (scorer, 0-based epoch index,
    that epoch's validation report).
    """
    if not snapshots:
        raise ValidationError("no snapshots to select from")
    if criterion not in ("wga", "avg"):
        raise ValidationError(f"unknown selection criterion {criterion!r}")
    group_metrics = criterion == "wga"
    best_idx, best_score, best_report = 0, -1.0, None
    for i, scorer in enumerate(snapshots):
        report = evaluate(scorer, ds, split=split, group_metrics=group_metrics)
        score = report.worst_group_accuracy if criterion == "wga" else report.average_accuracy
        if score > best_score:
            best_idx, best_score, best_report = i, score, report
    return snapshots[best_idx], best_idx, best_report


def identification_quality(
    pseudo_attribute: np.ndarray,
    ds: FeatureDataset,
    reference_val_report: EvalReport,
    split: str = "train",
) -> IdentificationReport:
    """Precision/recall of the identified minority against the worst group.

    The worst group is the (attribute, class) cell with the lowest accuracy
    in the reference model's validation report; the identified minority is
    the set of samples the biased model misclassified (pseudo-attribute 1).
    An empty identified set yields a flagged precision of 0.
    """
    if ds.attributes is None:
        raise ValidationError("identification quality requires ground-truth attributes")
    if not reference_val_report.per_group_accuracy:
        raise ValidationError("reference report carries no per-group accuracies")
    worst = min(reference_val_report.per_group_accuracy.items(), key=lambda kv: (kv[1], kv[0]))[0]
    idx = ds.split_indices(split)
    attrs = ds.attributes[idx]
    labels = ds.labels[idx]
    pseudo = np.asarray(pseudo_attribute, dtype=np.int64)
    if pseudo.shape != idx.shape:
        raise ValidationError("pseudo-attribute length does not match split size")
    in_worst = (attrs == worst[0]) & (labels == worst[1])
    identified = pseudo == 1
    hit = int((identified & in_worst).sum())
    n_id = int(identified.sum())
    n_worst = int(in_worst.sum())
    recall = hit / n_worst if n_worst else 0.0
    if n_id == 0:
        return IdentificationReport(0.0, recall, worst, 0, n_worst, empty_identified=True)
    return IdentificationReport(hit / n_id, recall, worst, n_id, n_worst)


def report_csv(report: EvalReport) -> str:
    lines = ["attribute,class,size,accuracy"]
    for (a, y), acc in sorted(report.per_group_accuracy.items()):
        lines.append(f"{a},{y},{report.group_sizes[(a, y)]},{acc:.6f}")
    return "\n".join(lines) + "\n"
