"""Multi-label average precision at component and composite levels.

AP is computed per class over descending score order with ties broken by
ascending frame index, so every number here is a deterministic function of
(scores, labels, vocabulary).  Component families (I, V, T, IV, IT) project
triplet scores by max over each group and ground truth by OR, then score the
projected problem the same way.  Classes with no positive frames have no
defined AP; they are excluded from family means and flagged in the report.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .schema import FAMILIES, Vocabulary, component_maps


class MetricsError(ValueError):
    pass


def average_precision(scores: np.ndarray, labels: np.ndarray):
    """AP of one class; None when the class has no positive frames."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise MetricsError(f"scores {scores.shape} and labels {labels.shape} "
                           "must be equal-length vectors")
    if scores.size == 0:
        raise MetricsError("empty evaluation set")
    if not labels.any():
        return None
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = labels[order]
    precision = np.cumsum(hits) / np.arange(1, scores.size + 1)
    return float(precision[hits].mean())


def component_scores(triplet_scores: np.ndarray, group_of: np.ndarray) -> np.ndarray:
    """Project (N, C) triplet scores to (N, G) group scores by max."""
    triplet_scores = np.asarray(triplet_scores, dtype=np.float64)
    group_of = np.asarray(group_of)
    if triplet_scores.ndim != 2 or triplet_scores.shape[1] != group_of.size:
        raise MetricsError(f"score matrix {triplet_scores.shape} does not match "
                           f"a {group_of.size}-class map")
    g_count = int(group_of.max()) + 1
    out = np.full((triplet_scores.shape[0], g_count), -np.inf)
    for c, g in enumerate(group_of):
        np.maximum(out[:, g], triplet_scores[:, c], out=out[:, g])
    return out


def component_labels(triplet_labels: np.ndarray, group_of: np.ndarray) -> np.ndarray:
    """Project (N, C) binary labels to (N, G) group labels by OR."""
    triplet_labels = np.asarray(triplet_labels).astype(bool)
    group_of = np.asarray(group_of)
    if triplet_labels.ndim != 2 or triplet_labels.shape[1] != group_of.size:
        raise MetricsError(f"label matrix {triplet_labels.shape} does not match "
                           f"a {group_of.size}-class map")
    g_count = int(group_of.max()) + 1
    out = np.zeros((triplet_labels.shape[0], g_count), dtype=bool)
    for c, g in enumerate(group_of):
        out[:, g] |= triplet_labels[:, c]
    return out


@dataclass
class FamilyResult:
    family: str
    class_names: list
    ap: list                 # per class, None where undefined
    positives: list          # positive frame count per class
    mean_ap: float | None    # mean over defined classes
    excluded: list           # class indices with zero positives


@dataclass
class EvalReport:
    families: dict           # family -> FamilyResult
    num_frames: int

    def mean(self, family: str):
        return self.families[family].mean_ap

    def as_dict(self) -> dict:
        doc = {"num_frames": self.num_frames, "families": {}}
        for fam in FAMILIES:
            r = self.families[fam]
            doc["families"][fam] = {
                "class_names": r.class_names,
                "ap": r.ap,
                "positives": r.positives,
                "mean_ap": r.mean_ap,
                "excluded": r.excluded,
            }
        return doc


def _score_family(scores: np.ndarray, labels: np.ndarray, names: list, fam: str) -> FamilyResult:
    ap, positives, excluded = [], [], []
    for g in range(scores.shape[1]):
        pos = int(labels[:, g].sum())
        positives.append(pos)
        value = average_precision(scores[:, g], labels[:, g])
        ap.append(value)
        if value is None:
            excluded.append(g)
    defined = [v for v in ap if v is not None]
    mean_ap = float(np.mean(defined)) if defined else None
    return FamilyResult(fam, list(names), ap, positives, mean_ap, excluded)


def evaluate(predictions: np.ndarray, ground_truth: np.ndarray,
             vocab: Vocabulary) -> EvalReport:
    """Score all six AP families from (N, C) predictions and labels."""
    predictions = np.asarray(predictions, dtype=np.float64)
    ground_truth = np.asarray(ground_truth)
    if predictions.ndim != 2 or predictions.shape != ground_truth.shape:
        raise MetricsError(f"prediction {predictions.shape} and ground truth "
                           f"{ground_truth.shape} shapes must match")
    if predictions.shape[1] != vocab.num_classes:
        raise MetricsError(f"{predictions.shape[1]} score columns for a "
                           f"{vocab.num_classes}-class vocabulary")
    if predictions.shape[0] == 0:
        raise MetricsError("empty evaluation set")
    maps = component_maps(vocab)
    families = {}
    for fam in FAMILIES:
        group_of, names = maps[fam]
        fam_scores = component_scores(predictions, group_of)
        fam_labels = component_labels(ground_truth, group_of)
        families[fam] = _score_family(fam_scores, fam_labels, names, fam)
    return EvalReport(families, int(predictions.shape[0]))


def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(report: EvalReport, path) -> None:
    """One row per class per family; undefined AP cells stay empty."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "class_index", "class_name", "positives", "ap"])
        for fam in FAMILIES:
            r = report.families[fam]
            for g, name in enumerate(r.class_names):
                cell = "" if r.ap[g] is None else f"{r.ap[g]:.12f}"
                writer.writerow([fam, g, name, r.positives[g], cell])
