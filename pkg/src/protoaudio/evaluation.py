"""Clip-level multi-label metrics with class masking: macro AUROC, cmAP, top-1 accuracy."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass
class EvalTable:
    labels: np.ndarray
    scores: np.ndarray
    class_mask: np.ndarray | None = None
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels).astype(np.int8)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.labels.shape != self.scores.shape or self.labels.ndim != 2:
            raise MetricError("labels and scores must be matching N x C matrices")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise MetricError("labels must be binary")
        if not np.all(np.isfinite(self.scores)):
            raise MetricError("scores must be finite")
        if np.any((self.scores < 0.0) | (self.scores > 1.0)):
            raise MetricError("scores must lie in [0, 1]")
        c = self.labels.shape[1]
        if self.class_mask is None:
            self.class_mask = np.ones(c, dtype=bool)
        self.class_mask = np.asarray(self.class_mask, dtype=bool)
        if self.class_mask.shape != (c,):
            raise MetricError("class_mask length must equal the number of classes")
        if not self.class_names:
            self.class_names = [f"class_{i}" for i in range(c)]

    def masked(self) -> tuple[np.ndarray, np.ndarray, list]:
        m = self.class_mask
        return self.labels[:, m], self.scores[:, m], [n for n, k in zip(self.class_names, m) if k]


def class_auroc(labels: np.ndarray, scores: np.ndarray) -> float | None:
    """Probability that a positive outscores a negative, ties worth one half.

    Computed from mid-ranks (Mann-Whitney U). None when the class lacks
    positives or negatives.
    """
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def class_average_precision(labels: np.ndarray, scores: np.ndarray) -> float | None:
    """Mean precision at the rank of each positive; ties broken by instance index."""
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    hits = labels[order].astype(np.float64)
    precision = np.cumsum(hits) / np.arange(1, hits.shape[0] + 1)
    return float(np.sum(precision * hits) / n_pos)


def per_class(t: EvalTable, fn) -> tuple[dict, list]:
    labels, scores, names = t.masked()
    values, skipped = {}, []
    for k, name in enumerate(names):
        v = fn(labels[:, k], scores[:, k])
        if v is None:
            skipped.append(name)
        else:
            values[name] = v
    return values, skipped


def auroc(t: EvalTable) -> float:
    values, _ = per_class(t, class_auroc)
    if not values:
        raise MetricError("undefined AUROC: no class has both positives and negatives")
    return float(np.mean(list(values.values())))


def cmap(t: EvalTable) -> float:
    values, _ = per_class(t, class_average_precision)
    if not values:
        raise MetricError("undefined cmAP: no class has a positive instance")
    return float(np.mean(list(values.values())))


def top1(t: EvalTable, return_excluded: bool = False):
    """Fraction of instances whose highest-scoring (masked) class is a true class.

    Instances without any true (masked) class are excluded.
    """
    labels, scores, _ = t.masked()
    keep = labels.sum(axis=1) > 0
    excluded = int((~keep).sum())
    if not keep.any():
        raise MetricError("undefined top-1 accuracy: no instance has a true class")
    best = np.argmax(scores[keep], axis=1)
    value = float(np.mean(labels[keep][np.arange(best.shape[0]), best] == 1))
    return (value, excluded) if return_excluded else value


def report(t: EvalTable, dataset: str = "") -> dict:
    """All metrics plus a per-class breakdown, in the JSON report layout."""
    if not t.class_mask.any():
        raise MetricError("class mask selects zero classes")
    aurocs, skip_auroc = per_class(t, class_auroc)
    aps, skip_ap = per_class(t, class_average_precision)
    t1, excluded = top1(t, return_excluded=True)
    labels, _, names = t.masked()
    rows = [{"class": name, "n_positive": int(labels[:, k].sum()),
             "auroc": aurocs.get(name), "ap": aps.get(name)}
            for k, name in enumerate(names)]
    skipped = [{"class": name, "metric": "auroc"} for name in skip_auroc]
    skipped += [{"class": name, "metric": "ap"} for name in skip_ap]
    return {
        "dataset": dataset,
        "n_instances": int(t.labels.shape[0]),
        "n_classes_evaluated": int(t.class_mask.sum()),
        "auroc": float(np.mean(list(aurocs.values()))) if aurocs else None,
        "cmap": float(np.mean(list(aps.values()))) if aps else None,
        "top1": t1,
        "n_excluded_from_top1": excluded,
        "per_class": rows,
        "skipped_classes": skipped,
    }


def read_mask(path: str | Path, class_names: Sequence[str]) -> np.ndarray:
    """Class-mask file: newline-separated class names."""
    wanted = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    unknown = sorted(set(wanted) - set(class_names))
    if unknown:
        raise MetricError(f"mask names unknown classes: {unknown}")
    mask = np.array([name in set(wanted) for name in class_names], dtype=bool)
    if not mask.any():
        raise MetricError("class mask selects zero classes")
    return mask


def write_report(path: str | Path, rep: dict) -> None:
    Path(path).write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
