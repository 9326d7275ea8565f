"""Accuracy splits, feature-space geometry and cross-seed consistency."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "HBT_RULE",
    "SEPARABILITY_CAP",
    "MetricsReport",
    "ConsistencyScore",
    "per_class_accuracy",
    "hbt_groups",
    "hbt_summary",
    "class_centroids",
    "compactness",
    "separability",
    "dependency_matrix",
    "cross_seed_consistency",
    "build_report",
]

HBT_RULE = "classes sorted by training count (desc, ties by index), split into tertiles, remainder to head then body"
SEPARABILITY_CAP = 1e12


@dataclass
class MetricsReport:
    overall_acc: float
    per_class_acc: np.ndarray
    head_acc: float
    body_acc: float
    tail_acc: float
    compactness: float
    separability: float
    dependency: np.ndarray
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall_acc": _num(self.overall_acc),
            "per_class_acc": [_num(v) for v in self.per_class_acc],
            "head_acc": _num(self.head_acc),
            "body_acc": _num(self.body_acc),
            "tail_acc": _num(self.tail_acc),
            "hbt_rule": HBT_RULE,
            "compactness": _num(self.compactness),
            "separability": _num(self.separability),
            "dependency": [[_num(v) for v in row] for row in self.dependency],
            "notes": list(self.notes),
        }


def _num(v):
    """JSON-safe float: NaN becomes None."""
    v = float(v)
    return None if math.isnan(v) else v


@dataclass
class ConsistencyScore:
    mean: float
    pairs: dict[tuple[int, int], float]


def per_class_accuracy(preds, labels, C: int) -> np.ndarray:
    """Fraction correct per class; NaN for classes absent from ``labels``."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"preds {preds.shape} and labels {labels.shape} differ")
    total = np.bincount(labels, minlength=C)[:C]
    correct = np.bincount(labels[preds == labels], minlength=C)[:C]
    acc = np.full(C, np.nan)
    seen = total > 0
    acc[seen] = correct[seen] / total[seen]
    return acc


def hbt_groups(class_counts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    counts = np.asarray(class_counts)
    C = counts.shape[0]
    order = np.lexsort((np.arange(C), -counts))
    if C < 3:
        return order[:1], order[1:1], order[1:]
    base, rem = divmod(C, 3)
    n_head = base + (rem > 0)
    n_body = base + (rem > 1)
    return order[:n_head], order[n_head:n_head + n_body], order[n_head + n_body:]


def _nanmean(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    values = values[~np.isnan(values)]
    return float(values.mean()) if values.size else float("nan")


def hbt_summary(per_class_acc, class_counts) -> tuple[float, float, float]:
    """Mean accuracy over the head, body and tail tertiles of classes.

    With fewer than three classes there is no body (returned as NaN).
    """
    acc = np.asarray(per_class_acc, dtype=np.float64)
    if acc.shape[0] != np.asarray(class_counts).shape[0]:
        raise ValueError("per_class_acc and class_counts lengths differ")
    head, body, tail = hbt_groups(class_counts)
    return _nanmean(acc[head]), _nanmean(acc[body]), _nanmean(acc[tail])


def class_centroids(F, labels, C: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    F = np.asarray(F, dtype=np.float64)
    labels = np.asarray(labels)
    C = int(labels.max()) + 1 if C is None else C
    sums = np.zeros((C, F.shape[1]))
    np.add.at(sums, labels, F)
    counts = np.bincount(labels, minlength=C)
    present = counts > 0
    cent = np.full_like(sums, np.nan)
    cent[present] = sums[present] / counts[present][:, None]
    return cent, present


def compactness(F, labels) -> float:
    """Mean Euclidean distance from each sample to its class centroid."""
    cent, present = class_centroids(F, labels)
    if present.sum() < 2:
        raise ValueError("compactness needs at least two classes present")
    labels = np.asarray(labels)
    return float(np.linalg.norm(np.asarray(F) - cent[labels], axis=1).mean())


def separability(F, labels) -> float:
    """Smallest centroid-to-centroid distance divided by compactness."""
    cent, present = class_centroids(F, labels)
    if present.sum() < 2:
        raise ValueError("separability needs at least two classes present")
    c = cent[present]
    gaps = [np.linalg.norm(c[i] - c[j]) for i, j in itertools.combinations(range(c.shape[0]), 2)]
    spread = compactness(F, labels)
    if spread == 0.0:
        return SEPARABILITY_CAP
    return float(min(min(gaps) / spread, SEPARABILITY_CAP))


def dependency_matrix(reps) -> np.ndarray:
    """Cosine similarity between class representation rows.

    Zero (or missing) rows give NaN off-diagonal entries; the diagonal is 1.
    """
    R = np.asarray(reps, dtype=np.float64)
    norms = np.linalg.norm(R, axis=1)
    bad = ~(norms > 0)
    safe = np.where(bad, 1.0, norms)
    unit = np.where(bad[:, None], 0.0, R / safe[:, None])
    dep = unit @ unit.T
    dep = 0.5 * (dep + dep.T)
    dep[bad, :] = np.nan
    dep[:, bad] = np.nan
    np.fill_diagonal(dep, 1.0)
    return dep


def cross_seed_consistency(matrices) -> ConsistencyScore:
    """Mean Pearson correlation of the strict upper triangles over run pairs.

    Pairs where either triangle is constant (or has NaN) are skipped.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in matrices]
    if len(mats) < 2:
        raise ValueError("need at least two matrices")
    C = mats[0].shape[0]
    if any(m.shape != (C, C) for m in mats):
        raise ValueError("all matrices must share the same C x C shape")
    iu = np.triu_indices(C, k=1)
    vecs = [m[iu] for m in mats]
    pairs = {}
    for i, j in itertools.combinations(range(len(vecs)), 2):
        a, b = vecs[i], vecs[j]
        if np.isnan(a).any() or np.isnan(b).any() or a.std() == 0 or b.std() == 0:
            pairs[(i, j)] = float("nan")
            continue
        a0, b0 = a - a.mean(), b - b.mean()
        r = float(np.dot(a0, b0) / math.sqrt(np.dot(a0, a0) * np.dot(b0, b0)))
        pairs[(i, j)] = max(-1.0, min(1.0, r))
    return ConsistencyScore(mean=_nanmean(list(pairs.values())), pairs=pairs)


def build_report(preds, labels, F, train_counts, C: int) -> MetricsReport:
    labels = np.asarray(labels)
    acc = per_class_accuracy(preds, labels, C)
    head, body, tail = hbt_summary(acc, train_counts)
    cent, present = class_centroids(F, labels, C)
    notes = [f"head/body/tail: {HBT_RULE}"]
    singletons = [c for c in range(C) if np.sum(labels == c) == 1]
    if singletons:
        notes.append(f"classes with a single test sample contribute distance 0: {singletons}")
    return MetricsReport(
        overall_acc=float(np.mean(np.asarray(preds) == labels)),
        per_class_acc=acc,
        head_acc=head,
        body_acc=body,
        tail_acc=tail,
        compactness=compactness(F, labels),
        separability=separability(F, labels),
        dependency=dependency_matrix(np.where(present[:, None], cent, 0.0)),
        notes=notes,
    )
