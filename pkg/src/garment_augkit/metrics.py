"""Evaluation: normalized landmark error, top-k category accuracy and report tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import AbstractSet, Optional, Sequence, Union

import numpy as np

from .core import LANDMARK_NAMES, N_LANDMARKS, AugkitError, CategoryDistribution, LandmarkSet, ShapeError

MISSED_DETECTION_ERROR = math.sqrt(2.0)

Label = Union[str, AbstractSet[str]]


class EmptyEvaluationError(AugkitError, ValueError):
    pass


def normalized_error(pred: LandmarkSet, gt: LandmarkSet, width: int, height: int) -> list[Optional[float]]:
    """Per-slot distance in coordinates normalized by image width and height.

    Slots the ground truth lacks (empty or out of frame) give ``None``.  A
    ground-truth slot with no in-frame prediction costs the maximal error sqrt(2).
    """
    out: list[Optional[float]] = []
    for p, g in zip(pred, gt):
        if g is None or not g.in_frame:
            out.append(None)
        elif p is None or not p.in_frame:
            out.append(MISSED_DETECTION_ERROR)
        else:
            out.append(math.sqrt(((p.x - g.x) / width) ** 2 + ((p.y - g.y) / height) ** 2))
    return out


def topk_ranking(dist: CategoryDistribution, k: int) -> list[str]:
    """The ``k`` highest-probability names; equal probabilities rank by vocabulary index."""
    order = np.lexsort((np.arange(dist.n_categories), -dist.probabilities))
    return [dist.names[i] for i in order[:k]]


def _hit(top: Sequence[str], label: Label) -> bool:
    if isinstance(label, str):
        return label in top
    return any(name in top for name in label)


def topk_accuracy(preds: Sequence[CategoryDistribution], gts: Sequence[Label], k: int) -> float:
    """Percentage of samples whose label is among the top ``k`` predictions.

    A label may be a set of names (a mapped category); any member counts as a hit.
    """
    if len(preds) != len(gts):
        raise ShapeError(f"{len(preds)} predictions but {len(gts)} labels")
    if not preds:
        raise EmptyEvaluationError("no samples to score")
    hits = 0
    for dist, label in zip(preds, gts):
        if not 1 <= k <= dist.n_categories:
            raise ShapeError(f"k={k} outside [1, {dist.n_categories}]")
        hits += _hit(topk_ranking(dist, k), label)
    return 100.0 * hits / len(preds)


@dataclass(frozen=True)
class EvalSample:
    pred: LandmarkSet
    gt: LandmarkSet
    width: int = 224
    height: int = 224
    scores: Optional[CategoryDistribution] = None
    label: Optional[Label] = None
    category: Optional[str] = None  # grouping key for per-category accuracy; defaults to the label


@dataclass
class EvalReport:
    per_landmark: list[Optional[float]]
    average: Optional[float]
    overall_topk: dict[int, float] = field(default_factory=dict)
    per_category_topk: dict[str, dict[int, float]] = field(default_factory=dict)
    category_counts: dict[str, int] = field(default_factory=dict)
    sample_count: int = 0
    landmark_counts: list[int] = field(default_factory=list)

    def to_tsv(self) -> str:
        """Tab-separated table: one NE row in result-table column order, then accuracy rows."""
        lines = ["\t".join(["metric", *LANDMARK_NAMES, "Avg."])]
        cells = ["-" if v is None else f"{v:.4f}" for v in self.per_landmark]
        cells.append("-" if self.average is None else f"{self.average:.4f}")
        lines.append("\t".join(["NE", *cells]))
        if self.overall_topk:
            ks = sorted(self.overall_topk)
            lines.append("\t".join(["category", *[f"top-{k}" for k in ks], "count"]))
            lines.append("\t".join(["overall", *[f"{self.overall_topk[k]:.2f}" for k in ks],
                                    str(sum(self.category_counts.values()))]))
            for name in sorted(self.per_category_topk):
                row = self.per_category_topk[name]
                lines.append("\t".join([name, *[f"{row[k]:.2f}" for k in ks], str(self.category_counts[name])]))
        return "\n".join(lines) + "\n"


def _label_key(label: Label) -> str:
    return label if isinstance(label, str) else "|".join(sorted(label))


def build_report(samples: Sequence[EvalSample], k_list: Sequence[int] = (1, 3, 5)) -> EvalReport:
    if not samples:
        raise EmptyEvaluationError("nothing to evaluate")
    sums = [0.0] * N_LANDMARKS
    counts = [0] * N_LANDMARKS
    for s in samples:
        for i, e in enumerate(normalized_error(s.pred, s.gt, s.width, s.height)):
            if e is not None:
                sums[i] += e
                counts[i] += 1
    per = [sums[i] / counts[i] if counts[i] else None for i in range(N_LANDMARKS)]
    evaluated = [v for v in per if v is not None]
    report = EvalReport(per, sum(evaluated) / len(evaluated) if evaluated else None,
                        sample_count=len(samples), landmark_counts=counts)

    scored = [s for s in samples if s.scores is not None and s.label is not None]
    if scored and k_list:
        groups: dict[str, list[EvalSample]] = {}
        for s in scored:
            groups.setdefault(s.category or _label_key(s.label), []).append(s)
        for k in k_list:
            report.overall_topk[k] = topk_accuracy([s.scores for s in scored], [s.label for s in scored], k)
            for name, members in groups.items():
                report.per_category_topk.setdefault(name, {})[k] = topk_accuracy(
                    [s.scores for s in members], [s.label for s in members], k)
        report.category_counts = {name: len(m) for name, m in groups.items()}
    return report
