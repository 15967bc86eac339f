"""Concept detection metrics: exact-match accuracy and sample-averaged P/R/F1."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import AbstractSet

from .core import ConceptAnnotationSet, SampleScore

log = logging.getLogger(__name__)


class MissingPredictionError(KeyError):
    """A gold image has no entry in the predictions."""

    def __init__(self, image_id: str):
        self.image_id = image_id
        super().__init__(image_id)

    def __str__(self) -> str:
        return f"no prediction for gold image {self.image_id!r}"


@dataclass(frozen=True)
class ConceptEvalResult:
    accuracy: float
    precision: float
    recall: float
    f1: float
    n_samples: int
    per_sample: tuple[SampleScore, ...]
    ignored_predictions: int = 0

    def as_metrics(self) -> dict[str, float]:
        return {
            "Accuracy": self.accuracy,
            "Precision": self.precision,
            "Recall": self.recall,
            "F1": self.f1,
        }


def score_concept_sets(gold: AbstractSet[str], predicted: AbstractSet[str]) -> SampleScore:
    """Score one image's predicted concept set against its gold set.

    An image with no gold concepts and no predictions counts as perfect.
    """
    gold = frozenset(gold)
    predicted = frozenset(predicted)
    if not gold and not predicted:
        return SampleScore(1.0, 1.0, 1.0, True)
    hits = len(gold & predicted)
    precision = hits / len(predicted) if predicted else 0.0
    recall = hits / len(gold) if gold else 0.0
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    return SampleScore(precision, recall, f1, gold == predicted)


def _mean(values) -> float:
    # sequential left-to-right sum keeps results bit-identical across runs
    total = 0.0
    n = 0
    for v in values:
        total += v
        n += 1
    return total / n


def evaluate_concepts(gold: ConceptAnnotationSet, predicted: ConceptAnnotationSet) -> ConceptEvalResult:
    """Score every gold image, in gold order, and average the per-image scores.

    Raises MissingPredictionError if a gold image is absent from
    ``predicted``.  Predicted-only images are skipped and counted in
    ``ignored_predictions``.
    """
    if not gold:
        raise ValueError("gold annotation set is empty")
    scores = []
    for image_id, gold_set in gold.items():
        if image_id not in predicted:
            raise MissingPredictionError(image_id)
        scores.append(score_concept_sets(gold_set, predicted[image_id]))
    ignored = sum(1 for image_id in predicted if image_id not in gold)
    if ignored:
        log.warning("%d predicted image(s) not in gold were ignored", ignored)
    n = len(scores)
    return ConceptEvalResult(
        accuracy=sum(1 for s in scores if s.exact_match) / n,
        precision=_mean(s.precision for s in scores),
        recall=_mean(s.recall for s in scores),
        f1=_mean(s.f1 for s in scores),
        n_samples=n,
        per_sample=tuple(scores),
        ignored_predictions=ignored,
    )
