"""Turning concept probabilities into predictions.

Covers global-threshold filtering, threshold sweeps, probability-averaging
ensembles, frequency-based vocabulary filtering and the rendering of
retained concepts as text for caption fusion.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from ._parallel import ordered_map
from .concept_scoring import ConceptEvalResult, evaluate_concepts
from .core import (
    ConceptAnnotationSet,
    ConceptVocabulary,
    ProbabilityMatrix,
    ThresholdConfig,
    VocabEntry,
)

DEFAULT_SWEEP = (0.45, 0.5, 0.01)

# grid points are rounded to this many decimals so 0.45 + 2*0.01 is exactly 0.47
_GRID_DECIMALS = 12


class EnsembleMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class SweepResult:
    grid: tuple[tuple[float, ConceptEvalResult], ...]
    best_tau: float
    best_f1: float


def _as_config(config) -> ThresholdConfig:
    return config if isinstance(config, ThresholdConfig) else ThresholdConfig(config)


def apply_threshold(matrix: ProbabilityMatrix, config) -> ConceptAnnotationSet:
    """Predicted set per image = concepts whose score is strictly above tau."""
    tau = _as_config(config).tau
    cuis = matrix.concepts.cuis
    keep = matrix.values > tau
    return ConceptAnnotationSet(
        (image_id, [cuis[j] for j in np.flatnonzero(row)])
        for image_id, row in zip(matrix.image_ids, keep)
    )


def threshold_grid(start: float, stop: float, step: float) -> list[float]:
    """Index-based grid start, start+step, ... ending exactly at ``stop``.

    A grid point closer than step/2 to ``stop`` is replaced by ``stop``.
    """
    if not (math.isfinite(start) and math.isfinite(stop) and math.isfinite(step)):
        raise ValueError("sweep bounds must be finite")
    if step <= 0:
        raise ValueError("step must be positive")
    if start > stop:
        raise ValueError(f"empty grid: start {start} > stop {stop}")
    grid = []
    i = 0
    while True:
        tau = round(start + i * step, _GRID_DECIMALS)
        if tau >= stop - step / 2:
            break
        grid.append(tau)
        i += 1
    grid.append(float(stop))
    for tau in grid:
        ThresholdConfig(tau)
    return grid


def sweep_thresholds(
    matrix: ProbabilityMatrix,
    gold: ConceptAnnotationSet,
    start: float = DEFAULT_SWEEP[0],
    stop: float = DEFAULT_SWEEP[1],
    step: float = DEFAULT_SWEEP[2],
    threads: Optional[int] = 1,
) -> SweepResult:
    """Evaluate every grid threshold; the best is the smallest tau with maximal F1."""
    grid = threshold_grid(start, stop, step)
    results = ordered_map(lambda tau: evaluate_concepts(gold, apply_threshold(matrix, tau)), grid, threads)
    best_tau, best = grid[0], results[0]
    for tau, res in zip(grid[1:], results[1:]):
        if res.f1 > best.f1:
            best_tau, best = tau, res
    return SweepResult(tuple(zip(grid, results)), best_tau, best.f1)


def ensemble_mean(matrices: Sequence[ProbabilityMatrix]) -> ProbabilityMatrix:
    """Element-wise mean of probability matrices with identical layouts.

    Values are summed in argument order.  Cells where every input agrees
    return that value unchanged, so averaging copies of one matrix is exact.
    """
    matrices = list(matrices)
    if not matrices:
        raise ValueError("ensemble needs at least one matrix")
    first = matrices[0]
    for k, m in enumerate(matrices[1:], start=2):
        if m.image_ids != first.image_ids:
            for a, b in zip(first.image_ids, m.image_ids):
                if a != b:
                    raise EnsembleMismatchError(f"matrix {k}: image id {b!r} where {a!r} expected")
            raise EnsembleMismatchError(
                f"matrix {k}: {len(m.image_ids)} images, expected {len(first.image_ids)}"
            )
        if m.concepts.cuis != first.concepts.cuis:
            for a, b in zip(first.concepts.cuis, m.concepts.cuis):
                if a != b:
                    raise EnsembleMismatchError(f"matrix {k}: concept {b!r} where {a!r} expected")
            raise EnsembleMismatchError(
                f"matrix {k}: {len(m.concepts)} concepts, expected {len(first.concepts)}"
            )
    total = np.array(first.values, dtype=np.float64)
    agree = np.ones(total.shape, dtype=bool)
    for m in matrices[1:]:
        total = total + m.values
        agree &= m.values == first.values
    mean = total / len(matrices)
    mean = np.where(agree, first.values, mean)
    # guard against rounding a hair outside [0, 1]
    np.clip(mean, 0.0, 1.0, out=mean)
    return ProbabilityMatrix(first.image_ids, first.concepts, mean)


def filter_vocabulary(training: ConceptAnnotationSet, min_count: int) -> ConceptVocabulary:
    """Concepts occurring in at least ``min_count`` training images.

    Ordered by descending frequency, ties broken by CUI.
    """
    if min_count < 1:
        raise ValueError("min_count must be a positive integer")
    counts = Counter(cui for cuis in training.values() for cui in cuis)
    kept = sorted((item for item in counts.items() if item[1] >= min_count), key=lambda kv: (-kv[1], kv[0]))
    return ConceptVocabulary(VocabEntry(cui, None, n) for cui, n in kept)


def restrict_predictions(preds: ConceptAnnotationSet, vocab: ConceptVocabulary) -> ConceptAnnotationSet:
    return ConceptAnnotationSet((image_id, [c for c in cuis if c in vocab]) for image_id, cuis in preds.items())


def concepts_to_text(scores: Mapping[str, float], vocab: ConceptVocabulary, config=0.5) -> str:
    """Render the retained concepts of one image as ``"name1; name2"``.

    Highest score first; equal scores fall back to CUI order.  Concepts
    without a display name are rendered as their CUI.
    """
    cfg = _as_config(config)
    kept = sorted(((c, s) for c, s in scores.items() if cfg.retains(s)), key=lambda cs: (-cs[1], cs[0]))
    return "; ".join(vocab.display_name(c) for c, _ in kept)
