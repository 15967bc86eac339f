"""Shared domain types for concept detection and caption evaluation.

Every type validates its invariants on construction and is immutable
afterwards, so instances can be handed to worker threads freely.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Optional, Sequence

import numpy as np

_FORBIDDEN_CUI_CHARS = frozenset(";,\t\n")


class ValidationError(ValueError):
    """Raised when a domain object would violate one of its invariants."""


def validate_concept_id(value: str) -> str:
    """Return ``value`` if it is a usable concept identifier (UMLS CUI style)."""
    if not isinstance(value, str) or not value:
        raise ValidationError("concept id must be a non-empty string")
    bad = _FORBIDDEN_CUI_CHARS.intersection(value)
    if bad or any(ch.isspace() for ch in value):
        raise ValidationError(f"invalid concept id {value!r}: contains whitespace or separator")
    return value


def _validate_image_id(value: str) -> str:
    if not isinstance(value, str) or not value:
        raise ValidationError("image id must be a non-empty string")
    return value


@dataclass(frozen=True)
class VocabEntry:
    cui: str
    name: Optional[str] = None
    frequency: int = 0

    def __post_init__(self):
        validate_concept_id(self.cui)
        if isinstance(self.frequency, bool) or not isinstance(self.frequency, int) or self.frequency < 0:
            raise ValidationError(f"frequency of {self.cui!r} must be a non-negative integer")


class ConceptVocabulary(Sequence[VocabEntry]):
    """Ordered, duplicate-free list of concepts with optional names and counts."""

    def __init__(self, entries: Iterable[VocabEntry | str | tuple] = ()):
        items = []
        index = {}
        for raw in entries:
            if isinstance(raw, VocabEntry):
                entry = raw
            elif isinstance(raw, str):
                entry = VocabEntry(raw)
            else:
                entry = VocabEntry(*raw)
            if entry.cui in index:
                raise ValidationError(f"duplicate concept id {entry.cui!r} in vocabulary")
            index[entry.cui] = len(items)
            items.append(entry)
        self._entries = tuple(items)
        self._index = MappingProxyType(index)

    @classmethod
    def from_cuis(cls, cuis: Iterable[str]) -> "ConceptVocabulary":
        return cls(VocabEntry(c) for c in cuis)

    def __getitem__(self, i):
        return self._entries[i]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, cui) -> bool:
        return cui in self._index

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConceptVocabulary):
            return NotImplemented
        return self._entries == other._entries

    def __hash__(self) -> int:
        return hash(self._entries)

    def __repr__(self) -> str:
        return f"ConceptVocabulary({list(self.cuis)!r})"

    @property
    def cuis(self) -> tuple[str, ...]:
        return tuple(e.cui for e in self._entries)

    def index_of(self, cui: str) -> int:
        return self._index[cui]

    def display_name(self, cui: str) -> str:
        """Human-readable name of ``cui``, falling back to the CUI itself."""
        name = self._entries[self._index[cui]].name if cui in self._index else None
        return name if name else cui


@dataclass(frozen=True, eq=False)
class ProbabilityMatrix:
    """Per-image, per-concept confidence scores in [0, 1].

    ``values`` is a read-only float64 array of shape (images, concepts).
    """

    image_ids: tuple[str, ...]
    concepts: ConceptVocabulary
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        ids = tuple(self.image_ids)
        seen = set()
        for image_id in ids:
            _validate_image_id(image_id)
            if image_id in seen:
                raise ValidationError(f"duplicate image id {image_id!r}")
            seen.add(image_id)
        if not isinstance(self.concepts, ConceptVocabulary):
            raise ValidationError("concepts must be a ConceptVocabulary")
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.size == 0:
            arr = arr.reshape(len(ids), len(self.concepts))
        if arr.ndim != 2 or arr.shape != (len(ids), len(self.concepts)):
            raise ValidationError(
                f"dimension mismatch: values shape {arr.shape} but expected "
                f"({len(ids)}, {len(self.concepts)})"
            )
        # NaN fails both comparisons, so it is caught here as well
        ok = (arr >= 0.0) & (arr <= 1.0)
        if not ok.all():
            r, c = np.argwhere(~ok)[0]
            raise ValidationError(
                f"value out of range: {arr[r, c]!r} at image {ids[r]!r}, "
                f"concept {self.concepts[c].cui!r}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "image_ids", ids)
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def row(self, image_id: str) -> dict[str, float]:
        i = self.image_ids.index(image_id)
        return {c: float(v) for c, v in zip(self.concepts.cuis, self.values[i])}

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProbabilityMatrix):
            return NotImplemented
        return (
            self.image_ids == other.image_ids
            and self.concepts == other.concepts
            and np.array_equal(self.values, other.values)
        )


def build_probability_matrix(image_ids, vocabulary, values) -> ProbabilityMatrix:
    """Validate and assemble a ProbabilityMatrix.

    ``vocabulary`` may be a ConceptVocabulary or any iterable of CUIs.
    """
    if not isinstance(vocabulary, ConceptVocabulary):
        vocabulary = ConceptVocabulary.from_cuis(vocabulary)
    return ProbabilityMatrix(tuple(image_ids), vocabulary, values)


class _FrozenIdMap(Mapping):
    """Insertion-ordered, read-only mapping keyed by image id."""

    def __init__(self, items=()):
        data = {}
        pairs = items.items() if isinstance(items, Mapping) else items
        for image_id, value in pairs:
            _validate_image_id(image_id)
            if image_id in data:
                raise ValidationError(f"duplicate image id {image_id!r}")
            data[image_id] = self._check_value(image_id, value)
        self._data = data

    def _check_value(self, image_id, value):
        return value

    def __getitem__(self, key):
        return self._data[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self._data!r})"


class ConceptAnnotationSet(_FrozenIdMap):
    """Mapping image id -> frozenset of concept ids (gold or predicted)."""

    def _check_value(self, image_id, value):
        if isinstance(value, str):
            raise ValidationError(f"concepts for {image_id!r} must be a collection, not a string")
        return frozenset(validate_concept_id(c) for c in value)


class CaptionCorpus(_FrozenIdMap):
    """Mapping image id -> caption text."""

    def _check_value(self, image_id, value):
        if not isinstance(value, str):
            raise ValidationError(f"caption for {image_id!r} must be a string")
        return value


@dataclass(frozen=True)
class ThresholdConfig:
    """Retain a concept when its score is strictly greater than ``tau``."""

    tau: float = 0.5

    def __post_init__(self):
        tau = float(self.tau)
        if not (0.0 <= tau <= 1.0):
            raise ValidationError(f"tau must be in [0,1], got {self.tau!r}")
        object.__setattr__(self, "tau", tau)

    def retains(self, score: float) -> bool:
        return score > self.tau


@dataclass(frozen=True)
class SampleScore:
    precision: float
    recall: float
    f1: float
    exact_match: bool

    def __post_init__(self):
        for name in ("precision", "recall", "f1"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must be in [0,1], got {v!r}")
        p, r = self.precision, self.recall
        expected = 2 * p * r / (p + r) if p + r > 0 else 0.0
        if not math.isclose(self.f1, expected, rel_tol=1e-12, abs_tol=1e-15):
            raise ValidationError(f"f1 {self.f1!r} is not the harmonic mean of {p!r} and {r!r}")


class EvalReport:
    """Rows of (configuration label, {metric name: value}) in insertion order."""

    def __init__(self, rows: Iterable[tuple[str, Mapping[str, float]]] = ()):
        built = []
        labels = set()
        for label, metrics in rows:
            if not isinstance(label, str) or not label:
                raise ValidationError("configuration label must be a non-empty string")
            if label in labels:
                raise ValidationError(f"duplicate configuration label {label!r}")
            labels.add(label)
            clean = {}
            for name, value in metrics.items():
                value = float(value)
                if not (0.0 <= value <= 1.0):
                    raise ValidationError(f"metric {name!r} of {label!r} out of [0,1]: {value!r}")
                clean[str(name)] = value
            built.append((label, MappingProxyType(clean)))
        self._rows = tuple(built)

    @property
    def rows(self) -> tuple[tuple[str, Mapping[str, float]], ...]:
        return self._rows

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self._rows]

    @property
    def metric_names(self) -> list[str]:
        """Union of metric names, in order of first appearance."""
        names: dict[str, None] = {}
        for _, metrics in self._rows:
            names.update(dict.fromkeys(metrics))
        return list(names)

    def __len__(self) -> int:
        return len(self._rows)

    def __getitem__(self, label: str) -> Mapping[str, float]:
        for row_label, metrics in self._rows:
            if row_label == label:
                return metrics
        raise KeyError(label)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EvalReport):
            return NotImplemented
        return [(l, dict(m)) for l, m in self._rows] == [(l, dict(m)) for l, m in other._rows]

    def __repr__(self) -> str:
        return f"EvalReport({[(l, dict(m)) for l, m in self._rows]!r})"
