"""Readers and writers for the toolkit's on-disk formats.

Input formats:

* concept annotations: ``<image-id>,<cui1>;<cui2>;...`` (optional ``ID,CUIs`` header)
* probability matrix: CSV with header ``ID,<cui1>,<cui2>,...``
* captions: two-field CSV ``<image-id>,<caption>`` (optional ``ID,Caption`` header)
* token embeddings: JSON lines ``{"id": ..., "tokens": [...], "vectors": [[...], ...]}``

Output formats are the annotation and matrix formats above plus evaluation
reports (CSV or JSON).  All writers emit LF line endings.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterator
from typing import IO, Optional

import numpy as np

from .core import (
    CaptionCorpus,
    ConceptAnnotationSet,
    ConceptVocabulary,
    EvalReport,
    ProbabilityMatrix,
    ValidationError,
    validate_concept_id,
)

REPORT_DECIMALS = 5


class FileFormatError(ValueError):
    """A record in an input file could not be parsed or validated."""

    def __init__(self, message: str, line: int, path: Optional[str] = None):
        self.message = message
        self.line = line
        self.path = path
        super().__init__(str(self))

    def __str__(self) -> str:
        where = f"{self.path}:{self.line}" if self.path else f"line {self.line}"
        return f"{where}: {self.message}"


def _source_name(stream) -> Optional[str]:
    name = getattr(stream, "name", None)
    return name if isinstance(name, str) else None


def _lines(stream) -> Iterator[tuple[int, str]]:
    """Yield (1-based line number, line without terminator); strips a leading BOM."""
    for lineno, line in enumerate(stream, start=1):
        if lineno == 1 and line.startswith("\ufeff"):
            line = line[1:]
        yield lineno, line.rstrip("\r\n")


def parse_concept_annotations(stream: IO[str], path: Optional[str] = None) -> ConceptAnnotationSet:
    path = path or _source_name(stream)
    data: dict[str, frozenset] = {}
    for lineno, line in _lines(stream):
        if not line.strip():
            continue
        if "," not in line:
            raise FileFormatError(f"malformed line (no comma): {line!r}", lineno, path)
        image_id, field = line.split(",", 1)
        if lineno == 1 and image_id.strip().lower() == "id" and field.strip().lower() == "cuis":
            continue
        if not image_id:
            raise FileFormatError("empty image id", lineno, path)
        if image_id in data:
            raise FileFormatError(f"duplicate image id {image_id!r}", lineno, path)
        cuis = set()
        if field:
            for token in field.split(";"):
                try:
                    cuis.add(validate_concept_id(token))
                except ValidationError as exc:
                    raise FileFormatError(str(exc), lineno, path) from None
        data[image_id] = frozenset(cuis)
    return ConceptAnnotationSet(data)


def _parse_floats(cells: list[str], lineno: int, path) -> np.ndarray:
    try:
        return np.array([float(c) for c in cells], dtype=np.float64)
    except ValueError:
        for c in cells:
            try:
                float(c)
            except ValueError:
                raise FileFormatError(f"unparsable float {c!r}", lineno, path) from None
        raise


def parse_probability_matrix(stream: IO[str], path: Optional[str] = None) -> ProbabilityMatrix:
    path = path or _source_name(stream)
    lines = _lines(stream)
    header = None
    for lineno, line in lines:
        if line.strip():
            header = line.split(",")
            break
    if header is None:
        raise FileFormatError("missing header line", 1, path)
    cuis = header[1:]
    seen = set()
    for cui in cuis:
        try:
            validate_concept_id(cui)
        except ValidationError as exc:
            raise FileFormatError(f"bad header: {exc}", lineno, path) from None
        if cui in seen:
            raise FileFormatError(f"duplicate CUI {cui!r} in header", lineno, path)
        seen.add(cui)

    ids: list[str] = []
    rows: list[np.ndarray] = []
    id_set = set()
    for lineno, line in lines:
        if not line.strip():
            continue
        cells = line.split(",")
        image_id, values = cells[0], cells[1:]
        if len(values) != len(cuis):
            raise FileFormatError(f"expected {len(cuis)} values, got {len(values)}", lineno, path)
        if not image_id:
            raise FileFormatError("empty image id", lineno, path)
        if image_id in id_set:
            raise FileFormatError(f"duplicate image id {image_id!r}", lineno, path)
        row = _parse_floats(values, lineno, path)
        bad = ~((row >= 0.0) & (row <= 1.0))
        if bad.any():
            j = int(np.argmax(bad))
            raise FileFormatError(f"value out of range: {values[j]} for {cuis[j]}", lineno, path)
        id_set.add(image_id)
        ids.append(image_id)
        rows.append(row)
    values = np.vstack(rows) if rows else np.zeros((0, len(cuis)))
    return ProbabilityMatrix(tuple(ids), ConceptVocabulary.from_cuis(cuis), values)


def parse_captions(stream: IO[str], path: Optional[str] = None) -> CaptionCorpus:
    """Read a two-column caption CSV.

    Pass streams opened with ``newline=""`` so quoted line breaks survive
    byte-for-byte.
    """
    path = path or _source_name(stream)
    first = True

    def debommed():
        nonlocal first
        for chunk in stream:
            if first and chunk.startswith("\ufeff"):
                chunk = chunk[1:]
            first = False
            yield chunk

    reader = csv.reader(debommed(), strict=True)
    data: dict[str, str] = {}
    record_start = 1
    while True:
        record_start = reader.line_num + 1
        try:
            record = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            if "NUL" in str(exc):
                raise FileFormatError("NUL character in caption file", record_start, path) from None
            raise FileFormatError(f"unterminated quote or bad quoting ({exc})", record_start, path) from None
        if not record:
            continue
        if len(record) != 2:
            raise FileFormatError(f"expected 2 fields, got {len(record)}", record_start, path)
        image_id, caption = record
        if not data and record_start == 1 and image_id.lower() == "id" and caption.lower() == "caption":
            continue
        if not image_id:
            raise FileFormatError("empty image id", record_start, path)
        if image_id in data:
            raise FileFormatError(f"duplicate image id {image_id!r}", record_start, path)
        data[image_id] = caption
    return CaptionCorpus(data)


def parse_token_embeddings(stream: IO[str], path: Optional[str] = None) -> dict[str, tuple[list[str], list[list[float]]]]:
    path = path or _source_name(stream)
    out: dict[str, tuple[list[str], list[list[float]]]] = {}
    for lineno, line in _lines(stream):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"malformed JSON line: {exc.msg}", lineno, path) from None
        if not isinstance(record, dict):
            raise FileFormatError("record must be a JSON object", lineno, path)
        image_id = record.get("id")
        tokens = record.get("tokens")
        vectors = record.get("vectors")
        if not isinstance(image_id, str) or not image_id:
            raise FileFormatError("missing or empty 'id'", lineno, path)
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise FileFormatError("'tokens' must be a list of strings", lineno, path)
        if not isinstance(vectors, list) or not all(isinstance(v, list) for v in vectors):
            raise FileFormatError("'vectors' must be a list of lists", lineno, path)
        if len(tokens) != len(vectors):
            raise FileFormatError(
                f"length mismatch: {len(tokens)} tokens vs {len(vectors)} vectors", lineno, path
            )
        dims = {len(v) for v in vectors}
        if len(dims) > 1:
            raise FileFormatError(f"inconsistent dimension {sorted(dims)}", lineno, path)
        clean = []
        for v in vectors:
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in v):
                raise FileFormatError("vector components must be finite numbers", lineno, path)
            clean.append([float(x) for x in v])
        if image_id in out:
            raise FileFormatError(f"duplicate image id {image_id!r}", lineno, path)
        out[image_id] = (list(tokens), clean)
    return out


def write_concept_predictions(annotations: ConceptAnnotationSet, sink: IO[str]) -> None:
    for image_id, cuis in annotations.items():
        sink.write(f"{image_id},{';'.join(sorted(cuis))}\n")


def write_probability_matrix(matrix: ProbabilityMatrix, sink: IO[str]) -> None:
    # repr() gives the shortest string that round-trips to the same double
    sink.write(",".join(["ID", *matrix.concepts.cuis]) + "\n")
    for image_id, row in zip(matrix.image_ids, matrix.values):
        sink.write(",".join([image_id, *(repr(float(v)) for v in row)]) + "\n")


def _csv_field(value: str) -> str:
    if "\0" in value:
        raise ValueError(f"NUL character cannot be written to CSV: {value!r}")
    # csv.writer leaves a bare CR unquoted under an LF terminator
    if any(ch in value for ch in ',"\r\n'):
        return '"' + value.replace('"', '""') + '"'
    return value


def write_captions(corpus: CaptionCorpus, sink: IO[str]) -> None:
    """Write ``id,caption`` records; NUL characters cannot be represented."""
    for image_id, caption in corpus.items():
        sink.write(f"{_csv_field(image_id)},{_csv_field(caption)}\n")


def write_vocabulary(vocab: ConceptVocabulary, sink: IO[str]) -> None:
    sink.write("CUI,Frequency\n")
    for entry in vocab:
        sink.write(f"{entry.cui},{entry.frequency}\n")


def format_value(value: float) -> str:
    return f"{value:.{REPORT_DECIMALS}f}"


def write_report(report: EvalReport, sink: IO[str], fmt: str = "csv") -> None:
    """Serialize ``report`` as CSV (5-decimal cells) or as a JSON array of rows."""
    if fmt == "csv":
        names = report.metric_names
        sink.write(",".join(_csv_field(c) for c in ["Configuration", *names]) + "\n")
        for label, metrics in report.rows:
            cells = [format_value(metrics[n]) if n in metrics else "" for n in names]
            sink.write(",".join([_csv_field(label), *cells]) + "\n")
    elif fmt == "json":
        payload = [{"configuration": label, "metrics": dict(metrics)} for label, metrics in report.rows]
        json.dump(payload, sink, indent=2)
        sink.write("\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")


def read_report_json(stream: IO[str]) -> EvalReport:
    payload = json.load(stream)
    return EvalReport((row["configuration"], row["metrics"]) for row in payload)


def read_report_csv(stream: IO[str]) -> EvalReport:
    reader = csv.reader(stream)
    header = next(reader)
    names = header[1:]
    rows = []
    for record in reader:
        rows.append((record[0], {n: float(v) for n, v in zip(names, record[1:]) if v != ""}))
    return EvalReport(rows)
