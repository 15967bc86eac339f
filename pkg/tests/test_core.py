import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from medcapeval.core import (
    CaptionCorpus,
    ConceptAnnotationSet,
    ConceptVocabulary,
    EvalReport,
    SampleScore,
    ThresholdConfig,
    ValidationError,
    VocabEntry,
    build_probability_matrix,
    validate_concept_id,
)

cui_st = st.from_regex(r"C[0-9]{1,7}", fullmatch=True)
id_st = st.from_regex(r"im[0-9a-z_]{1,8}", fullmatch=True)


def test_minimal_matrix():
    m = build_probability_matrix(["im1"], ["C1", "C2"], [[0.7, 0.4]])
    assert m.image_ids == ("im1",)
    assert m.concepts.cuis == ("C1", "C2")
    assert m.values.tolist() == [[0.7, 0.4]]
    assert m.values.dtype == np.float64


def test_matrix_rejects_out_of_range():
    with pytest.raises(ValidationError, match="value out of range"):
        build_probability_matrix(["im1"], ["C1"], [[1.5]])


def test_matrix_rejects_duplicate_image():
    with pytest.raises(ValidationError, match="duplicate image id"):
        build_probability_matrix(["im1", "im1"], ["C1"], [[0.1], [0.2]])


@pytest.mark.parametrize("values", [[[0.1, 0.2]], [[0.1], [0.2]], [0.1]])
def test_matrix_rejects_dimension_mismatch(values):
    with pytest.raises(ValidationError, match="dimension mismatch"):
        build_probability_matrix(["im1"], ["C1"], values)


def test_matrix_rejects_nan():
    with pytest.raises(ValidationError):
        build_probability_matrix(["im1"], ["C1"], [[math.nan]])


def test_matrix_is_read_only():
    m = build_probability_matrix(["im1"], ["C1"], [[0.3]])
    with pytest.raises(ValueError):
        m.values[0, 0] = 0.9


@given(
    st.lists(id_st, min_size=1, max_size=5, unique=True),
    st.lists(cui_st, min_size=1, max_size=5, unique=True),
    st.data(),
)
def test_matrix_round_trip(ids, cuis, data):
    values = data.draw(
        st.lists(
            st.lists(st.floats(0, 1), min_size=len(cuis), max_size=len(cuis)),
            min_size=len(ids),
            max_size=len(ids),
        )
    )
    m = build_probability_matrix(ids, cuis, values)
    assert list(m.image_ids) == ids
    assert list(m.concepts.cuis) == cuis
    assert m.values.tolist() == values


@pytest.mark.parametrize("bad", ["", "C1;C2", "C1,C2", "C\t1", "C1\n", "C 1"])
def test_concept_id_rejects(bad):
    with pytest.raises(ValidationError):
        validate_concept_id(bad)


def test_vocabulary_order_and_lookup():
    vocab = ConceptVocabulary([VocabEntry("C2", "Two", 3), VocabEntry("C1", None, 1)])
    assert vocab.cuis == ("C2", "C1")
    assert vocab.index_of("C1") == 1
    assert vocab.display_name("C2") == "Two"
    assert vocab.display_name("C1") == "C1"
    assert "C2" in vocab and "C9" not in vocab


def test_vocabulary_rejects_duplicates_and_negative_counts():
    with pytest.raises(ValidationError):
        ConceptVocabulary.from_cuis(["C1", "C1"])
    with pytest.raises(ValidationError):
        VocabEntry("C1", None, -1)


@given(st.dictionaries(id_st, st.frozensets(cui_st, max_size=4), max_size=6))
def test_annotation_round_trip(mapping):
    ann = ConceptAnnotationSet(mapping)
    assert dict(ann) == mapping
    assert list(ann) == list(mapping)


def test_annotations_collapse_duplicates():
    assert ConceptAnnotationSet({"im1": ["C1", "C1"]})["im1"] == frozenset({"C1"})


def test_annotations_reject_duplicate_ids():
    with pytest.raises(ValidationError):
        ConceptAnnotationSet([("im1", []), ("im1", ["C1"])])


def test_caption_corpus_keeps_text():
    corpus = CaptionCorpus({"im1": "", "im2": "CT, axial\n"})
    assert corpus["im1"] == "" and corpus["im2"] == "CT, axial\n"


@pytest.mark.parametrize("tau", [-0.01, 1.01, math.nan])
def test_threshold_bounds(tau):
    with pytest.raises(ValidationError, match=r"tau must be in \[0,1\]"):
        ThresholdConfig(tau)


def test_threshold_is_strict():
    cfg = ThresholdConfig(0.5)
    assert not cfg.retains(0.5)
    assert cfg.retains(0.5000001)


def test_sample_score_checks_harmonic_mean():
    SampleScore(1.0, 0.5, 2 / 3, False)
    with pytest.raises(ValidationError):
        SampleScore(1.0, 0.5, 0.7, False)
    with pytest.raises(ValidationError):
        SampleScore(1.2, 0.5, 0.5, False)


def test_report_invariants():
    rep = EvalReport([("A", {"F1": 0.5}), ("B", {"F1": 1.0, "Recall": 0.25})])
    assert rep.labels == ["A", "B"]
    assert rep.metric_names == ["F1", "Recall"]
    assert rep["B"]["Recall"] == 0.25
    with pytest.raises(ValidationError):
        EvalReport([("A", {"F1": 0.5}), ("A", {"F1": 0.5})])
    with pytest.raises(ValidationError):
        EvalReport([("A", {"F1": 1.5})])
