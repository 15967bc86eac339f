import math
import random
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from medcapeval import caption_metrics as cm
from medcapeval.caption_metrics import (
    MissingCaptionError,
    bertscore_aggregate,
    bleu,
    count_chunks,
    evaluate_captions,
    meteor,
    meteor_alignment,
    rouge,
)
from medcapeval.core import CaptionCorpus
from medcapeval.porter import stem

# Outputs of the original 1980 rule set, frozen.
PORTER_FIXTURE = {
    "caresses": "caress",
    "ponies": "poni",
    "ties": "ti",
    "caress": "caress",
    "cats": "cat",
    "feed": "feed",
    "agreed": "agre",
    "plastered": "plaster",
    "bled": "bled",
    "motoring": "motor",
    "sing": "sing",
    "conflated": "conflat",
    "troubled": "troubl",
    "sized": "size",
    "hopping": "hop",
    "tanned": "tan",
    "falling": "fall",
    "hissing": "hiss",
    "fizzed": "fizz",
    "failing": "fail",
    "filing": "file",
    "happy": "happi",
    "sky": "sky",
    "relational": "relat",
    "conditional": "condit",
    "rational": "ration",
    "digitizer": "digit",
    "generalizations": "gener",
    "oscillators": "oscil",
    "hopefulness": "hope",
}

MORE_STEMS = {
    "goodness": "good",
    "adjustable": "adjust",
    "replacement": "replac",
    "adoption": "adopt",
    "effective": "effect",
    "probate": "probat",
    "rate": "rate",
    "cease": "ceas",
    "controlling": "control",
    "rolling": "roll",
    "electrical": "electr",
    "triplicate": "triplic",
    "formalize": "formal",
    "sensibility": "sensibl",
    "is": "is",
    "as": "as",
}

tokens_st = st.lists(st.sampled_from(oracles.WORDS[:20]), max_size=12)


def test_porter_fixture():
    assert len(PORTER_FIXTURE) == 30
    assert {w: stem(w) for w in PORTER_FIXTURE} == PORTER_FIXTURE
    assert {w: stem(w) for w in MORE_STEMS} == MORE_STEMS


# ------------------------------------------------------------------ BLEU


def test_bleu_clipping():
    assert bleu(["the"] * 4, ["the", "cat"], 1) == 0.25


def test_bleu_identity_and_empty():
    toks = "ct scan of the chest".split()
    for n in range(1, 5):
        assert bleu(toks, toks, n) == pytest.approx(1.0, abs=1e-15)
        assert bleu([], toks, n) == 0.0
    assert bleu(["a", "b"], ["a", "b"], 3) == 0.0


def test_bleu_smoothing():
    # 2 tokens, no bigram match: p1 = 1, p2 = 1/(2*1); BP = 1 (equal length -> exp(0))
    assert bleu(["a", "b"], ["b", "a"], 2) == pytest.approx(math.sqrt(0.5), abs=1e-15)


def test_bleu_not_symmetric():
    a, b = ["the", "cat", "sat"], ["the", "cat"]
    assert bleu(a, b, 1) != bleu(b, a, 1)


def test_bleu_rejects_order():
    with pytest.raises(ValueError):
        bleu(["a"], ["a"], 5)


# ----------------------------------------------------------------- ROUGE


def test_rouge_examples():
    for variant in ("rouge1", "rougeL"):
        assert rouge(["a", "b", "c"], ["a", "c", "d"], variant) == pytest.approx((2 / 3,) * 3, abs=1e-15)
        assert rouge(["a", "b"], ["a", "b"], variant) == (1.0, 1.0, 1.0)
        assert rouge(["a"], ["b"], variant) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        rouge(["a"], ["a"], "rouge2")


@given(tokens_st, tokens_st)
def test_rouge_one_iff(a, b):
    assert (rouge(a, b, "rouge1") == (1.0, 1.0, 1.0)) == (bool(a) and sorted(a) == sorted(b))
    assert (rouge(a, b, "rougeL") == (1.0, 1.0, 1.0)) == (bool(a) and a == b)


@given(tokens_st, tokens_st, st.integers(1, 5))
def test_rouge_nested_candidates(cand, ref, extra):
    longer = cand + ["zzz"] * extra
    p1, r1, _ = rouge(cand, ref, "rouge1")
    p2, r2, _ = rouge(longer, ref, "rouge1")
    assert r2 == r1
    assert p2 <= p1


# ---------------------------------------------------------------- METEOR


def test_meteor_examples():
    assert meteor(["a", "b", "c"], ["a", "b", "c"]) == pytest.approx(1 - 0.5 / 27, abs=1e-15)
    assert meteor(["the", "cat", "sat"], ["the", "cat", "sat", "down"]) == pytest.approx(
        (7.5 / 9.75) * (1 - 0.5 / 27), abs=1e-15
    )
    assert meteor(["x"], ["y"]) == 0.0
    assert meteor([], ["y"]) == 0.0


def test_meteor_stem_stage():
    # "masses" matches "mass" only through the stemmer
    al = meteor_alignment(["ct", "masses"], ["ct", "mass"])
    assert al == [(0, 0), (1, 1)]
    assert meteor(["ct", "masses"], ["ct", "mass"]) == pytest.approx(1 - 0.5 / 8)


def test_meteor_exact_preferred_over_stem():
    # a stem match must not displace an exact match
    al = meteor_alignment(["scans", "scan"], ["scan"])
    assert al == [(1, 0)]


def test_meteor_prefers_fewer_chunks():
    cand = "the mass the mass".split()
    ref = "a mass the mass".split()
    assert count_chunks(meteor_alignment(cand, ref)) == 1


@given(st.lists(st.sampled_from(oracles.WORDS[:30]), max_size=30))
def test_meteor_identity(tokens):
    m = len(tokens)
    expected = 0.0 if m == 0 else 1 - 0.5 * (1 / m) ** 3
    assert meteor(tokens, tokens) == pytest.approx(expected, abs=1e-15)


def test_meteor_dense_pairs_match_exhaustive_oracle():
    rng = random.Random(2024)
    for _ in range(60):
        cand, ref = oracles.random_pair(rng, max_len=24, enum_limit=20_000, words=oracles.DENSE_WORDS)
        assert abs(meteor(cand, ref) - oracles.meteor(cand, ref)) <= 1e-12, (cand, ref)


def test_meteor_integer_program_route(monkeypatch):
    # force the solver route and compare with exhaustive enumeration
    monkeypatch.setattr(cm, "METEOR_STATE_BUDGET", 1)
    rng = random.Random(99)
    for _ in range(40):
        cand, ref = oracles.random_pair(rng, max_len=20, enum_limit=20_000, words=oracles.DENSE_WORDS)
        assert abs(meteor(cand, ref) - oracles.meteor(cand, ref)) <= 1e-12, (cand, ref)


def test_meteor_greedy_fallback_above_match_limit(monkeypatch):
    monkeypatch.setattr(cm, "METEOR_EXACT_MAX_MATCHES", 2)
    al = meteor_alignment("a b c d".split(), "a b c d".split())
    assert al == [(0, 0), (1, 1), (2, 2), (3, 3)]


def test_meteor_long_repetitive_input_is_bounded():
    cand = ["mass"] * 40 + ["the", "scan"] * 10
    ref = ["the", "mass"] * 20 + ["scans"] * 10
    start = time.perf_counter()
    score = meteor(cand, ref)
    assert 0.0 < score <= 1.0
    assert time.perf_counter() - start < 10


# ------------------------------------------------------------- BERTScore


def test_bertscore_examples():
    e1, e2 = [1.0, 0.0], [0.0, 1.0]
    assert bertscore_aggregate([e1, e2], [e2, e1]) == pytest.approx((1, 1, 1), abs=1e-15)
    assert bertscore_aggregate([e1], [e1, e2]) == pytest.approx((1, 0.5, 2 / 3), abs=1e-15)
    assert bertscore_aggregate([e1], [e2]) == (0.0, 0.0, 0.0)
    assert bertscore_aggregate([], [e1]) == (0.0, 0.0, 0.0)


def test_bertscore_errors():
    with pytest.raises(ValueError, match="zero"):
        bertscore_aggregate([[0.0, 0.0]], [[1.0, 0.0]])
    with pytest.raises(ValueError, match="dimension"):
        bertscore_aggregate([[1.0, 0.0]], [[1.0, 0.0, 0.0]])


def test_bertscore_scale_invariant_and_clamped():
    assert bertscore_aggregate([[3.0, 0.0]], [[0.5, 0.0]]) == pytest.approx((1, 1, 1))
    # anti-parallel vectors would give negative cosines; scores stay in [0, 1]
    assert bertscore_aggregate([[1.0, 0.0]], [[-1.0, 0.0]]) == (0.0, 0.0, 0.0)


vec_st = st.lists(st.floats(-10, 10).filter(lambda x: abs(x) > 1e-3), min_size=3, max_size=3)


@settings(max_examples=50)
@given(st.lists(vec_st, min_size=1, max_size=5), st.lists(vec_st, min_size=1, max_size=5))
def test_bertscore_swap(cand, ref):
    p, r, f = bertscore_aggregate(cand, ref)
    p2, r2, f2 = bertscore_aggregate(ref, cand)
    assert (p2, r2) == (r, p)
    assert f2 == pytest.approx(f, abs=1e-15)


# ---------------------------------------------------------- oracle sweep


def test_all_metrics_match_oracles():
    rng = random.Random(1)
    nrng = np.random.default_rng(1)
    for _ in range(100):
        cand, ref = oracles.random_pair(rng)
        for n in range(1, 5):
            assert abs(bleu(cand, ref, n) - oracles.bleu(cand, ref, n)) <= 1e-12
        assert np.allclose(rouge(cand, ref, "rouge1"), oracles.rouge1(cand, ref), rtol=0, atol=1e-12)
        assert np.allclose(rouge(cand, ref, "rougeL"), oracles.rougeL(cand, ref), rtol=0, atol=1e-12)
        assert abs(meteor(cand, ref) - oracles.meteor(cand, ref)) <= 1e-12
        cv = nrng.normal(size=(len(cand), 4)).tolist()
        rv = nrng.normal(size=(len(ref), 4)).tolist()
        assert np.allclose(bertscore_aggregate(cv, rv), oracles.bertscore(cv, rv), rtol=0, atol=1e-12)


# ------------------------------------------------------------ corpus level


def test_corpus_bleu1_mean():
    gold = CaptionCorpus({"a": "the cat", "b": "the cat"})
    gen = CaptionCorpus({"a": "the cat", "b": "the the the the"})
    res = evaluate_captions(gold, gen)
    assert [p.bleu1 for p in res.per_pair] == [1.0, 0.25]
    assert res.corpus["bleu1"] == 0.625


def test_identity_corpus():
    gold = CaptionCorpus({"a": "ct scan of the chest", "b": "mass"})
    res = evaluate_captions(gold, gold)
    for name in ("bleu1", "rouge1_f", "rougeL_f"):
        assert res.corpus[name] == 1.0
    assert res.corpus["bleu4"] == 0.5 * (1.0 + 0.0)
    assert [p.meteor for p in res.per_pair] == [1 - 0.5 / 125, 0.5]
    assert res.corpus["meteor"] == ((1 - 0.5 / 125) + 0.5) / 2


def test_single_pair_equals_pair_scores():
    gold = CaptionCorpus({"a": "a small mass in the left lung"})
    gen = CaptionCorpus({"a": "mass in left lungs"})
    res = evaluate_captions(gold, gen)
    pair = res.per_pair[0]
    for name, value in res.corpus.items():
        assert value == getattr(pair, name)
    assert "bert_f" not in res.corpus
    assert list(res.as_metrics()) == ["BLEU1", "BLEU2", "BLEU3", "BLEU4", "ROUGE", "METEOR"]


def test_embeddings_enable_bertscore():
    gold = CaptionCorpus({"a": "x"})
    emb = {"a": ([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]])}
    res = evaluate_captions(gold, gold, embeddings=emb)
    assert res.corpus["bert_f"] == pytest.approx(2 / 3)
    assert list(res.as_metrics())[0] == "BERTScore"


def test_postprocess_changes_scores():
    gold = CaptionCorpus({"a": "ct scan showing mass"})
    gen = CaptionCorpus({"a": "ct scan showing ct scan showing mass"})
    assert evaluate_captions(gold, gen, postprocess=True).corpus["bleu4"] == pytest.approx(1.0)
    assert evaluate_captions(gold, gen).corpus["bleu4"] < 1.0


def test_missing_inputs():
    gold = CaptionCorpus({"a": "x", "b": "y"})
    with pytest.raises(MissingCaptionError, match="'b'"):
        evaluate_captions(gold, CaptionCorpus({"a": "x"}))
    with pytest.raises(MissingCaptionError, match="embeddings"):
        evaluate_captions(gold, gold, embeddings={"a": ([[1.0]], [[1.0]])})


def test_thread_count_invariance():
    rng = random.Random(4)
    gold = CaptionCorpus((f"im{i}", " ".join(oracles.random_pair(rng)[0])) for i in range(50))
    gen = CaptionCorpus((f"im{i}", " ".join(oracles.random_pair(rng)[1])) for i in range(50))
    assert evaluate_captions(gold, gen, threads=1) == evaluate_captions(gold, gen, threads=8)
