"""Sentence-level caption metrics and their corpus averages.

All metrics take token lists (see :func:`caption_text.tokenize`) and
score one candidate against a single reference.  Corpus values are plain
arithmetic means over image pairs, accumulated in gold order.
"""

from __future__ import annotations

import math
import sys
from collections import Counter
from dataclasses import dataclass, fields
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import csr_matrix

from ._parallel import ordered_map
from .caption_text import collapse_repetitions, tokenize
from .core import CaptionCorpus
from .porter import stem

# exact alignment search is attempted up to this many matched unigrams
METEOR_EXACT_MAX_MATCHES = 64
# memo entries allowed before the search hands over to the integer program
METEOR_STATE_BUDGET = 20_000


def _ngram_counts(tokens: Sequence[str], k: int) -> Counter:
    return Counter(tuple(tokens[i : i + k]) for i in range(len(tokens) - k + 1))


def bleu(candidate: Sequence[str], reference: Sequence[str], n: int = 4) -> float:
    """Smoothed sentence BLEU-n against one reference.

    Orders with no clipped match get precision 1/(2*total) instead of 0.
    The score is 0 when the candidate is shorter than ``n`` tokens.
    """
    if not 1 <= n <= 4:
        raise ValueError("n must be between 1 and 4")
    c_len, r_len = len(candidate), len(reference)
    if c_len == 0:
        return 0.0
    log_sum = 0.0
    for k in range(1, n + 1):
        total = c_len - k + 1
        if total <= 0:
            return 0.0
        ref_counts = _ngram_counts(reference, k)
        matches = sum(min(c, ref_counts[g]) for g, c in _ngram_counts(candidate, k).items())
        p = matches / total if matches else 1.0 / (2 * total)
        log_sum += math.log(p)
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_sum / n)


def _prf(overlap: int, c_len: int, r_len: int) -> tuple[float, float, float]:
    p = overlap / c_len if c_len else 0.0
    r = overlap / r_len if r_len else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge(candidate: Sequence[str], reference: Sequence[str], variant: str = "rouge1") -> tuple[float, float, float]:
    """(precision, recall, F1) for ``rouge1`` (clipped unigram overlap) or ``rougeL`` (LCS)."""
    if variant == "rouge1":
        ref_counts = Counter(reference)
        overlap = sum(min(c, ref_counts[w]) for w, c in Counter(candidate).items())
    elif variant == "rougeL":
        overlap = lcs_length(candidate, reference)
    else:
        raise ValueError(f"unknown ROUGE variant {variant!r}")
    return _prf(overlap, len(candidate), len(reference))


# ---------------------------------------------------------------- METEOR


class _SearchBudgetExceeded(Exception):
    pass


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    """Number of runs of pairs that are adjacent in both sequences."""
    pairs = sorted(alignment)
    if not pairs:
        return 0
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    return chunks


def _edges(candidate, reference):
    """Per candidate position: (exact partners, stem-only partners) in the reference."""
    c_stems = [stem(t) for t in candidate]
    r_stems = [stem(t) for t in reference]
    edges = []
    for i, tok in enumerate(candidate):
        exact = tuple(j for j, r in enumerate(reference) if r == tok)
        stemmed = tuple(j for j, r in enumerate(reference) if r != tok and r_stems[j] == c_stems[i])
        edges.append((exact, stemmed))
    return edges


def _linkable(edges) -> set[int]:
    """Reference positions that could sit inside a chunk of two or more pairs."""
    linked = set()
    for i in range(len(edges) - 1):
        here = set(edges[i][0]) | set(edges[i][1])
        after = set(edges[i + 1][0]) | set(edges[i + 1][1])
        for j in here:
            if j + 1 in after:
                linked.update((j, j + 1))
    return linked


def _search_alignment(edges, reference, budget: int) -> list[tuple[int, int]]:
    """Exact search: max exact matches, then max stem matches, then fewest chunks.

    Walks the candidate left to right, memoizing on (position, used
    reference positions, reference position of the previous pair when it
    could still extend a chunk).  Reference positions that can never join
    a multi-pair chunk are interchangeable with others holding the same
    token, so only the lowest unused one of each token is tried.
    """
    n = len(edges)
    linkable = _linkable(edges)
    memo: dict = {}

    def options(partners, used):
        seen_tokens = set()
        for j in partners:
            if (used >> j) & 1:
                continue
            if j not in linkable:
                if reference[j] in seen_tokens:
                    continue
                seen_tokens.add(reference[j])
            yield j

    def best(i: int, used: int, prev: int):
        if i == n:
            return (0, 0, 0), ()
        exact, stemmed = edges[i]
        # prev only matters if prev+1 is still a usable partner here
        if prev >= 0:
            nxt = prev + 1
            if (used >> nxt) & 1 or (nxt not in exact and nxt not in stemmed):
                prev = -1
        key = (i, used, prev)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if len(memo) >= budget:
            raise _SearchBudgetExceeded
        score, path = best(i + 1, used, -1)
        choice = None
        for kind, partners in ((0, exact), (1, stemmed)):
            for j in options(partners, used):
                (e, s, links), sub_path = best(i + 1, used | (1 << j), j)
                cand_score = (e + (kind == 0), s + (kind == 1), links + (prev >= 0 and j == prev + 1))
                if cand_score > score:
                    score, path, choice = cand_score, sub_path, j
        result = (score, path if choice is None else ((i, choice),) + path)
        memo[key] = result
        return result

    if sys.getrecursionlimit() < n + 200:
        sys.setrecursionlimit(n + 200)
    return list(best(0, 0, -1)[1])


def _greedy_alignment(edges) -> list[tuple[int, int]]:
    """Left-to-right matching, exact stage then stem stage, preferring chunk extension."""
    aligned: dict[int, int] = {}
    used: set[int] = set()
    for stage in (0, 1):
        for i, partners in enumerate(e[stage] for e in edges):
            if i in aligned:
                continue
            free = [j for j in partners if j not in used]
            if not free:
                continue
            prev = aligned.get(i - 1)
            j = prev + 1 if prev is not None and prev + 1 in free else free[0]
            aligned[i] = j
            used.add(j)
    return sorted(aligned.items())


def _max_matches(candidate, reference) -> tuple[int, int]:
    """Largest possible (exact, stem-only) match counts."""
    c_counts, r_counts = Counter(candidate), Counter(reference)
    exact = 0
    c_rest: Counter = Counter()
    r_rest: Counter = Counter()
    for w in c_counts.keys() | r_counts.keys():
        k = min(c_counts[w], r_counts[w])
        exact += k
        c_rest[stem(w)] += c_counts[w] - k
        r_rest[stem(w)] += r_counts[w] - k
    return exact, sum(min(c_rest[s], r_rest[s]) for s in c_rest)


def _ilp_alignment(edges, n_ref: int, n_exact: int, n_stem: int) -> Optional[list[tuple[int, int]]]:
    """Fewest-chunk alignment as a 0/1 program; None if the solver gives up.

    One variable per candidate/reference edge and one per possible link
    between consecutive edges; match counts are pinned, links maximized.
    """
    pairs = [(i, j, kind) for i, e in enumerate(edges) for kind in (0, 1) for j in e[kind]]
    if not pairs:
        return []
    index = {(i, j): k for k, (i, j, _) in enumerate(pairs)}
    links = [(k, index[(i + 1, j + 1)]) for k, (i, j, _) in enumerate(pairs) if (i + 1, j + 1) in index]
    nx, ny = len(pairs), len(links)
    n_rows = len(edges) + n_ref + 2 + 2 * ny
    rows, cols, vals = [], [], []
    lower = np.zeros(n_rows)
    upper = np.ones(n_rows)
    for k, (i, j, kind) in enumerate(pairs):
        rows += [i, len(edges) + j, len(edges) + n_ref + kind]
        cols += [k, k, k]
        vals += [1.0, 1.0, 1.0]
    base = len(edges) + n_ref
    lower[base], upper[base] = n_exact, n_exact
    lower[base + 1], upper[base + 1] = n_stem, n_stem
    for l, (a, b) in enumerate(links):
        for r, k in ((base + 2 + 2 * l, a), (base + 3 + 2 * l, b)):
            rows += [r, r]
            cols += [nx + l, k]
            vals += [1.0, -1.0]
            lower[r], upper[r] = -np.inf, 0.0
    matrix = csr_matrix((vals, (rows, cols)), shape=(n_rows, nx + ny))
    objective = np.concatenate([np.zeros(nx), -np.ones(ny)])
    res = milp(
        objective,
        constraints=LinearConstraint(matrix, lower, upper),
        integrality=np.ones(nx + ny),
        bounds=Bounds(0, 1),
        options={"mip_rel_gap": 0.0, "time_limit": 30.0},
    )
    if res.status != 0 or res.x is None:
        return None
    chosen = res.x[:nx] > 0.5
    return sorted((pairs[k][0], pairs[k][1]) for k in np.flatnonzero(chosen))


def meteor_alignment(candidate: Sequence[str], reference: Sequence[str]) -> list[tuple[int, int]]:
    """One-to-one unigram alignment (exact stage, then Porter-stem stage).

    Cardinality is maximal per stage; among such alignments the one with
    the fewest chunks is found exactly when the match count is at most
    ``METEOR_EXACT_MAX_MATCHES``: by memoized search, or by a 0/1 program
    once the search exceeds ``METEOR_STATE_BUDGET`` states.  Larger
    alignments are built greedily.
    """
    edges = _edges(candidate, reference)
    n_exact, n_stem = _max_matches(candidate, reference)
    if n_exact + n_stem <= METEOR_EXACT_MAX_MATCHES:
        try:
            return _search_alignment(edges, reference, METEOR_STATE_BUDGET)
        except _SearchBudgetExceeded:
            alignment = _ilp_alignment(edges, len(reference), n_exact, n_stem)
            if alignment is not None:
                return alignment
    return _greedy_alignment(edges)


def meteor_from_counts(matches: int, chunks: int, c_len: int, r_len: int) -> float:
    if matches == 0:
        return 0.0
    p = matches / c_len
    r = matches / r_len
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1 - penalty)


def meteor(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """METEOR with exact and stem matching (no synonym stage)."""
    alignment = meteor_alignment(candidate, reference)
    return meteor_from_counts(len(alignment), count_chunks(alignment), len(candidate), len(reference))


# ------------------------------------------------------------- BERTScore


def _normalized(vectors, side: str) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{side} vectors must all have the same dimension")
    norms = np.linalg.norm(arr, axis=1)
    if (norms == 0).any():
        raise ValueError(f"zero-norm vector at {side} position {int(np.argmax(norms == 0))}")
    return arr / norms[:, None]


def bertscore_aggregate(cand_vectors, ref_vectors) -> tuple[float, float, float]:
    """Greedy max-cosine matching of token embeddings, no idf, no rescaling."""
    if len(cand_vectors) == 0 or len(ref_vectors) == 0:
        return 0.0, 0.0, 0.0
    c = _normalized(cand_vectors, "candidate")
    r = _normalized(ref_vectors, "reference")
    if c.shape[1] != r.shape[1]:
        raise ValueError(f"dimension mismatch: candidate {c.shape[1]} vs reference {r.shape[1]}")
    sim = c @ r.T
    # cosines can stray a few ulps outside [-1, 1]
    np.clip(sim, -1.0, 1.0, out=sim)
    p = float(sim.max(axis=1).mean())
    rec = float(sim.max(axis=0).mean())
    p, rec = max(p, 0.0), max(rec, 0.0)
    f = 2 * p * rec / (p + rec) if p + rec > 0 else 0.0
    return p, rec, f


# ------------------------------------------------------------ corpus level


class MissingCaptionError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0])


@dataclass(frozen=True)
class CaptionPairScore:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    rouge1_f: float
    rougeL_f: float
    meteor: float
    bert_p: Optional[float] = None
    bert_r: Optional[float] = None
    bert_f: Optional[float] = None

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise ValueError(f"{f.name} out of [0,1]: {v!r}")


# report column -> CaptionPairScore attribute, in table order
TABLE_COLUMNS = (
    ("BERTScore", "bert_f"),
    ("BLEU1", "bleu1"),
    ("BLEU2", "bleu2"),
    ("BLEU3", "bleu3"),
    ("BLEU4", "bleu4"),
    ("ROUGE", "rouge1_f"),
    ("METEOR", "meteor"),
)


@dataclass(frozen=True)
class CaptionEvalResult:
    image_ids: tuple[str, ...]
    per_pair: tuple[CaptionPairScore, ...]
    corpus: Mapping[str, float]
    n_pairs: int

    def as_metrics(self) -> dict[str, float]:
        """Corpus means under the report column names."""
        return {col: self.corpus[attr] for col, attr in TABLE_COLUMNS if attr in self.corpus}


def score_pair(candidate: str, reference: str, embeddings=None) -> CaptionPairScore:
    cand, ref = tokenize(candidate), tokenize(reference)
    bert = bertscore_aggregate(*embeddings) if embeddings is not None else (None, None, None)
    return CaptionPairScore(
        bleu(cand, ref, 1),
        bleu(cand, ref, 2),
        bleu(cand, ref, 3),
        bleu(cand, ref, 4),
        rouge(cand, ref, "rouge1")[2],
        rouge(cand, ref, "rougeL")[2],
        meteor(cand, ref),
        *bert,
    )


def evaluate_captions(
    gold: CaptionCorpus,
    generated: CaptionCorpus,
    embeddings: Optional[Mapping[str, tuple]] = None,
    postprocess: bool = False,
    max_block: int = 4,
    threads: Optional[int] = 1,
) -> CaptionEvalResult:
    """Score generated captions against gold captions image by image.

    ``embeddings`` maps image id -> (candidate vectors, reference vectors)
    and enables the BERTScore columns.  With ``postprocess`` the generated
    captions go through :func:`collapse_repetitions` first; embeddings are
    used as supplied and should describe the captions actually scored.
    """
    if not gold:
        raise ValueError("gold caption corpus is empty")
    ids = tuple(gold)
    for image_id in ids:
        if image_id not in generated:
            raise MissingCaptionError(f"no generated caption for gold image {image_id!r}")
        if embeddings is not None and image_id not in embeddings:
            raise MissingCaptionError(f"no embeddings for image {image_id!r}")

    def one(image_id: str) -> CaptionPairScore:
        cand = generated[image_id]
        if postprocess:
            cand = collapse_repetitions(cand, max_block)
        emb = embeddings[image_id] if embeddings is not None else None
        return score_pair(cand, gold[image_id], emb)

    per_pair = ordered_map(one, ids, threads)
    names = [f.name for f in fields(CaptionPairScore)]
    if embeddings is None:
        names = [n for n in names if not n.startswith("bert_")]
    corpus = {}
    for name in names:
        total = 0.0
        for score in per_pair:
            total += getattr(score, name)
        corpus[name] = total / len(per_pair)
    return CaptionEvalResult(ids, tuple(per_pair), corpus, len(per_pair))
