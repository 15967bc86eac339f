"""Tokenization, sentence splitting and repetition removal for captions."""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_SENTENCE_SPLIT_RE = re.compile(r"[.!?]")

# sentence boundary marker inside collapse streams; never produced by tokenize()
_EOS = "."


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and return its maximal runs of ASCII letters/digits.

    Everything else, including non-ASCII letters, separates tokens.
    """
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Split on ``.``, ``!`` and ``?``; trim segments and drop empty ones."""
    return [s for s in (seg.strip() for seg in _SENTENCE_SPLIT_RE.split(text)) if s]


def _to_stream(text: str) -> list[str]:
    stream: list[str] = []
    for sentence in split_sentences(text):
        tokens = tokenize(sentence)
        if tokens:
            stream.extend(tokens)
            stream.append(_EOS)
    return stream


def _sentences(stream: list[str]) -> list[list[str]]:
    out: list[list[str]] = []
    current: list[str] = []
    for tok in stream:
        if tok == _EOS:
            if current:
                out.append(current)
            current = []
        else:
            current.append(tok)
    if current:
        out.append(current)
    return out


def _collapse_blocks(stream: list[str], max_block: int) -> list[str]:
    tokens = list(stream)
    changed = True
    while changed:
        changed = False
        for n in range(max_block, 0, -1):
            i = 0
            while i + 2 * n <= len(tokens):
                if tokens[i : i + n] == tokens[i + n : i + 2 * n]:
                    del tokens[i + n : i + 2 * n]
                    changed = True
                else:
                    i += 1
    return tokens


def _dedupe_sentences(stream: list[str]) -> list[str]:
    seen: set[tuple[str, ...]] = set()
    out: list[str] = []
    for sentence in _sentences(stream):
        key = tuple(sentence)
        if key in seen:
            continue
        seen.add(key)
        out.extend(sentence)
        out.append(_EOS)
    return out


def _render(stream: list[str]) -> str:
    sentences = _sentences(stream)
    if not sentences:
        return ""
    return ". ".join(" ".join(s) for s in sentences) + "."


def collapse_repetitions(text: str, max_block: int = 4) -> str:
    """Remove immediately repeated token blocks and duplicate sentences.

    Blocks of up to ``max_block`` tokens are collapsed longest-first; a
    sentence boundary counts as a token, so blocks may span sentences.
    Duplicate sentences are then dropped, keeping the first occurrence.
    Both passes repeat until nothing changes.  The result is normalized
    text: lowercase tokens separated by spaces, sentences ending in ``.``.

    >>> collapse_repetitions("ct scan showing ct scan showing mass")
    'ct scan showing mass.'
    """
    if max_block < 1:
        raise ValueError("max_block must be a positive integer")
    stream = _to_stream(text)
    while True:
        nxt = _dedupe_sentences(_collapse_blocks(stream, max_block))
        if nxt == stream:
            return _render(stream)
        stream = nxt
