"""Edit distance, word/character error rates and word accuracy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import InsufficientDataError


@dataclass(frozen=True)
class EditStats:
    substitutions: int
    insertions: int
    deletions: int
    ref_length: int

    @property
    def distance(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def error_rate(self) -> float:
        return self.distance / self.ref_length


def levenshtein(ref: Sequence, hyp: Sequence) -> EditStats:
    """Unit-cost edit distance with one optimal S/I/D breakdown.

    On backtrace ties a substitution (or match) is preferred over a deletion,
    and a deletion over an insertion.
    """
    ref, hyp = list(ref), list(hyp)
    if not ref:
        raise InsufficientDataError("reference is empty; error rate is undefined")
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            d[i][j] = min(d[i - 1][j - 1] + cost, d[i - 1][j] + 1, d[i][j - 1] + 1)
    s = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditStats(s, ins, dels, n)


def words(text: str):
    return text.lower().split()


def wer(ref_text: str, hyp_text: str) -> float:
    return levenshtein(words(ref_text), words(hyp_text)).error_rate


def word_accuracy(ref_text: str, hyp_text: str) -> float:
    return 1.0 - wer(ref_text, hyp_text)


def cer(ref_text: str, hyp_text: str) -> float:
    return levenshtein(list(ref_text.lower()), list(hyp_text.lower())).error_rate


def corpus_error_rate(refs, hyps, unit: str = "word") -> float:
    """Total edits over total reference length across a list of utterances."""
    split = words if unit == "word" else (lambda t: list(t.lower()))
    edits = length = 0
    for r, h in zip(refs, hyps):
        st = levenshtein(split(r), split(h))
        edits += st.distance
        length += st.ref_length
    if length == 0:
        raise InsufficientDataError("no reference tokens")
    return edits / length
