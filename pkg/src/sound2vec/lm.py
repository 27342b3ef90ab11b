"""Character n-gram language model with add-k smoothing and back-off.

A context seen in training gets ``(count(h, c) + k) / (count(h) + V * k)``
over the ``V`` non-blank alphabet symbols. An unseen context backs off by
dropping its oldest character until a seen one is found; the empty context
is always seen.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from .alphabet import DEFAULT_ALPHABET, Alphabet
from .errors import ConfigError, DataError, EmptyDatasetError

START = "<s>"


class CharNGramLM:
    def __init__(self, order: int, vocab: Sequence[str], table: Dict[Tuple[str, ...], Dict[str, float]]):
        self.order = order
        self.vocab = list(vocab)
        self.table = table

    def context_of(self, history: Sequence[str]) -> Tuple[str, ...]:
        n = self.order - 1
        if n == 0:
            return ()
        padded = [START] * n + list(history)
        ctx = tuple(padded[len(padded) - n :])
        while ctx not in self.table:
            ctx = ctx[1:]
        return ctx

    def log_prob(self, char: str, history: Sequence[str]) -> float:
        return self.table[self.context_of(history)][char]

    def distribution(self, history: Sequence[str]) -> Dict[str, float]:
        return self.table[self.context_of(history)]

    def save(self, path) -> None:
        lines = [f"# order={self.order}", "# vocab=" + json.dumps(self.vocab)]
        rows = []
        for ctx, dist in self.table.items():
            for ch, lp in dist.items():
                rows.append((json.dumps(list(ctx)), json.dumps(ch), repr(lp)))
        lines += ["\t".join(r) for r in sorted(rows)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CharNGramLM":
        order, vocab = None, None
        table: Dict[Tuple[str, ...], Dict[str, float]] = defaultdict(dict)
        try:
            for line in Path(path).read_text(encoding="utf-8").splitlines():
                if line.startswith("# order="):
                    order = int(line.split("=", 1)[1])
                elif line.startswith("# vocab="):
                    vocab = json.loads(line.split("=", 1)[1])
                elif line:
                    ctx, ch, lp = line.split("\t")
                    table[tuple(json.loads(ctx))][json.loads(ch)] = float(lp)
        except (OSError, ValueError) as exc:
            raise DataError(f"{path}: cannot read language model: {exc}") from exc
        if order is None or vocab is None:
            raise DataError(f"{path}: missing language-model header")
        return cls(order, vocab, dict(table))


def train_char_lm(
    transcripts: Iterable[str], order: int = 3, add_k: float = 0.5, alphabet: Alphabet = DEFAULT_ALPHABET
) -> CharNGramLM:
    if order < 1:
        raise ConfigError("n-gram order must be >= 1")
    if add_k <= 0:
        raise ConfigError("add_k must be positive")
    vocab = alphabet.characters
    counts: Dict[Tuple[str, ...], Counter] = defaultdict(Counter)
    seen_any = False
    for text in transcripts:
        chars = alphabet.tokenize(text)
        if not chars:
            continue
        seen_any = True
        padded = [START] * (order - 1) + chars
        for i in range(order - 1, len(padded)):
            ch = padded[i]
            # every suffix of the full context, so back-off targets have counts
            for n in range(order):
                counts[tuple(padded[i - n : i])][ch] += 1
    if not seen_any:
        raise EmptyDatasetError("cannot train a language model on an empty corpus")
    V = len(vocab)
    table = {}
    for ctx, counter in counts.items():
        total = sum(counter.values())
        denom = math.log(total + V * add_k)
        table[ctx] = {ch: math.log(counter[ch] + add_k) - denom for ch in vocab}
    return CharNGramLM(order, vocab, table)


def lm_score(lm: CharNGramLM, text) -> float:
    """Sum of conditional log-probabilities; characters outside the vocabulary score as ``<UNK>``."""
    chars: List[str] = list(text) if not isinstance(text, str) else _tokens(lm, text)
    total, history = 0.0, []
    for ch in chars:
        total += lm.log_prob(ch, history)
        history.append(ch)
    return total


def _tokens(lm, text):
    vocab = set(lm.vocab)
    out = []
    for ch in text.lower():
        out.append(ch if ch in vocab else "<UNK>")
    return out
