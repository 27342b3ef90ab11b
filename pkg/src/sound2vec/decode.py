"""Greedy and prefix-beam CTC decoding with optional character LM shallow fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .alphabet import DEFAULT_ALPHABET, Alphabet
from .errors import ConfigError
from .lm import CharNGramLM

NEG_INF = float("-inf")


def collapse(path, blank: int) -> List[int]:
    out, prev = [], None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return out


def greedy_indices(log_probs, blank: int) -> List[int]:
    return collapse(np.argmax(np.asarray(log_probs), axis=1), blank)


def greedy_decode(log_probs, alphabet: Alphabet = DEFAULT_ALPHABET) -> str:
    return alphabet.decode(greedy_indices(log_probs, alphabet.blank_index))


@dataclass
class BeamHypothesis:
    prefix: Tuple[int, ...]
    log_p_blank: float
    log_p_nonblank: float
    lm_log_prob: float = 0.0

    @property
    def log_p_ctc(self) -> float:
        return float(np.logaddexp(self.log_p_blank, self.log_p_nonblank))

    def score(self, lm_weight: float, insertion_bonus: float) -> float:
        return self.log_p_ctc + lm_weight * self.lm_log_prob + insertion_bonus * len(self.prefix)


def _lae(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    return float(np.logaddexp(a, b))


def beam_search(
    log_probs,
    beam_width: int,
    alphabet: Alphabet = DEFAULT_ALPHABET,
    lm: Optional[CharNGramLM] = None,
    lm_weight: float = 0.0,
    insertion_bonus: float = 0.0,
) -> List[BeamHypothesis]:
    """Prefix beam search; returns the surviving hypotheses, best first.

    Hypotheses are ranked by ``log p_ctc + lm_weight * log p_lm +
    insertion_bonus * len(prefix)`` with ties broken by the lexicographic
    order of the index sequence.
    """
    if beam_width < 1:
        raise ConfigError("beam width must be >= 1")
    if lm_weight < 0 or insertion_bonus < 0:
        raise ConfigError("LM weight and insertion bonus must be non-negative")
    log_probs = np.asarray(log_probs, dtype=np.float64)
    blank = alphabet.blank_index
    symbols = alphabet.symbols
    use_lm = lm is not None and lm_weight > 0
    lm_cache: Dict[Tuple[int, ...], float] = {(): 0.0}

    def lm_of(prefix):
        if prefix not in lm_cache:
            history = [symbols[i] for i in prefix[:-1]]
            lm_cache[prefix] = lm_of(prefix[:-1]) + lm.log_prob(symbols[prefix[-1]], history)
        return lm_cache[prefix]

    def rank(items):
        def key(item):
            prefix, (pb, pnb) = item
            s = _lae(pb, pnb) + insertion_bonus * len(prefix)
            if use_lm:
                s += lm_weight * lm_of(prefix)
            return (-s, prefix)

        return sorted(items, key=key)[:beam_width]

    beams: List[Tuple[Tuple[int, ...], Tuple[float, float]]] = [((), (0.0, NEG_INF))]
    chars = [k for k in range(log_probs.shape[1]) if k != blank]
    for row in log_probs:
        nxt: Dict[Tuple[int, ...], List[float]] = {}

        def slot(prefix):
            if prefix not in nxt:
                nxt[prefix] = [NEG_INF, NEG_INF]
            return nxt[prefix]

        p_blank = float(row[blank])
        for prefix, (pb, pnb) in beams:
            total = _lae(pb, pnb)
            cur = slot(prefix)
            cur[0] = _lae(cur[0], total + p_blank)
            last = prefix[-1] if prefix else None
            for k in chars:
                p = float(row[k])
                if p == NEG_INF:
                    continue
                ext = slot(prefix + (k,))
                if k == last:
                    cur[1] = _lae(cur[1], pnb + p)
                    ext[1] = _lae(ext[1], pb + p)
                else:
                    ext[1] = _lae(ext[1], total + p)
        beams = rank((p, (v[0], v[1])) for p, v in nxt.items())
    return [
        BeamHypothesis(prefix, pb, pnb, lm_of(prefix) if use_lm else 0.0) for prefix, (pb, pnb) in beams
    ]


def beam_decode(
    log_probs,
    beam_width: int = 8,
    lm: Optional[CharNGramLM] = None,
    lm_weight: float = 0.0,
    insertion_bonus: float = 0.0,
    alphabet: Alphabet = DEFAULT_ALPHABET,
) -> str:
    best = beam_search(log_probs, beam_width, alphabet, lm, lm_weight, insertion_bonus)[0]
    return alphabet.decode(best.prefix)
