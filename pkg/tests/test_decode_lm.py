import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sound2vec import nn
from sound2vec.alphabet import DEFAULT_ALPHABET, Alphabet, encode_transcript
from sound2vec.decode import beam_decode, beam_search, collapse, greedy_decode
from sound2vec.errors import ConfigError, EmptyDatasetError, EmptyLabelError
from sound2vec.lm import CharNGramLM, lm_score, train_char_lm

SMALL = Alphabet.from_chars("abc")  # blank is index 3


def _one_hot_frames(indices, M=4, floor=-50.0):
    lp = np.full((len(indices), M), floor)
    lp[np.arange(len(indices)), indices] = 0.0
    return lp


# ---------------------------------------------------------------------------
# Alphabet


def test_default_alphabet_layout():
    assert len(DEFAULT_ALPHABET) == 30
    assert DEFAULT_ALPHABET.blank_index == 29
    assert DEFAULT_ALPHABET.symbols[26:28] == (" ", "'")


def test_tokenize_lowercases_and_maps_unknown():
    assert encode_transcript("Ab!") == [0, 1, DEFAULT_ALPHABET.unk_index]
    with pytest.raises(EmptyLabelError):
        encode_transcript("")


# ---------------------------------------------------------------------------
# Greedy


def test_collapse_rules():
    a, b, blank = 0, 1, 3
    assert greedy_decode(_one_hot_frames([a, a, blank, b]), SMALL) == "ab"
    assert greedy_decode(_one_hot_frames([blank, blank]), SMALL) == ""
    assert greedy_decode(_one_hot_frames([a, blank, a]), SMALL) == "aa"
    assert collapse([a, a, a], blank) == [a]


# ---------------------------------------------------------------------------
# Beam search


def test_beam_width_zero_rejected():
    with pytest.raises(ConfigError):
        beam_decode(_one_hot_frames([0]), 0, alphabet=SMALL)
    with pytest.raises(ConfigError):
        beam_decode(_one_hot_frames([0]), 2, lm_weight=-1.0, alphabet=SMALL)


@pytest.mark.parametrize("width", [1, 2, 8])
def test_beam_equals_greedy_on_confident_frames(width):
    path = [0, 0, 3, 1, 1, 2, 3, 2]
    lp = _one_hot_frames(path)
    assert beam_decode(lp, width, alphabet=SMALL) == greedy_decode(lp, SMALL) == "abcc"


def exhaustive_best(log_probs, blank=3):
    """Labeling with the largest summed path probability, ties to the smaller index tuple."""
    T, M = log_probs.shape
    scores = {}
    for path in itertools.product(range(M), repeat=T):
        lab = tuple(collapse(path, blank))
        p = sum(log_probs[t, k] for t, k in enumerate(path))
        scores[lab] = np.logaddexp(scores.get(lab, -np.inf), p)
    return min(scores, key=lambda lab: (-scores[lab], lab)), scores


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_wide_beam_matches_exhaustive_search(seed, T):
    lp = nn.log_softmax(np.random.default_rng(seed).normal(scale=1.5, size=(T, 4)))
    best, scores = exhaustive_best(lp)
    hyps = beam_search(lp, 3**T + 1, SMALL)
    assert hyps[0].prefix == best
    assert hyps[0].log_p_ctc == pytest.approx(scores[best], abs=1e-9)


def test_lm_breaks_acoustic_tie():
    corpus = ["then"] * 20 + ["than"] * 2 + ["the cat", "then we"]
    lm = train_char_lm(corpus, order=3)
    idx = DEFAULT_ALPHABET.index
    blank = DEFAULT_ALPHABET.blank_index
    frames = [("t",), ("h",), ("a", "e"), ("n",)]
    lp = np.full((len(frames), 30), -30.0)
    for t, chars in enumerate(frames):
        for ch in chars:
            lp[t, idx[ch]] = math.log(0.5 if len(chars) == 2 else 0.9)
        lp[t, blank] = math.log(0.05)
    # acoustically tied; index order alone picks "than"
    assert beam_decode(lp, 8) == "than"
    assert beam_decode(lp, 8, lm=lm, lm_weight=0.5) == "then"


# ---------------------------------------------------------------------------
# Character LM


def test_lm_bigram_counts():
    lm = train_char_lm(["ababab"], order=2)
    assert lm.log_prob("b", ["a"]) > lm.log_prob("a", ["a"])


def test_lm_smoothing_floor_and_normalisation():
    lm = train_char_lm(["hello world", "held"], order=3, add_k=0.5)
    for ctx in lm.table:
        dist = lm.distribution(list(ctx))
        assert math.fsum(math.exp(v) for v in dist.values()) == pytest.approx(1.0, abs=1e-9)
    # context "he" seen twice; unseen next char still gets k / (count + V k)
    assert math.exp(lm.log_prob("z", ["h", "e"])) >= 0.5 / (2 + 30 * 0.5)


def test_lm_backoff_for_unseen_context():
    lm = train_char_lm(["abc"], order=3)
    assert lm.context_of(["x", "y"]) == ()
    assert lm.context_of(["q", "a"]) == ("a",)


def test_lm_score_definition_and_monotonicity():
    lm = train_char_lm(["abab", "ba"], order=2)
    assert lm_score(lm, "") == 0.0
    assert lm_score(lm, "ab") == pytest.approx(lm.log_prob("a", []) + lm.log_prob("b", ["a"]))
    for ch in "ab z":
        assert lm_score(lm, "ab" + ch) < lm_score(lm, "ab")
    assert lm_score(lm, "a#") == pytest.approx(lm.log_prob("a", []) + lm.log_prob("<UNK>", ["a"]))


def test_lm_round_trip(tmp_path):
    lm = train_char_lm(["the cat sat", "then"], order=3)
    lm.save(tmp_path / "lm.txt")
    back = CharNGramLM.load(tmp_path / "lm.txt")
    assert back.order == 3 and back.vocab == lm.vocab
    assert back.table == lm.table


def test_lm_errors():
    with pytest.raises(EmptyDatasetError):
        train_char_lm([])
    with pytest.raises(ConfigError):
        train_char_lm(["ab"], order=0)
