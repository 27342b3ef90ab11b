import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sound2vec import nn
from sound2vec.ctc import ctc_batch_loss, ctc_lattice, ctc_loss, extend_labels, min_frames
from sound2vec.decode import collapse
from sound2vec.errors import EmptyLabelError, InfeasibleAlignmentError

BLANK = 3  # 4-symbol alphabet {0, 1, 2, blank}


def _random_log_probs(rng, T, M=4):
    return nn.log_softmax(rng.normal(scale=2.0, size=(T, M)))


def brute_force_nll(log_probs, labels, blank=BLANK):
    """-log of the summed probability of every frame path that collapses to ``labels``."""
    T, M = log_probs.shape
    total = -np.inf
    for path in itertools.product(range(M), repeat=T):
        if collapse(path, blank) == list(labels):
            total = np.logaddexp(total, sum(log_probs[t, k] for t, k in enumerate(path)))
    return -total


def all_instances():
    for T in range(1, 7):
        for n in range(1, 4):
            for labels in itertools.product(range(3), repeat=n):
                if min_frames(labels) <= T:
                    yield T, labels


def test_single_frame_single_label():
    lp = _random_log_probs(np.random.default_rng(0), 1)
    loss, _ = ctc_loss(lp, [1], BLANK)
    assert loss == pytest.approx(-lp[0, 1], abs=1e-12)


def test_matches_brute_force_exhaustively():
    rng = np.random.default_rng(1)
    worst = 0.0
    count = 0
    for T, labels in all_instances():
        lp = _random_log_probs(rng, T)
        worst = max(worst, abs(ctc_loss(lp, labels, BLANK)[0] - brute_force_nll(lp, labels)))
        count += 1
    assert count == 150
    assert worst < 1e-8


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    lp = _random_log_probs(rng, 6)
    _, grad = ctc_loss(lp, [0, 0, 2], BLANK)
    assert nn.grad_check(lambda: ctc_loss(lp, [0, 0, 2], BLANK)[0], {"lp": lp}, {"lp": grad}) < 1e-4


def test_gradient_through_softmax():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(7, 5))
    labels = [1, 2, 1]

    def loss():
        return ctc_loss(nn.log_softmax(logits), labels, 4)[0]

    lp = nn.log_softmax(logits)
    _, g = ctc_loss(lp, labels, 4)
    assert nn.grad_check(loss, {"z": logits}, {"z": nn.log_softmax_backward(lp, g)}) < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 12), st.lists(st.integers(0, 2), min_size=1, max_size=3))
def test_occupancy_rows_sum_to_one(seed, T, labels):
    if min_frames(labels) > T:
        return
    lp = _random_log_probs(np.random.default_rng(seed), T)
    loss, grad = ctc_loss(lp, labels, BLANK)
    assert loss >= 0
    # every frame is occupied by exactly one symbol on every path
    np.testing.assert_allclose(-grad.sum(axis=1), 1.0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 10), st.lists(st.integers(0, 2), min_size=1, max_size=3))
def test_alpha_beta_agree_at_every_frame(seed, T, labels):
    if min_frames(labels) > T:
        return
    lp = _random_log_probs(np.random.default_rng(seed), T)
    lat = ctc_lattice(lp, labels, BLANK)
    emit = lp[:, lat.extended]
    for t in range(T):
        per_t = np.logaddexp.reduce(lat.alpha[t] + lat.beta[t] - emit[t])
        assert per_t == pytest.approx(lat.log_likelihood, abs=1e-9)


def test_infeasible_alignment():
    lp = _random_log_probs(np.random.default_rng(4), 2)
    with pytest.raises(InfeasibleAlignmentError):
        ctc_loss(lp, [1, 1], BLANK)  # repeats need a separating blank
    with pytest.raises(InfeasibleAlignmentError):
        ctc_loss(lp, [0, 1, 2], BLANK)


def test_zero_probability_is_numeric_not_infeasible():
    lp = np.full((2, 4), -np.inf)
    lp[:, BLANK] = 0.0
    loss, _ = ctc_loss(lp, [1], BLANK)
    assert loss == np.inf


def test_empty_labels_and_blank_in_labels():
    lp = _random_log_probs(np.random.default_rng(5), 3)
    with pytest.raises(EmptyLabelError):
        ctc_loss(lp, [], BLANK)
    with pytest.raises(ValueError):
        ctc_loss(lp, [BLANK], BLANK)


def test_min_frames_and_extension():
    assert min_frames([1, 1, 2]) == 4
    assert min_frames([0, 1, 2]) == 3
    np.testing.assert_array_equal(extend_labels([5, 6], 9), [9, 5, 9, 6, 9])


def test_batch_loss_matches_items_and_zeroes_padding():
    rng = np.random.default_rng(6)
    lp = nn.log_softmax(rng.normal(size=(3, 8, 4)))
    lengths = [8, 5, 3]
    labels = [[0, 1], [2], [1, 1]]
    losses, grad = ctc_batch_loss(lp, lengths, labels, BLANK)
    for b in range(3):
        loss_b, grad_b = ctc_loss(lp[b, : lengths[b]], labels[b], BLANK)
        assert losses[b] == pytest.approx(loss_b, abs=1e-12)
        np.testing.assert_allclose(grad[b, : lengths[b]], grad_b)
        assert np.all(grad[b, lengths[b] :] == 0.0)
