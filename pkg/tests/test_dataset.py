import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sound2vec.alphabet import DEFAULT_ALPHABET, encode_transcript
from sound2vec.ctc import ctc_batch_loss, ctc_loss
from sound2vec.dataset import (
    SplitSpec,
    SynthSpec,
    Utterance,
    batch_examples,
    default_frontend,
    featurize,
    generate_synthetic,
    make_batches,
    read_manifest,
    render_text,
    split_dataset,
    write_manifest,
)
from sound2vec.errors import ConfigError, DataError, TooFewUtterancesError
from sound2vec.frontend import AudioClip, compute_spectrogram, read_wav
from sound2vec.model import CrnnConfig, build_crnn


def _utts(n):
    return [Utterance(AudioClip(np.zeros(400)), f"u{i}", uid=str(i)) for i in range(n)]


# ---------------------------------------------------------------------------
# Splits


def test_split_sizes():
    train, dev, test = split_dataset(_utts(100))
    assert (len(train), len(dev), len(test)) == (80, 10, 10)


def test_split_too_few():
    with pytest.raises(TooFewUtterancesError):
        split_dataset(_utts(9))


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 120), st.integers(0, 1000))
def test_split_is_a_deterministic_partition(n, seed):
    utts = _utts(n)
    a = split_dataset(utts, SplitSpec(seed=seed))
    b = split_dataset(utts, SplitSpec(seed=seed))
    assert [[u.uid for u in p] for p in a] == [[u.uid for u in p] for p in b]
    ids = [u.uid for part in a for u in part]
    assert sorted(ids) == sorted(u.uid for u in utts)
    assert len(set(ids)) == n


def test_split_seed_changes_order():
    a = split_dataset(_utts(50), SplitSpec(seed=0))[0]
    b = split_dataset(_utts(50), SplitSpec(seed=1))[0]
    assert [u.uid for u in a] != [u.uid for u in b]


def test_split_spec_validation():
    with pytest.raises(ConfigError):
        SplitSpec((8, -1, 1))


# ---------------------------------------------------------------------------
# Encoding


def test_encode_round_trip():
    idx = DEFAULT_ALPHABET.index
    assert encode_transcript("ab") == [idx["a"], idx["b"]]
    assert DEFAULT_ALPHABET.decode(encode_transcript("Hi, there")) == "hi<UNK> there"


def test_empty_transcript_rejected():
    with pytest.raises(DataError):
        Utterance(AudioClip(np.zeros(10)), "  ")


# ---------------------------------------------------------------------------
# Batching


def test_batch_sizes_and_zero_padding():
    spec = SynthSpec(count=5, noise=0.1)
    batches = make_batches(generate_synthetic(spec), default_frontend(), 2)
    assert [len(b) for b in batches] == [2, 2, 1]
    for b in batches:
        for i, n in enumerate(b.lengths):
            assert np.all(b.features[i, n:] == 0.0)


def test_batched_loss_equals_individual_losses():
    utts = generate_synthetic(SynthSpec(count=3, noise=0.1, seed=3))
    examples = featurize(utts, default_frontend())
    model = build_crnn(CrnnConfig(filters=6, kernel=5, gru_layers=1, gru_hidden=5, padding="same"), 2)
    (batch,) = batch_examples(examples, 3)
    assert len(set(batch.lengths.tolist())) > 1
    lp, out_len, _ = model.forward(batch.features, batch.lengths)
    batched, _ = ctc_batch_loss(lp, out_len, batch.labels, 29)
    for i, ex in enumerate(examples):
        single_lp, _, _ = model.forward(ex.features)
        loss, _ = ctc_loss(single_lp[0], ex.labels, 29)
        assert batched[i] == pytest.approx(loss, abs=1e-9)


def test_shuffle_is_seeded():
    examples = featurize(generate_synthetic(SynthSpec(count=8)), default_frontend())
    order = lambda seed: [t for b in batch_examples(examples, 3, seed) for t in b.transcripts]
    assert order(1) == order(1)
    assert order(1) != order(2)
    assert sorted(order(1)) == sorted(ex.transcript for ex in examples)


def test_infeasible_utterances_skipped_with_warning(caplog):
    spec = SynthSpec(count=4, char_ms=20, gap_ms=5)
    utts = generate_synthetic(spec)
    # output length 1 cannot carry any multi-character transcript
    with caplog.at_level(logging.WARNING):
        batches = make_batches(utts, default_frontend(), 2, output_length=lambda n: 1)
    assert batches == []
    assert "skipping" in caplog.text


# ---------------------------------------------------------------------------
# Synthetic corpus and manifests


def test_render_duration():
    clip = render_text("ab", SynthSpec(char_ms=100, gap_ms=10))
    assert clip.samples.size == 3200


def test_single_character_peaks_at_assigned_bins():
    spec = SynthSpec(char_ms=100, gap_ms=10)
    for ch in "aq'":
        spectrum = compute_spectrogram(render_text(ch, spec))[5]
        top_two = sorted(np.argsort(spectrum)[-2:])
        assert tuple(top_two) == spec.tone_bins()[ch]


def test_synthetic_is_deterministic():
    a = generate_synthetic(SynthSpec(count=6, seed=4))
    b = generate_synthetic(SynthSpec(count=6, seed=4))
    assert [u.transcript for u in a] == [u.transcript for u in b]
    assert all(np.array_equal(x.audio.samples, y.audio.samples) for x, y in zip(a, b))
    c = generate_synthetic(SynthSpec(count=6, seed=5))
    assert [u.transcript for u in a] != [u.transcript for u in c]


def test_synthetic_text_shape():
    spec = SynthSpec(count=200, seed=1)
    for u in generate_synthetic(spec):
        assert spec.min_chars <= len(u.transcript) <= spec.max_chars
        assert u.transcript == u.transcript.strip() and "  " not in u.transcript


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(gap_ms=60, char_ms=50)
    with pytest.raises(ConfigError):
        SynthSpec(amplitude=0.6)
    with pytest.raises(ConfigError):
        SynthSpec(charset="abcdefghijklmnopqrstuvwxyz0123456789")


def test_manifest_round_trip(tmp_path):
    utts = generate_synthetic(SynthSpec(count=3, noise=0.0))
    write_manifest(tmp_path / "m.tsv", utts)
    back = read_manifest(tmp_path / "m.tsv")
    assert [u.transcript for u in back] == [u.transcript for u in utts]
    for a, b in zip(utts, back):
        np.testing.assert_allclose(b.load().samples, a.audio.samples, atol=1 / 32768)
    assert read_wav(back[0].audio).sample_rate_hz == 16000


def test_manifest_bad_line(tmp_path):
    (tmp_path / "m.tsv").write_text("no-tab-here\n", encoding="utf-8")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "m.tsv")
