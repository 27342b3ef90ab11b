import numpy as np
import pytest

from sound2vec.dataset import SynthSpec, generate_synthetic
from sound2vec.errors import DivergenceError, EmptyDatasetError
from sound2vec.model import CrnnConfig, load_checkpoint
from sound2vec.optim import TrainSchedule
from sound2vec.train import DecodeOptions, evaluate, mean_ctc_loss, prepare_corpus, run_training

TOY = CrnnConfig(filters=8, kernel=5, stride=2, gru_layers=1, gru_hidden=8)


@pytest.fixture(scope="module")
def corpus():
    return prepare_corpus(generate_synthetic(SynthSpec(count=40, min_chars=2, max_chars=4, noise=0.1, seed=2)))


def test_rerun_is_bit_identical(corpus):
    sched = TrainSchedule(lr=0.03, epochs=2, batch_size=4)
    a = run_training(TOY, corpus, sched, seed=3)
    b = run_training(TOY, corpus, sched, seed=3)
    assert a.history.cfv == b.history.cfv
    for k in a.model.params():
        assert a.model.params()[k].tobytes() == b.model.params()[k].tobytes()
    c = run_training(TOY, corpus, sched, seed=4)
    assert c.history.cfv != a.history.cfv


def test_zero_learning_rate_keeps_cfv_constant(corpus):
    res = run_training(TOY, corpus, TrainSchedule(lr=0.0, epochs=3, batch_size=8), seed=0)
    assert len(set(res.history.cfv)) == 1
    assert res.history.cfv[0] == pytest.approx(mean_ctc_loss(res.model, corpus.dev))


def test_toy_training_reduces_cfv(corpus):
    sched = TrainSchedule(lr=0.03, momentum=0.95, clip_norm=1.0, epochs=20, batch_size=4, lr_decay=0.9)
    res = run_training(TOY, corpus, sched, seed=0)
    assert len(res.history.records) == 20
    assert min(res.history.cfv) < 0.5 * res.history.cfv[0]
    assert res.best_cfv == min(res.history.cfv)
    # returned parameters are the best epoch's
    assert mean_ctc_loss(res.model, corpus.dev) == pytest.approx(res.best_cfv)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_huge_learning_rate_diverges(corpus):
    with pytest.raises(DivergenceError):
        run_training(TOY, corpus, TrainSchedule(lr=1e300, momentum=0.9, clip_norm=1e300, epochs=3), seed=0)


def test_checkpoints_written(corpus, tmp_path):
    res = run_training(TOY, corpus, TrainSchedule(epochs=2, batch_size=8), seed=1, checkpoint_dir=tmp_path)
    best = load_checkpoint(tmp_path / "best.ckpt")
    last = load_checkpoint(tmp_path / "last.ckpt")
    assert best.epoch == res.best_epoch and last.epoch == 2
    assert best.extra["seed"] == 1
    np.testing.assert_array_equal(best.norm_stats.mean, corpus.norm_stats.mean)


def test_model_too_wide_for_every_utterance(corpus):
    with pytest.raises(EmptyDatasetError):
        run_training(CrnnConfig(filters=2, kernel=400, gru_layers=0), corpus, TrainSchedule(epochs=1))


def test_evaluate_reports_rates(corpus):
    res = run_training(TOY, corpus, TrainSchedule(epochs=1, batch_size=8), seed=0)
    ev = evaluate(res.model, corpus.test)
    assert len(ev.hypotheses) == len(ev.references) == len(corpus.test)
    assert ev.wer >= 0 and ev.cer >= 0
    beam = evaluate(res.model, corpus.test, DecodeOptions("beam", beam_width=4))
    assert len(beam.hypotheses) == len(corpus.test)
