import numpy as np
import pytest

from ate import tagger
from ate.corpus import count_violations
from ate.embeddings import EmbeddingTable
from ate.neural import grad_check
from ate.synthetic import SyntheticCorpus
from ate.tagger import METHODS, ConfigError, TaggerConfig, TaggerModel


@pytest.fixture(scope="module")
def corpus():
    return SyntheticCorpus(seed=3, n_filler=40)


def tiny(method, corpus, dim=6, **kw):
    cfg = TaggerConfig.for_method(method, word_hidden=4, char_hidden=3, char_dim=4, dropout=0.0, **kw)
    table = corpus.table(dim=dim)
    sents = corpus.sentences(4, seed=1, min_len=2, max_len=4)
    return tagger.build_for_data(cfg, table, sents), sents


def test_method_names_one_to_one():
    assert len(set(METHODS.values())) == 8
    for name, flags in METHODS.items():
        assert tagger.method_name(*flags) == name
        assert TaggerConfig.for_method(name).method == name
    with pytest.raises(ConfigError, match="WoCh-BiLSTM-CRF"):
        tagger.parse_method("BiLSTM")


def test_wo_lstm_has_no_char_params(corpus):
    model, _ = tiny("Wo-LSTM", corpus)
    names = [p.name for p in model.params()]
    assert not any(n.startswith("char.") or n.startswith("crf.") for n in names)
    assert model.bwd is None


def test_dimension_arithmetic():
    table = EmbeddingTable("t", ["a", "b"], np.ones((2, 300)))
    cfg = TaggerConfig.for_method("WoCh-BiLSTM-CRF")
    model = tagger.build_for_data(cfg, table, [["a", "b"]])
    assert model.input_dim == 350
    assert model.head_dim == 200
    assert model.head_W.shape == (3, 200)


def test_same_seed_bit_identical(corpus):
    a, _ = tiny("WoCh-BiLSTM-CRF", corpus)
    b, _ = tiny("WoCh-BiLSTM-CRF", corpus)
    for pa, pb in zip(a.params(), b.params()):
        assert pa.name == pb.name and pa.value.tobytes() == pb.value.tobytes()
    c, _ = tiny("WoCh-BiLSTM-CRF", corpus, seed=2)
    assert not np.array_equal(a.fwd.U_i.value, c.fwd.U_i.value)


@pytest.mark.parametrize("method", ["WoCh-BiLSTM-CRF", "WoCh-LSTM", "Wo-BiLSTM"])
def test_model_gradients(method, corpus):
    model, sents = tiny(method, corpus, finetune_embeddings=True)
    words = [s.words for s in sents]
    tags = [s.gold_tags for s in sents]
    report = grad_check(lambda t: model.loss(t, words, tags), model.params(),
                        tolerance=1e-5, samples=10)
    assert report.passed, str(report)
    assert len(report.worst) == len(model.params())


def test_max_epochs_zero_leaves_model(corpus):
    model, sents = tiny("Wo-LSTM-CRF", corpus, max_epochs=0)
    before = model.state()
    log = tagger.train(model, sents)
    assert log.train_loss == [] and log.val_f1 == [] and log.stopped_epoch == 0
    for k, v in model.state().items():
        np.testing.assert_array_equal(v, before[k])


def test_empty_training_data_rejected(corpus):
    model, _ = tiny("Wo-LSTM", corpus)
    with pytest.raises(tagger.TrainingError):
        tagger.train(model, [])


def _train_small(method, corpus, seed=1):
    sents = corpus.sentences(60, seed=5)
    cfg = TaggerConfig.for_method(method, word_hidden=8, char_hidden=4, char_dim=4,
                                  max_epochs=4, seed=seed)
    model = tagger.build_for_data(cfg, corpus.table(dim=8), sents)
    return model, tagger.train(model, sents), sents


def test_training_deterministic(corpus):
    m1, log1, _ = _train_small("WoCh-LSTM-CRF", corpus)
    m2, log2, _ = _train_small("WoCh-LSTM-CRF", corpus)
    assert log1 == log2
    for k, v in m1.state().items():
        assert v.tobytes() == m2.state()[k].tobytes()


def test_early_stopping_bookkeeping(corpus):
    _, log, _ = _train_small("Wo-BiLSTM", corpus)
    assert 1 <= log.best_epoch <= log.stopped_epoch <= 4
    assert log.stopped_epoch - log.best_epoch <= 2 + 1
    assert log.val_f1[log.best_epoch - 1] == max(log.val_f1)
    assert len(log.train_loss) == log.stopped_epoch


def test_best_checkpoint_restored(corpus):
    model, log, sents = _train_small("Wo-LSTM-CRF", corpus)
    _, val_idx = tagger.split_train_val(len(sents), 0.1, tagger._seeds(1)[2])
    val = [sents[i] for i in val_idx]
    assert tagger.evaluate(model, val)["f1"] == pytest.approx(log.best_val_f1)


def test_predict_full_length_and_valid(corpus):
    sents = corpus.sentences(5, seed=9, min_len=40, max_len=45)
    for method in ("WoCh-BiLSTM-CRF", "Wo-LSTM"):
        model, _ = tiny(method, corpus)
        preds = tagger.predict(model, sents)
        assert [len(p) for p in preds] == [len(s.tokens) for s in sents]
        assert all(count_violations(p) == 0 for p in preds)
        assert preds == tagger.predict(model, sents)


def test_crf_zero_violations_on_random_models(corpus):
    sents = corpus.sentences(30, seed=4)
    for seed in range(3):
        model, _ = tiny("Wo-BiLSTM-CRF", corpus, seed=seed)
        # push the head toward I so the constraint matters
        model.head_b.value[2] += 3.0
        assert sum(count_violations(p) for p in tagger.predict(model, sents)) == 0


def test_softmax_raw_violations_are_repaired(corpus):
    sents = corpus.sentences(30, seed=4)
    model, _ = tiny("Wo-LSTM", corpus)
    model.head_b.value[2] += 5.0
    raw = tagger.predict(model, sents, raw=True)
    assert sum(count_violations(p) for p in raw) > 0
    assert sum(count_violations(p) for p in tagger.predict(model, sents)) == 0
    scores = tagger.evaluate(model, sents)
    assert scores["violations"] > 0 and 0.0 <= scores["f1"] <= 1.0


def test_save_load_roundtrip(tmp_path, corpus):
    model, sents = tiny("WoCh-BiLSTM-CRF", corpus)
    model.save(tmp_path / "m")
    back = TaggerModel.load(tmp_path / "m")
    assert back.config == model.config
    for k, v in model.state().items():
        assert back.state()[k].tobytes() == v.tobytes()
    assert tagger.predict(back, sents) == tagger.predict(model, sents)


def test_config_from_dict_rejects_unknown():
    with pytest.raises(ConfigError):
        TaggerConfig.from_dict({"bogus": 1})
