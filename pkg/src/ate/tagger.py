"""Word (+ character) LSTM/BiLSTM taggers with a softmax or CRF head.

Eight configurations are named by which parts they use::

    Wo-LSTM, Wo-LSTM-CRF, WoCh-LSTM, WoCh-LSTM-CRF,
    Wo-BiLSTM, Wo-BiLSTM-CRF, WoCh-BiLSTM, WoCh-BiLSTM-CRF

"Wo" is word embeddings only, "WoCh" adds a character BiLSTM feature per
token, and "-CRF" swaps the per-token softmax for a linear-chain CRF.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import crf
from .corpus import TAG_INDEX, TAGS, count_violations, decode_iob, encode_iob
from .embeddings import Vocabulary, build_matrix
from .evaluation import exact_f1
from .neural import Adam, Param, Tape, const, load_params, save_params
from .recurrent import CharEncoderParams, Charset, LstmParams, bilstm, encode_chars, glorot, pad_words, run_lstm

logger = logging.getLogger(__name__)

METHODS = {
    "Wo-LSTM": (False, False, False),
    "Wo-LSTM-CRF": (False, False, True),
    "WoCh-LSTM": (True, False, False),
    "WoCh-LSTM-CRF": (True, False, True),
    "Wo-BiLSTM": (False, True, False),
    "Wo-BiLSTM-CRF": (False, True, True),
    "WoCh-BiLSTM": (True, True, False),
    "WoCh-BiLSTM-CRF": (True, True, True),
}
# column order of the published result tables
TABLE_ORDER = ("Wo-LSTM", "WoCh-LSTM", "Wo-LSTM-CRF", "WoCh-LSTM-CRF",
               "Wo-BiLSTM", "WoCh-BiLSTM", "Wo-BiLSTM-CRF", "WoCh-BiLSTM-CRF")


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def method_name(use_char, bidirectional, use_crf):
    for name, flags in METHODS.items():
        if flags == (bool(use_char), bool(bidirectional), bool(use_crf)):
            return name
    raise ConfigError("unknown configuration")


def parse_method(name):
    try:
        return METHODS[name]
    except KeyError:
        raise ConfigError(f"unknown method {name!r}; expected one of: {', '.join(METHODS)}") from None


@dataclass
class TaggerConfig:
    use_char: bool = True
    bidirectional: bool = True
    use_crf: bool = True
    word_hidden: int = 100
    char_hidden: int = 25
    char_dim: int = 25
    dropout: float = 0.5
    batch_size: int = 10
    max_len: int = 30
    max_epochs: int = 25
    patience: int = 2
    lr: float = 1e-3
    val_fraction: float = 0.1
    finetune_embeddings: bool = False
    seed: int = 1
    embedding_name: str = ""

    @classmethod
    def for_method(cls, name, **overrides):
        use_char, bi, use_crf = parse_method(name)
        return cls(use_char=use_char, bidirectional=bi, use_crf=use_crf, **overrides)

    @property
    def method(self):
        return method_name(self.use_char, self.bidirectional, self.use_crf)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_f1: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    @property
    def best_val_f1(self):
        return self.val_f1[self.best_epoch - 1] if self.best_epoch else 0.0


def _seeds(seed):
    """Independent streams for matrix init, weights, data order and dropout."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


class TaggerModel:
    def __init__(self, config, vocab, charset, word_matrix, rng):
        self.config = config
        self.vocab = vocab
        self.charset = charset
        self.word_embedding = Param("word.embedding", np.array(word_matrix, dtype=np.float64),
                                    trainable=config.finetune_embeddings)
        in_dim = self.word_embedding.shape[1]
        self.char = None
        if config.use_char:
            self.char = CharEncoderParams.init(len(charset), rng, config.char_dim,
                                               config.char_hidden)
            in_dim += self.char.output_dim
        self.input_dim = in_dim
        self.fwd = LstmParams.init(in_dim, config.word_hidden, rng, "word.fwd")
        self.bwd = (LstmParams.init(in_dim, config.word_hidden, rng, "word.bwd")
                    if config.bidirectional else None)
        self.head_dim = config.word_hidden * (2 if config.bidirectional else 1)
        self.head_W = Param("head.W", glorot(rng, crf.K, self.head_dim))
        self.head_b = Param("head.b", np.zeros(crf.K))
        if config.use_crf:
            self.transitions = Param("crf.transitions", np.zeros((crf.K, crf.K)))
            self.start = Param("crf.start", np.zeros(crf.K))
            self.end = Param("crf.end", np.zeros(crf.K))

    def params(self):
        ps = [self.word_embedding]
        if self.char is not None:
            ps += self.char.params()
        ps += self.fwd.params()
        if self.bwd is not None:
            ps += self.bwd.params()
        ps += [self.head_W, self.head_b]
        if self.config.use_crf:
            ps += [self.transitions, self.start, self.end]
        return ps

    # forward ------------------------------------------------------------------

    def _inputs(self, tape, batch):
        lengths = np.array([len(s) for s in batch], dtype=np.int64)
        n = int(lengths.max())
        ids = np.zeros((len(batch), n), dtype=np.int64)
        for r, words in enumerate(batch):
            ids[r, :len(words)] = self.vocab.encode(words)
        x = tape.embed_row(self.word_embedding, ids)
        if self.char is not None:
            uniq = list(dict.fromkeys(w for words in batch for w in words))
            slot = {w: i + 1 for i, w in enumerate(uniq)}
            char_ids, char_lens = pad_words(uniq, self.charset)
            enc = encode_chars(tape, char_ids, char_lens, self.char)
            enc = tape.concat([const(np.zeros((1, self.char.output_dim))), enc], axis=0)
            where = np.zeros((len(batch), n), dtype=np.int64)
            for r, words in enumerate(batch):
                where[r, :len(words)] = [slot[w] for w in words]
            x = tape.concat([x, tape.embed_row(enc, where)], axis=-1)
        return x, lengths

    def emissions(self, tape, batch, train=False, rng=None):
        """Per-token label scores ``(B, n, 3)`` and true lengths for word lists."""
        x, lengths = self._inputs(tape, batch)
        x = tape.dropout(x, self.config.dropout, train, rng)
        if self.bwd is not None:
            h = bilstm(tape, x, self.fwd, self.bwd, lengths)
        else:
            h = run_lstm(tape, x, self.fwd, "fwd", lengths)
        h = tape.dropout(h, self.config.dropout, train, rng)
        return tape.affine(h, self.head_W, self.head_b), lengths

    def loss(self, tape, batch, tags, train=False, rng=None):
        """Mean over sentences of the CRF NLL or the summed token cross-entropy."""
        em, lengths = self.emissions(tape, batch, train, rng)
        n = em.shape[1]
        y = np.zeros((len(batch), n), dtype=np.int64)
        for r, t in enumerate(tags):
            y[r, :len(t)] = [TAG_INDEX[x] if isinstance(x, str) else x for x in t]
        scale = 1.0 / len(batch)
        if not self.config.use_crf:
            mask = (np.arange(n)[None] < lengths[:, None]).astype(np.float64)
            return tape.scale(tape.softmax_cross_entropy(em, y, mask), scale)
        T, s, e = self.transitions, self.start, self.end
        losses, g_em, g_t, g_s, g_e = crf.batch_nll(em.value, lengths, y, T.value, s.value, e.value)

        def back(g):
            g = g * scale
            return [(em, g * g_em), (T, g * g_t), (s, g * g_s), (e, g * g_e)]

        return tape.op(losses.sum() * scale, back)

    def decode(self, batch, raw=False):
        tape = Tape(enabled=False)
        em, lengths = self.emissions(tape, batch)
        if self.config.use_crf:
            paths = crf.batch_viterbi(em.value, lengths, self.transitions.value,
                                      self.start.value, self.end.value, constrained=True)
            return [tuple(TAGS[i] for i in p) for p in paths]
        out = []
        for r, length in enumerate(lengths):
            tags = tuple(TAGS[i] for i in np.argmax(em.value[r, :length], axis=-1))
            out.append(tags if raw else encode_iob(len(tags), decode_iob(tags)))
        return out

    # persistence ---------------------------------------------------------------

    def state(self):
        return {p.name: p.value.copy() for p in self.params()}

    def load_state(self, state):
        for p in self.params():
            if p.name not in state or state[p.name].shape != p.shape:
                raise ValueError(f"checkpoint lacks a compatible {p.name}")
            p.value = np.array(state[p.name], dtype=np.float64)
            p.zero_grad()

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_params(d / "params.bin", self.params())
        meta = {"config": asdict(self.config), "vocab": self.vocab.words,
                "charset": self.charset.to_list()}
        (d / "model.json").write_text(json.dumps(meta, ensure_ascii=False, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        meta = json.loads((d / "model.json").read_text(encoding="utf-8"))
        config = TaggerConfig.from_dict(meta["config"])
        state = load_params(d / "params.bin")
        vocab = Vocabulary(meta["vocab"])
        model = cls(config, vocab, Charset(meta["charset"]), state["word.embedding"],
                    np.random.default_rng(0))
        model.load_state(state)
        return model


def _words(s):
    return s.words if hasattr(s, "words") else list(s)


def build(config, table, vocab, charset, seed=None):
    """Fresh model; the same ``(config, table, vocab, charset, seed)`` gives
    bit-identical parameters."""
    parse_method(config.method)
    seed = config.seed if seed is None else seed
    matrix_rng, init_rng, _, _ = _seeds(seed)
    matrix = build_matrix(table, vocab, int(matrix_rng.integers(2 ** 32)))
    return TaggerModel(config, vocab, charset, matrix, init_rng)


def build_for_data(config, table, train_sentences, extra_sentences=(), seed=None):
    """Vocabulary and charset from the training split, then :func:`build`."""
    train_words = [w for s in train_sentences for w in _words(s)]
    extra_words = [w for s in extra_sentences for w in _words(s)]
    vocab = Vocabulary.build(train_words, extra_words, table)
    charset = Charset.build(train_words)
    return build(config, table, vocab, charset, seed)


def split_train_val(n, fraction, rng):
    order = rng.permutation(n)
    n_val = max(1, int(round(fraction * n))) if n > 1 else 0
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def train(model, sentences, config=None):
    """Mini-batch Adam training with early stopping on validation F1.

    A seeded share of ``sentences`` is held out for validation.  Training
    sentences are truncated to ``max_len`` tokens; validation runs on full
    sentences.  The best-epoch parameters are restored on return.
    """
    config = config or model.config
    log = TrainLog()
    if config.max_epochs <= 0:
        return log
    data = [s for s in sentences if len(s.tokens) > 0]
    if not data:
        raise TrainingError("no non-empty training sentences")
    _, _, data_rng, drop_rng = _seeds(config.seed)
    train_idx, val_idx = split_train_val(len(data), config.val_fraction, data_rng)
    train_set = [data[i] for i in train_idx] or data
    val_set = [data[i] for i in val_idx]
    val_gold = [s.spans for s in val_set]

    opt = Adam(lr=config.lr)
    params = model.params()
    best_state = model.state()
    best_f1 = -1.0
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        order = data_rng.permutation(len(train_set))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[lo:lo + config.batch_size]]
            words = [s.words[:config.max_len] for s in batch]
            tags = [s.gold_tags[:config.max_len] for s in batch]
            tape = Tape()
            loss = model.loss(tape, words, tags, train=True, rng=drop_rng)
            value = loss.value.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {lo // config.batch_size}")
            tape.backward(loss)
            opt.step(params)
            total += value * len(batch)
        log.train_loss.append(total / len(train_set))

        if val_set:
            pred = predict(model, val_set)
            f1 = exact_f1(val_gold, [decode_iob(p) for p in pred])[2]
        else:
            f1 = 0.0
        log.val_f1.append(f1)
        log.stopped_epoch = epoch
        logger.info("epoch %d: loss=%.4f val_f1=%.4f", epoch, log.train_loss[-1], f1)
        if f1 > best_f1:
            best_f1 = f1
            best_state = model.state()
            log.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    model.load_state(best_state)
    return log


def predict(model, sentences, raw=False, batch_size=64):
    """Tag sequences at full sentence length.

    CRF heads decode with IOB-constrained Viterbi.  Softmax heads take the
    per-token argmax and, unless ``raw``, repair orphan ``I`` tags into
    span starts.
    """
    words = [_words(s) for s in sentences]
    out = [()] * len(words)
    live = [i for i, w in enumerate(words) if w]
    for lo in range(0, len(live), batch_size):
        idx = live[lo:lo + batch_size]
        for i, tags in zip(idx, model.decode([words[i] for i in idx], raw=raw)):
            out[i] = tags
    return out


def evaluate(model, sentences):
    """Exact-match scores; softmax heads also report the strict (unrepaired) F1."""
    gold = [s.spans for s in sentences]
    raw = predict(model, sentences, raw=True)
    repaired = [decode_iob(t) for t in raw]
    p, r, f1, conf = exact_f1(gold, repaired)
    strict = exact_f1(gold, [decode_iob(t, repair=False) for t in raw])[2]
    return {"precision": p, "recall": r, "f1": f1, "f1_strict": strict,
            "violations": sum(count_violations(t) for t in raw),
            "tp": conf.tp, "fp": conf.fp, "fn": conf.fn}
