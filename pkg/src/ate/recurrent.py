"""LSTM cell, (bi)directional sequence runners and the character encoder.

The cell follows the classic gate equations::

    i = sigmoid(W_i h + U_i x + b_i)
    f = sigmoid(W_f h + U_f x + b_f)
    c_bar = tanh(W_c h + U_c x + b_c)
    c' = f * c + i * c_bar
    o = sigmoid(W_o h + U_o x + b_o)
    h' = o * tanh(c')

``U_*`` act on the input, ``W_*`` on the previous hidden state.

Sequences are batched as ``(B, n, D)`` arrays, right-padded.  Padding never
influences real positions: the forward direction reads it only after every
real step, and the backward direction reverses each row within its own
length.
"""

from dataclasses import dataclass, fields

import numpy as np

from .neural import Param, Tape, Var, const

GATES = ("i", "f", "c", "o")
CHAR_DIM = 25
CHAR_HIDDEN = 25
PAD_CHAR = 0
UNK_CHAR = 1


def glorot(rng, n_out, n_in):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


@dataclass
class LstmParams:
    U_i: Param
    U_f: Param
    U_c: Param
    U_o: Param
    W_i: Param
    W_f: Param
    W_c: Param
    W_o: Param
    b_i: Param
    b_f: Param
    b_c: Param
    b_o: Param

    def __post_init__(self):
        hidden, n_in = self.U_i.shape
        for g in GATES:
            U, W, b = self.U(g), self.W(g), self.b(g)
            if U.shape != (hidden, n_in) or W.shape != (hidden, hidden) or b.shape != (hidden,):
                raise ValueError(f"inconsistent LSTM shapes for gate {g}")

    @classmethod
    def init(cls, n_in, hidden, rng, prefix="lstm"):
        kw = {}
        for g in GATES:
            kw[f"U_{g}"] = Param(f"{prefix}.U_{g}", glorot(rng, hidden, n_in))
            kw[f"W_{g}"] = Param(f"{prefix}.W_{g}", glorot(rng, hidden, hidden))
            bias = np.ones(hidden) if g == "f" else np.zeros(hidden)
            kw[f"b_{g}"] = Param(f"{prefix}.b_{g}", bias)
        return cls(**kw)

    @classmethod
    def zeros(cls, n_in, hidden, prefix="lstm"):
        kw = {}
        for g in GATES:
            kw[f"U_{g}"] = Param(f"{prefix}.U_{g}", np.zeros((hidden, n_in)))
            kw[f"W_{g}"] = Param(f"{prefix}.W_{g}", np.zeros((hidden, hidden)))
            kw[f"b_{g}"] = Param(f"{prefix}.b_{g}", np.zeros(hidden))
        return cls(**kw)

    def U(self, g):
        return getattr(self, f"U_{g}")

    def W(self, g):
        return getattr(self, f"W_{g}")

    def b(self, g):
        return getattr(self, f"b_{g}")

    @property
    def hidden(self):
        return self.U_i.shape[0]

    @property
    def input_dim(self):
        return self.U_i.shape[1]

    def params(self):
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class LstmState:
    h: Var
    c: Var

    @classmethod
    def zeros(cls, shape):
        return cls(const(np.zeros(shape)), const(np.zeros(shape)))


def _step(tape, proj, prev, p):
    """One cell update from precomputed input projections ``U x + b``."""
    pre = {g: tape.add(proj[g], tape.affine(prev.h, p.W(g))) for g in GATES}
    i = tape.sigmoid(pre["i"])
    f = tape.sigmoid(pre["f"])
    c_bar = tape.tanh(pre["c"])
    c = tape.add(tape.hadamard(f, prev.c), tape.hadamard(i, c_bar))
    o = tape.sigmoid(pre["o"])
    h = tape.hadamard(o, tape.tanh(c))
    return LstmState(h, c)


def lstm_cell(tape, x, prev, p):
    proj = {g: tape.affine(x, p.U(g), p.b(g)) for g in GATES}
    if prev.h.shape != proj["i"].shape or prev.c.shape != prev.h.shape:
        raise ValueError(f"lstm_cell: state {prev.h.shape} does not match hidden {proj['i'].shape}")
    return _step(tape, proj, prev, p)


def reverse_index(lengths, n):
    """Per-row time permutation reversing each row within its length."""
    lengths = np.asarray(lengths)
    t = np.arange(n)[None, :]
    perm = np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)
    rows = np.broadcast_to(np.arange(len(lengths))[:, None], perm.shape)
    return rows, perm


def run_lstm(tape, xs, p, direction="fwd", lengths=None):
    """Run the cell over a sequence and return all hidden states.

    ``xs`` is a :class:`Var` of shape ``(n, D)`` or ``(B, n, D)``.  The
    output has the same leading shape with ``hidden`` as the last axis; for
    ``direction="bwd"`` outputs are realigned so position ``t`` pairs with
    input ``t``.
    """
    if direction not in ("fwd", "bwd"):
        raise ValueError(f"direction must be 'fwd' or 'bwd', got {direction!r}")
    single = xs.value.ndim == 2
    if single:
        xs = tape.gather(xs, np.newaxis)
    bsz, n, _ = xs.shape
    if n == 0:
        raise ValueError("run_lstm: empty sequence")
    if lengths is None:
        lengths = np.full(bsz, n)
    if direction == "bwd":
        idx = reverse_index(lengths, n)
        xs = tape.gather(xs, idx)

    proj_all = {g: tape.affine(xs, p.U(g), p.b(g)) for g in GATES}
    state = LstmState.zeros((bsz, p.hidden))
    hs = []
    for t in range(n):
        proj = {g: tape.gather(proj_all[g], (slice(None), t)) for g in GATES}
        state = _step(tape, proj, state, p)
        hs.append(state.h)
    out = tape.stack(hs, axis=1)
    if direction == "bwd":
        out = tape.gather(out, idx)
    if single:
        out = tape.gather(out, 0)
    return out


def bilstm(tape, xs, p_fwd, p_bwd, lengths=None):
    fwd = run_lstm(tape, xs, p_fwd, "fwd", lengths)
    bwd = run_lstm(tape, xs, p_bwd, "bwd", lengths)
    return tape.concat([fwd, bwd], axis=-1)


# characters -------------------------------------------------------------------


class Charset:
    """Character index with reserved padding (0) and unknown (1) slots."""

    def __init__(self, chars=()):
        self.chars = ["<pad>", "<unk>"]
        self.index = {}
        for ch in chars:
            if ch not in self.index:
                self.index[ch] = len(self.chars)
                self.chars.append(ch)

    @classmethod
    def build(cls, words):
        return cls(sorted({ch for w in words for ch in w}))

    def __len__(self):
        return len(self.chars)

    def encode(self, word):
        return [self.index.get(ch, UNK_CHAR) for ch in word]

    def to_list(self):
        return self.chars[2:]


@dataclass
class CharEncoderParams:
    embedding: Param
    fwd: LstmParams
    bwd: LstmParams

    @classmethod
    def init(cls, n_chars, rng, dim=CHAR_DIM, hidden=CHAR_HIDDEN, prefix="char"):
        emb = rng.uniform(-np.sqrt(3.0 / dim), np.sqrt(3.0 / dim), size=(n_chars, dim))
        emb[PAD_CHAR] = 0.0
        return cls(Param(f"{prefix}.embedding", emb),
                   LstmParams.init(dim, hidden, rng, f"{prefix}.fwd"),
                   LstmParams.init(dim, hidden, rng, f"{prefix}.bwd"))

    @property
    def output_dim(self):
        return self.fwd.hidden + self.bwd.hidden

    def params(self):
        return [self.embedding] + self.fwd.params() + self.bwd.params()


def encode_chars(tape, char_ids, lengths, p):
    """Encode a batch of words given as padded char-index rows.

    Returns ``(W, 2 * hidden)``: the forward state after the last character
    followed by the backward state after reading back to the first.
    """
    char_ids = np.asarray(char_ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    xs = tape.embed_row(p.embedding, char_ids)
    rows = np.arange(len(lengths))
    fwd = run_lstm(tape, xs, p.fwd, "fwd", lengths)
    bwd = run_lstm(tape, xs, p.bwd, "bwd", lengths)
    last_fwd = tape.gather(fwd, (rows, lengths - 1))
    first_bwd = tape.gather(bwd, (slice(None), 0))
    return tape.concat([last_fwd, first_bwd], axis=-1)


def pad_words(words, charset):
    encoded = [charset.encode(w) for w in words]
    lengths = np.array([len(e) for e in encoded], dtype=np.int64)
    ids = np.full((len(words), max(1, lengths.max(initial=0))), PAD_CHAR, dtype=np.int64)
    for r, e in enumerate(encoded):
        ids[r, :len(e)] = e
    return ids, lengths


def encode_word_chars(word, p, charset, tape=None):
    """Character feature vector of one word; an empty word maps to zeros."""
    if not word:
        return np.zeros(p.output_dim)
    tape = tape or Tape(enabled=False)
    ids, lengths = pad_words([word], charset)
    return encode_chars(tape, ids, lengths, p).value[0]
