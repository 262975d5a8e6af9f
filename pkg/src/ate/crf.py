"""Linear-chain CRF over the three IOB labels.

A path ``y`` through a lattice scores::

    start[y_0] + sum_i emissions[i, y_i] + sum_i T[y_{i-1}, y_i] + end[y_{n-1}]

and has probability ``exp(score - log_partition)``.  All recursions run in
the log domain.  The batched functions take emissions of shape ``(B, n, K)``
with true lengths ``(B,)``; positions at or past a row's length are ignored.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .corpus import TAG_INDEX, TAGS

K = 3
O, B, I = TAG_INDEX["O"], TAG_INDEX["B"], TAG_INDEX["I"]


@dataclass
class Lattice:
    emissions: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        self.emissions = np.asarray(self.emissions, dtype=np.float64)
        n_labels = self.transitions.shape[0]
        if self.emissions.ndim != 2 or self.emissions.shape[0] < 1:
            raise ValueError(f"emissions must be (n >= 1, K), got {self.emissions.shape}")
        if self.emissions.shape[1] != n_labels or self.transitions.shape != (n_labels, n_labels):
            raise ValueError("emission and transition label counts differ")

    @property
    def n(self):
        return self.emissions.shape[0]

    @classmethod
    def zeros(cls, n, k=K):
        return cls(np.zeros((n, k)), np.zeros((k, k)), np.zeros(k), np.zeros(k))


def iob_constraints(k=K):
    """Additive masks forbidding ``O -> I`` and ``start -> I``."""
    trans = np.zeros((k, k))
    start = np.zeros(k)
    trans[O, I] = -np.inf
    start[I] = -np.inf
    return trans, start


def _as_indices(y):
    return np.array([TAG_INDEX[t] if isinstance(t, str) else int(t) for t in y], dtype=np.int64)


def sequence_score(lattice, y):
    y = _as_indices(y)
    if len(y) != lattice.n:
        raise ValueError(f"tag sequence length {len(y)} != lattice length {lattice.n}")
    em = lattice.emissions
    s = lattice.start[y[0]] + em[np.arange(len(y)), y].sum() + lattice.end[y[-1]]
    s += lattice.transitions[y[:-1], y[1:]].sum()
    return float(s)


def log_partition(lattice):
    alpha = _forward(lattice.emissions[None], np.array([lattice.n]),
                     lattice.transitions, lattice.start)
    return float(logsumexp(alpha[0, -1] + lattice.end))


def nll_loss(lattice, gold):
    """Negative log-likelihood of ``gold`` and its gradients.

    Returns ``(loss, grads)`` where ``grads`` has keys ``emissions``,
    ``transitions``, ``start`` and ``end``.
    """
    y = _as_indices(gold)
    if len(y) != lattice.n:
        raise ValueError(f"gold length {len(y)} != lattice length {lattice.n}")
    losses, g_em, g_t, g_s, g_e = batch_nll(
        lattice.emissions[None], np.array([lattice.n]), y[None],
        lattice.transitions, lattice.start, lattice.end)
    return float(losses[0]), {"emissions": g_em[0], "transitions": g_t,
                              "start": g_s, "end": g_e}


def marginals(lattice):
    """Per-position label posteriors, shape ``(n, K)``."""
    lengths = np.array([lattice.n])
    em = lattice.emissions[None]
    alpha = _forward(em, lengths, lattice.transitions, lattice.start)
    beta = _backward(em, lengths, lattice.transitions, lattice.end)
    log_z = logsumexp(alpha[0, -1] + lattice.end)
    return np.exp(alpha[0] + beta[0] - log_z)


def viterbi(lattice, constrained=True):
    """Highest-scoring tag sequence.

    Ties are broken toward the lowest label index, both for the final label
    and at every backtrack step.  With ``constrained`` the IOB-invalid
    transitions are removed before decoding.
    """
    path = batch_viterbi(lattice.emissions[None], np.array([lattice.n]),
                         lattice.transitions, lattice.start, lattice.end, constrained)[0]
    return tuple(TAGS[i] for i in path)


# batched core ---------------------------------------------------------------


def _forward(em, lengths, trans, start):
    bsz, n, k = em.shape
    alpha = np.empty((bsz, n, k))
    alpha[:, 0] = start + em[:, 0]
    for t in range(1, n):
        new = logsumexp(alpha[:, t - 1, :, None] + trans[None], axis=1) + em[:, t]
        live = (t < lengths)[:, None]
        alpha[:, t] = np.where(live, new, alpha[:, t - 1])
    return alpha


def _backward(em, lengths, trans, end):
    bsz, n, k = em.shape
    beta = np.empty((bsz, n, k))
    beta[:, n - 1] = end
    for t in range(n - 2, -1, -1):
        new = logsumexp(trans[None] + (em[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
        live = (t + 1 < lengths)[:, None]
        beta[:, t] = np.where(live, new, end)
    return beta


def batch_log_partition(em, lengths, trans, start, end):
    alpha = _forward(em, lengths, trans, start)
    # Past its length a row's alpha is frozen, so the final column holds it.
    return logsumexp(alpha[:, -1] + end, axis=1)


def batch_score(em, lengths, tags, trans, start, end):
    bsz, n, _ = em.shape
    mask = np.arange(n)[None] < lengths[:, None]
    rows = np.arange(bsz)
    tags = np.where(mask, tags, 0)
    s = start[tags[:, 0]] + (np.take_along_axis(em, tags[..., None], axis=2)[..., 0] * mask).sum(1)
    pair_mask = mask[:, 1:]
    s += (trans[tags[:, :-1], tags[:, 1:]] * pair_mask).sum(1)
    s += end[tags[rows, lengths - 1]]
    return s


def batch_nll(em, lengths, tags, trans, start, end):
    """Per-row losses and the gradients of their sum.

    Gradient of each loss with respect to the emissions is posterior
    marginals minus the gold one-hot, zero on padding.
    """
    em = np.asarray(em, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    tags = np.asarray(tags, dtype=np.int64)
    bsz, n, k = em.shape
    if np.any(lengths < 1) or np.any(lengths > n):
        raise ValueError("lengths must lie in [1, n]")
    mask = np.arange(n)[None] < lengths[:, None]
    rows = np.arange(bsz)

    alpha = _forward(em, lengths, trans, start)
    beta = _backward(em, lengths, trans, end)
    log_z = logsumexp(alpha[:, -1] + end, axis=1)
    losses = log_z - batch_score(em, lengths, tags, trans, start, end)

    node = np.exp(alpha + beta - log_z[:, None, None]) * mask[..., None]
    safe_tags = np.where(mask, tags, 0)
    gold = np.zeros_like(node)
    np.put_along_axis(gold, safe_tags[..., None], 1.0, axis=2)
    gold *= mask[..., None]
    g_em = node - gold

    # edge posteriors for positions 1..n-1
    edge = np.exp(alpha[:, :-1, :, None] + trans[None, None]
                  + (em[:, 1:] + beta[:, 1:])[:, :, None, :] - log_z[:, None, None, None])
    edge *= mask[:, 1:, None, None]
    g_t = edge.sum(axis=(0, 1))
    pair_mask = mask[:, 1:]
    np.add.at(g_t, (safe_tags[:, :-1][pair_mask], safe_tags[:, 1:][pair_mask]), -1.0)

    g_s = node[:, 0].sum(0)
    np.add.at(g_s, safe_tags[:, 0], -1.0)
    last = lengths - 1
    g_e = node[rows, last].sum(0)
    np.add.at(g_e, safe_tags[rows, last], -1.0)
    return losses, g_em, g_t, g_s, g_e


def batch_viterbi(em, lengths, trans, start, end, constrained=True):
    """Label-index paths, one list per row, cut at each row's length."""
    em = np.asarray(em, dtype=np.float64)
    bsz, n, k = em.shape
    if constrained:
        mt, ms = iob_constraints(k)
        trans = trans + mt
        start = start + ms
    delta = start + em[:, 0]
    back = np.zeros((bsz, n, k), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, :, None] + trans[None]
        best = np.argmax(cand, axis=1)
        new = np.take_along_axis(cand, best[:, None, :], axis=1)[:, 0] + em[:, t]
        live = (t < lengths)[:, None]
        delta = np.where(live, new, delta)
        back[:, t] = best
    final = np.argmax(delta + end, axis=1)
    out = []
    for b in range(bsz):
        length = int(lengths[b])
        y = [int(final[b])]
        for t in range(length - 1, 0, -1):
            y.append(int(back[b, t, y[-1]]))
        out.append(y[::-1])
    return out
