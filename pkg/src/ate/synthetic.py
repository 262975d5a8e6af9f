"""Generated corpora with a known tagging rule, for learnability checks.

Aspects are drawn from a fixed marker lexicon of 30 words: 20 single-word
terms and 5 two-word terms (10 words) that only ever occur together.  Every
other token comes from a filler vocabulary.  Every marker occurrence is an
aspect, so a tagger that learns the lexicon reaches F1 = 1.
"""

import string

import numpy as np

from .corpus import AspectSpan, Sentence, Token, encode_iob
from .embeddings import EmbeddingTable


def _pseudo_words(rng, count, taken):
    out = []
    while len(out) < count:
        n = int(rng.integers(3, 9))
        w = "".join(rng.choice(list(string.ascii_lowercase), size=n))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


class SyntheticCorpus:
    def __init__(self, seed=0, n_filler=200, n_single=20, n_pairs=5):
        rng = np.random.default_rng(seed)
        taken = set()
        self.single = _pseudo_words(rng, n_single, taken)
        paired = _pseudo_words(rng, 2 * n_pairs, taken)
        self.pairs = [(paired[2 * i], paired[2 * i + 1]) for i in range(n_pairs)]
        self.filler = _pseudo_words(rng, n_filler, taken)

    @property
    def lexicon(self):
        return self.single + [w for p in self.pairs for w in p]

    def sentences(self, count, seed, min_len=4, max_len=14, prefix="s"):
        rng = np.random.default_rng(seed)
        out = []
        for k in range(count):
            words = list(rng.choice(self.filler, size=int(rng.integers(min_len, max_len + 1))))
            n_aspects = int(rng.choice([0, 1, 1, 2, 2, 3]))
            spans = []
            for _ in range(n_aspects):
                term = ([self.single[rng.integers(len(self.single))]] if rng.random() < 0.6
                        else list(self.pairs[rng.integers(len(self.pairs))]))
                # never insert between the two words of an existing term
                slots = [p for p in range(len(words) + 1)
                         if not any(a < p <= b for a, b in spans)]
                pos = int(slots[rng.integers(len(slots))])
                words[pos:pos] = term
                spans = [AspectSpan(a + len(term), b + len(term)) if a >= pos else AspectSpan(a, b)
                         for a, b in spans]
                spans.append(AspectSpan(pos, pos + len(term) - 1))
            spans.sort()
            tokens, pos = [], 0
            for w in words:
                tokens.append(Token(str(w), pos, pos + len(w)))
                pos += len(w) + 1
            out.append(Sentence(f"{prefix}{k}", tuple(tokens), encode_iob(len(tokens), spans)))
        return out

    def table(self, dim=50, seed=0, oov_fraction=0.1, scale=0.5):
        """Random vectors for the lexicon and most fillers; some fillers stay OOV.

        ``scale`` is the per-entry std, roughly that of GloVe vectors.  Word
        vectors are frozen, so much smaller values starve the word-only models.
        """
        rng = np.random.default_rng(seed)
        n_oov = int(oov_fraction * len(self.filler))
        words = self.lexicon + self.filler[n_oov:]
        return EmbeddingTable("synthetic", words, rng.normal(0, scale, (len(words), dim)))
