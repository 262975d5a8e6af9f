"""Pretrained word vectors, task vocabularies and coverage statistics."""

import csv
import gzip
import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1
OOV_RANGE = 0.25


class EmbeddingError(ValueError):
    pass


class EmbeddingTable:
    """Immutable word -> vector map.

    Vectors live in one ``(n_words, dim)`` matrix; ``index`` maps each word
    to its row and ``folded`` maps case-folded forms to the first row seen.
    """

    def __init__(self, name, words, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(words):
            raise EmbeddingError(f"{len(words)} words but matrix of shape {matrix.shape}")
        if matrix.shape[1] < 1:
            raise EmbeddingError("dimension must be positive")
        self.name = name
        self.words = list(words)
        self.matrix = matrix
        self.matrix.flags.writeable = False
        self.index = {}
        self.folded = {}
        for i, w in enumerate(self.words):
            if w in self.index:
                raise EmbeddingError(f"duplicate word {w!r}")
            self.index[w] = i
            self.folded.setdefault(w.casefold(), i)
        self.skipped = 0

    @classmethod
    def from_dict(cls, name, vectors):
        words = list(vectors)
        return cls(name, words, np.array([vectors[w] for w in words], dtype=np.float64))

    @property
    def dim(self):
        return self.matrix.shape[1]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return lookup(self, word) is not None


def _open_text(path):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    return open(path, encoding="utf-8", errors="replace")


def _is_header(parts):
    return len(parts) == 2 and all(p.isdigit() for p in parts)


def load_vectors(path, expected_dim=None, name=None, keep=None):
    """Read a whitespace-separated ``word v1 ... vd`` text file.

    A leading ``count dim`` header line (fastText/word2vec text style) is
    detected and skipped.  Lines of the wrong arity and repeated words are
    skipped and counted in ``table.skipped``.  With ``keep`` (a set of words)
    only entries whose exact or case-folded form is in it are stored, which
    keeps multi-million-word files within memory.
    """
    keep_folded = None if keep is None else {w.casefold() for w in keep}
    words, rows = [], []
    seen = set()
    dim = None
    skipped = 0
    try:
        fh = _open_text(path)
    except OSError as exc:
        raise EmbeddingError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh):
            # Single spaces first: some vocabularies hold non-breaking spaces.
            parts = line.rstrip("\r\n ").split(" ")
            if (dim is not None and len(parts) != dim + 1) or not parts[0]:
                parts = line.split()
            if not parts:
                continue
            if lineno == 0 and _is_header(parts):
                dim = int(parts[1])
                continue
            if dim is None:
                dim = len(parts) - 1
            if len(parts) != dim + 1 or parts[0] in seen:
                skipped += 1
                continue
            if keep_folded is not None and parts[0].casefold() not in keep_folded:
                continue
            try:
                rows.append(np.array(parts[1:], dtype=np.float64))
            except ValueError:
                skipped += 1
                continue
            words.append(parts[0])
            seen.add(parts[0])
    if dim is None or dim < 1:
        raise EmbeddingError(f"{path}: no vectors found")
    if expected_dim is not None and dim != expected_dim:
        raise EmbeddingError(f"{path}: dimension {dim} != expected {expected_dim}")
    if skipped:
        logger.warning("%s: skipped %d malformed or duplicate lines", path, skipped)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    table = EmbeddingTable(name or file_stem(path), words, matrix)
    table.skipped = skipped
    return table


def file_stem(path):
    name = str(path).replace("\\", "/").rsplit("/", 1)[-1]
    for ext in (".gz", ".txt", ".vec"):
        if name.endswith(ext):
            name = name[: -len(ext)]
    return name


def lookup(table, word):
    """Vector for ``word``: exact match first, then case-folded; else None."""
    i = table.index.get(word)
    if i is None:
        i = table.folded.get(word.casefold())
    return None if i is None else table.matrix[i]


@dataclass
class Vocabulary:
    words: list = field(default_factory=lambda: [PAD, UNK])

    def __post_init__(self):
        if self.words[:2] != [PAD, UNK]:
            raise EmbeddingError("vocabulary must start with padding and unknown entries")
        self.index = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def build(cls, train_words, extra_words=(), table=None):
        """Vocabulary over training words in first-seen order.

        ``extra_words`` (e.g. test-split tokens) are admitted only when
        ``table`` has a vector for them, so no label information leaks in.
        """
        words = [PAD, UNK]
        seen = set(words)
        for w in train_words:
            if w not in seen:
                seen.add(w)
                words.append(w)
        if table is not None:
            for w in extra_words:
                if w not in seen and lookup(table, w) is not None:
                    seen.add(w)
                    words.append(w)
        return cls(words)

    def __len__(self):
        return len(self.words)

    def encode(self, words):
        return [self.index.get(w, UNK_INDEX) for w in words]

    def to_json(self):
        return json.dumps(self.words, ensure_ascii=False)

    @classmethod
    def from_json(cls, text):
        return cls(json.loads(text))


def build_matrix(table, vocab, seed):
    """``(len(vocab), dim)`` matrix: zeros for padding, table rows for hits,
    seeded uniform(-0.25, 0.25) for misses."""
    rng = np.random.default_rng(seed)
    out = rng.uniform(-OOV_RANGE, OOV_RANGE, size=(len(vocab), table.dim))
    out[PAD_INDEX] = 0.0
    for i, w in enumerate(vocab.words[2:], start=2):
        v = lookup(table, w)
        if v is not None:
            out[i] = v
    return out


@dataclass
class CoverageReport:
    embedding: str
    missing: dict

    @property
    def average(self):
        return sum(self.missing.values()) / len(self.missing)

    def rows(self):
        for subset, frac in self.missing.items():
            yield (self.embedding, subset, 100.0 * frac)
        yield (self.embedding, "average", 100.0 * self.average)


def coverage(table, datasets):
    """Fraction of each subset's word types that the table cannot look up.

    ``datasets`` maps a subset name to its set of (case-folded) types.
    """
    if not datasets:
        raise EmbeddingError("no datasets given")
    missing = {}
    for name, types in datasets.items():
        if not types:
            raise EmbeddingError(f"subset {name!r} has no word types")
        missing[name] = sum(lookup(table, t) is None for t in types) / len(types)
    return CoverageReport(table.name, missing)


def write_coverage_csv(reports, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["embedding", "subset", "pct_missing"])
    for rep in reports:
        for emb, subset, pct in rep.rows():
            writer.writerow([emb, subset, f"{pct:.4f}"])
