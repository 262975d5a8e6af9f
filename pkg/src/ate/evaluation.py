"""Exact-match span F1, the gain metric and per-cell aggregation."""

import csv
import math
import re
from collections import defaultdict
from dataclasses import dataclass


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class SpanConfusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def exact_f1(gold, pred):
    """Micro-averaged P/R/F1 where only identical token spans count.

    ``gold`` and ``pred`` are per-sentence collections of ``(first, last)``
    spans.  Returns ``(precision, recall, f1, confusion)``.
    """
    if len(gold) != len(pred):
        raise EvaluationError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    tp = fp = fn = 0
    for g, p in zip(gold, pred):
        g, p = set(map(tuple, g)), set(map(tuple, p))
        hit = len(g & p)
        tp += hit
        fp += len(p) - hit
        fn += len(g) - hit
    conf = SpanConfusion(tp, fp, fn)
    return conf.precision, conf.recall, conf.f1, conf


def gain(m1, m2):
    """Share of the headroom above ``m1`` won by ``m2``, both F1 in percent.

    >>> round(gain(85, 86), 1)
    6.7
    """
    if not 0 <= m1 < 100:
        raise EvaluationError(f"gain undefined for baseline F1 {m1}")
    return 100.0 * (m2 - m1) / (100.0 - m1)


@dataclass(frozen=True)
class CellResult:
    embedding: str
    method: str
    f1_runs: tuple

    @property
    def mean(self):
        return sum(self.f1_runs) / len(self.f1_runs)

    @property
    def std(self):
        n = len(self.f1_runs)
        if n < 2:
            return 0.0
        m = self.mean
        return math.sqrt(sum((x - m) ** 2 for x in self.f1_runs) / (n - 1))

    def format(self, digits=2):
        return f"{self.mean:.{digits}f}±{self.std:.{digits}f}"


def aggregate(records, key="test_f1"):
    """Group run records by ``(embedding, method)`` into CellResults.

    Record F1 values are fractions; cells hold percentages like the
    published tables.  Runs are ordered by seed so results do not depend on
    record order.
    """
    groups = defaultdict(list)
    for rec in records:
        groups[(rec["embedding"], rec["method"])].append(rec)
    cells = []
    for (emb, method), recs in sorted(groups.items()):
        if not recs:
            raise EvaluationError(f"no runs for {emb}/{method}")
        recs = sorted(recs, key=lambda r: r.get("seed", 0))
        cells.append(CellResult(emb, method, tuple(100.0 * r[key] for r in recs)))
    return cells


# result matrix CSV --------------------------------------------------------------

_CELL_RE = re.compile(r"^\s*(-?[\d.]+)\s*(?:(?:±|\+/-)\s*([\d.]+))?\s*$")


def write_matrix_csv(cells, fh, methods=None, digits=2):
    """Rows are embeddings, columns methods, cells ``mean±std``."""
    embeddings = list(dict.fromkeys(c.embedding for c in cells))
    if methods is None:
        methods = list(dict.fromkeys(c.method for c in cells))
    by_key = {(c.embedding, c.method): c for c in cells}
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["embedding"] + list(methods))
    for emb in embeddings:
        row = [emb]
        for m in methods:
            cell = by_key.get((emb, m))
            row.append(cell.format(digits) if cell else "")
        writer.writerow(row)


def read_matrix_csv(fh):
    """Parse a ResultMatrix CSV into ``(embeddings, methods, means, stds)``.

    ``means`` and ``stds`` are row-major nested lists; missing cells raise.
    """
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise EvaluationError("empty result matrix") from None
    methods = [h.strip() for h in header[1:]]
    embeddings, means, stds = [], [], []
    for row in reader:
        if not row or not any(c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise EvaluationError(f"row {row[0]!r} has {len(row)} fields, expected {len(header)}")
        embeddings.append(row[0].strip())
        mrow, srow = [], []
        for cell, m in zip(row[1:], methods):
            match = _CELL_RE.match(cell)
            if not match:
                raise EvaluationError(f"cannot parse cell {cell!r} ({row[0]}, {m})")
            mrow.append(float(match.group(1)))
            srow.append(float(match.group(2)) if match.group(2) else 0.0)
        means.append(mrow)
        stds.append(srow)
    if not embeddings:
        raise EvaluationError("result matrix has no rows")
    return embeddings, methods, means, stds
