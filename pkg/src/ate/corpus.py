"""SemEval-2014 ABSA ingestion, offset-preserving tokenization and IOB coding.

Tags are the strings ``"O"``, ``"B"`` and ``"I"``; the single chunk type is
``aspect``.  On disk (line-delimited JSON) they are written in the long form
``O`` / ``B-aspect`` / ``I-aspect``.
"""

import json
import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import NamedTuple

logger = logging.getLogger(__name__)

TAGS = ("O", "B", "I")
TAG_INDEX = {t: i for i, t in enumerate(TAGS)}
LONG_TAGS = {"O": "O", "B": "B-aspect", "I": "I-aspect"}
SHORT_TAGS = {v: k for k, v in LONG_TAGS.items()}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class CorpusError(ValueError):
    pass


class Token(NamedTuple):
    surface: str
    start: int
    end: int


class AspectSpan(NamedTuple):
    """Inclusive token range of one aspect term."""

    first: int
    last: int


class CharSpan(NamedTuple):
    term: str
    start: int
    end: int


@dataclass(frozen=True)
class RawSentence:
    id: str
    text: str
    aspect_spans: tuple = ()


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple
    gold_tags: tuple

    def __post_init__(self):
        if len(self.tokens) != len(self.gold_tags):
            raise CorpusError(
                f"sentence {self.id}: {len(self.tokens)} tokens but {len(self.gold_tags)} tags")

    @property
    def words(self):
        return [t.surface for t in self.tokens]

    @property
    def spans(self):
        return decode_iob(self.gold_tags)


@dataclass(frozen=True)
class DatasetProfile:
    n_sentences: int
    n_aspects: int
    n_unique_aspects: int
    multi_aspect_fraction: float

    def format(self):
        return (f"sentences={self.n_sentences} aspects={self.n_aspects} "
                f"unique={self.n_unique_aspects} "
                f"multi={100 * self.multi_aspect_fraction:.1f}%")


def _normalize_ws(s):
    return " ".join(s.split())


def parse_semeval_xml(data):
    """Parse a SemEval-2014 aspect term XML document.

    ``data`` is the raw byte content (a ``str`` is accepted too).  Spans whose
    character slice does not match the annotated term are dropped with a
    warning; the sentence itself is kept.
    """
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise CorpusError(f"malformed XML at line {line}, column {col}: {exc}") from exc

    sentences = []
    for node in root.iter("sentence"):
        sid = node.get("id", str(len(sentences)))
        text_node = node.find("text")
        text = text_node.text if text_node is not None and text_node.text else ""
        spans = []
        terms = node.find("aspectTerms")
        if terms is not None:
            for term in terms.findall("aspectTerm"):
                span = _read_term(sid, text, term)
                if span is not None:
                    spans.append(span)
        sentences.append(RawSentence(sid, text, tuple(spans)))
    return sentences


def _read_term(sid, text, term):
    name = term.get("term", "")
    try:
        start, end = int(term.get("from")), int(term.get("to"))
    except (TypeError, ValueError):
        logger.warning("sentence %s: aspect %r has no usable offsets; dropped", sid, name)
        return None
    if not 0 <= start < end <= len(text):
        logger.warning("sentence %s: aspect %r offsets %d:%d out of range; dropped",
                       sid, name, start, end)
        return None
    if _normalize_ws(text[start:end]) != _normalize_ws(name):
        logger.warning("sentence %s: text[%d:%d]=%r does not match term %r; dropped",
                       sid, start, end, text[start:end], name)
        return None
    return CharSpan(name, start, end)


def tokenize(text):
    """Split on whitespace and detach punctuation, keeping character offsets."""
    return [Token(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def align_spans(raw, tokens):
    """Map character-offset spans onto inclusive token ranges.

    A token belongs to a span iff its character range overlaps the span's
    half-open ``[start, end)`` range.
    """
    out = []
    for span in raw.aspect_spans:
        hit = [i for i, t in enumerate(tokens) if t.start < span.end and t.end > span.start]
        if not hit:
            logger.warning("sentence %s: aspect %r covers no token; dropped", raw.id, span.term)
            continue
        out.append(AspectSpan(hit[0], hit[-1]))
    return out


def encode_iob(n_tokens, spans):
    tags = ["O"] * n_tokens
    for first, last in sorted(spans):
        if not 0 <= first <= last < n_tokens:
            raise CorpusError(f"span ({first}, {last}) outside [0, {n_tokens})")
        if any(t != "O" for t in tags[first:last + 1]):
            raise CorpusError(f"span ({first}, {last}) overlaps another span")
        tags[first] = "B"
        for i in range(first + 1, last + 1):
            tags[i] = "I"
    return tuple(tags)


def decode_iob(tags, repair=True):
    """Read maximal ``B I*`` runs as spans.

    With ``repair`` (the default) an ``I`` at position 0 or after ``O`` opens a
    new span, as if it were ``B``.  Without it such orphan ``I`` tags are
    ignored, which gives the strict reading of an unconstrained tagger.
    """
    spans = []
    start = None
    for i, tag in enumerate(tags):
        if tag == "B" or (tag == "I" and start is None and repair):
            if start is not None:
                spans.append(AspectSpan(start, i - 1))
            start = i
        elif tag == "I":
            continue
        else:
            if start is not None:
                spans.append(AspectSpan(start, i - 1))
            start = None
    if start is not None:
        spans.append(AspectSpan(start, len(tags) - 1))
    return spans


def count_violations(tags):
    """Number of ``I`` tags at position 0 or directly after ``O``."""
    prev = "O"
    n = 0
    for tag in tags:
        if tag == "I" and prev == "O":
            n += 1
        prev = tag
    return n


def repair_iob(tags):
    return encode_iob(len(tags), decode_iob(tags))


def _drop_overlaps(sid, spans):
    kept = []
    for span in sorted(set(spans)):
        if kept and span.first <= kept[-1].last:
            logger.warning("sentence %s: span %s overlaps %s; dropped", sid, span, kept[-1])
            continue
        kept.append(span)
    return kept


def build_sentence(raw):
    tokens = tokenize(raw.text)
    spans = _drop_overlaps(raw.id, align_spans(raw, tokens))
    return Sentence(raw.id, tuple(tokens), encode_iob(len(tokens), spans))


def load_semeval(path):
    with open(path, "rb") as fh:
        return [build_sentence(r) for r in parse_semeval_xml(fh.read())]


def profile(dataset):
    if not dataset:
        raise CorpusError("cannot profile an empty dataset")
    n_aspects = 0
    n_multi = 0
    unique = set()
    for sent in dataset:
        for span in decode_iob(sent.gold_tags):
            n_aspects += 1
            n_multi += span.last > span.first
            words = [t.surface for t in sent.tokens[span.first:span.last + 1]]
            unique.add(" ".join(words).casefold())
    frac = n_multi / n_aspects if n_aspects else 0.0
    return DatasetProfile(len(dataset), n_aspects, len(unique), frac)


def to_record(sent):
    return {"id": sent.id,
            "tokens": [t.surface for t in sent.tokens],
            "tags": [LONG_TAGS[t] for t in sent.gold_tags]}


def from_record(rec):
    # Offsets are not part of the cache format; rebuild them for a
    # single-space join so the Sentence invariants still hold.
    tokens = []
    pos = 0
    for w in rec["tokens"]:
        tokens.append(Token(w, pos, pos + len(w)))
        pos += len(w) + 1
    try:
        tags = tuple(SHORT_TAGS[t] for t in rec["tags"])
    except KeyError as exc:
        raise CorpusError(f"sentence {rec.get('id')}: unknown tag {exc.args[0]!r}") from None
    return Sentence(str(rec["id"]), tuple(tokens), tags)


def write_jsonl(sentences, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for sent in sentences:
            fh.write(json.dumps(to_record(sent), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [from_record(json.loads(line)) for line in fh if line.strip()]


def token_types(sentences):
    """Case-folded word types of a dataset."""
    return {t.surface.casefold() for s in sentences for t in s.tokens}
