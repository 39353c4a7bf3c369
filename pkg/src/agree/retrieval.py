"""Retriever tools and the chunk -> keyword filter -> re-rank post-processing pipeline."""

from __future__ import annotations

import enum
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

logger = logging.getLogger(__name__)


class ToolKind(str, enum.Enum):
    BASIC = "basic"
    ADVANCED = "advanced"

    @property
    def tool_name(self) -> str:
        return f"search_tool_{self.value}"

    @classmethod
    def from_tool_name(cls, name: str) -> "ToolKind":
        key = name.strip().lower()
        for kind in cls:
            if key in (kind.value, kind.tool_name, f"{kind.value}_search_tool"):
                return kind
        raise ValueError(f"unknown tool {name!r}")


@dataclass(frozen=True)
class Document:
    source_id: str
    title: str
    text: str
    tool: ToolKind = ToolKind.BASIC


@dataclass(frozen=True)
class Chunk:
    doc: Document
    sentence_start: int
    sentences: tuple[str, ...]
    text: str
    score: float = 0.0


DEFAULT_STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been before being below
    between both but by can could did do does doing down during each few for from further had has have
    having he her here hers herself him himself his how i if in into is it its itself just me more most
    my myself no nor not now of off on once only or other our ours ourselves out over own same she should
    so some such than that the their theirs them themselves then there these they this those through to
    too under until up very was we were what when where which while who whom why will with would you
    your yours yourself yourselves s t
    """.split()
)


@dataclass
class RetrieverConfig:
    top_k_chunks: int = 8
    max_documents_per_call: int = 5
    timeout: float = 30.0
    stopwords: frozenset[str] = field(default_factory=lambda: DEFAULT_STOPWORDS)
    accumulate_evidence: bool = True

    def __post_init__(self) -> None:
        if self.top_k_chunks < 1:
            raise ValueError("top_k_chunks must be >= 1")
        if self.max_documents_per_call < 1:
            raise ValueError("max_documents_per_call must be >= 1")


class RetrievalError(RuntimeError):
    """A retriever call failed after its retries."""


class RetrieverClient(Protocol):
    def search(self, query: str, limit: int) -> list[Document]: ...


class RelevanceScorer(Protocol):
    def score(self, query: str, passages: Sequence[str]) -> list[float]: ...


def search(tool: ToolKind, query: str, client: RetrieverClient, cfg: RetrieverConfig | None = None) -> list[Document]:
    """Run one retriever call and tag the returned documents with ``tool``."""
    cfg = cfg or RetrieverConfig()
    query = query.strip()
    if not query:
        raise ValueError("search query must be non-empty")
    try:
        docs = client.search(query, cfg.max_documents_per_call)
    except RetrievalError:
        raise
    except Exception as exc:  # transport errors from any client
        raise RetrievalError(f"{tool.tool_name} failed: {exc}") from exc
    return [replace(d, tool=tool) for d in docs[: cfg.max_documents_per_call]]


# -- sentence segmentation ---------------------------------------------------

ABBREVIATIONS = frozenset(
    """
    mr mrs ms dr prof sr jr st mt ft vs etc e.g i.e cf al approx est ca no nos vol vols fig figs op ed eds
    jan feb mar apr jun jul aug sep sept oct nov dec mon tue wed thu fri sat sun
    u.s u.k u.n e.u inc ltd co corp bros gen col lt sgt capt cmdr adm gov sen rep rev hon pres
    dept univ assn ave blvd rd
    """.split()
)

_TERMINAL = re.compile(r"[.?!]+[\"'”’)\]]*\s+")
_OPENERS = "\"'“‘([«"


def _is_boundary(text: str, m: re.Match[str]) -> bool:
    nxt = m.end()
    if nxt >= len(text):
        return False
    ch = text[nxt]
    if not (ch.isupper() or ch.isdigit() or ch in _OPENERS):
        return False
    punct = m.group().rstrip()
    if punct.rstrip("\"'”’)]")[-1] != ".":
        return True
    start = m.start()
    ws = max(text.rfind(" ", 0, start), text.rfind("\n", 0, start), text.rfind("\t", 0, start))
    token = text[ws + 1 : start].lstrip(_OPENERS).lower()
    if token in ABBREVIATIONS:
        return False
    if len(token) == 1 and token.isalpha():
        return False  # initials such as "J. League"
    if token.isdigit() and len(token) <= 2:
        return False  # ordinals and enumerators such as "1. FC"
    return True


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of sentences; the gaps between spans are pure whitespace."""
    spans = []
    start = len(text) - len(text.lstrip())
    for m in _TERMINAL.finditer(text):
        if m.start() < start or not _is_boundary(text, m):
            continue
        end = m.start() + len(m.group().rstrip())
        if end > start:
            spans.append((start, end))
        start = m.end()
    end = len(text.rstrip())
    if end > start:
        spans.append((start, end))
    return spans


def segment_sentences(text: str) -> list[str]:
    return [text[a:b] for a, b in sentence_spans(text)]


# -- chunking, filtering, re-ranking ------------------------------------------

CHUNK_SENTENCES = 3


def chunk_document(doc: Document, size: int = CHUNK_SENTENCES) -> list[Chunk]:
    spans = sentence_spans(doc.text)
    chunks = []
    for i in range(0, len(spans), size):
        group = spans[i : i + size]
        sentences = tuple(doc.text[a:b] for a, b in group)
        text = doc.text[group[0][0] : group[-1][1]]
        chunks.append(Chunk(doc=doc, sentence_start=i, sentences=sentences, text=text))
    return chunks


_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def keywords(text: str, stopwords: frozenset[str] = DEFAULT_STOPWORDS) -> set[str]:
    return {t for t in tokenize(text) if t not in stopwords}


def filter_chunks(
    chunks: Sequence[Chunk], query: str, cfg: RetrieverConfig | None = None, notes: list[str] | None = None
) -> list[Chunk]:
    """Keep chunks sharing at least one non-stopword token with ``query``."""
    cfg = cfg or RetrieverConfig()
    wanted = keywords(query, cfg.stopwords)
    if not wanted:
        if notes is not None:
            notes.append("keyword filter disabled: query has no keywords")
        return list(chunks)
    return [c for c in chunks if not wanted.isdisjoint(tokenize(c.text))]


class LexicalScorer:
    """Sum over shared query keywords of ``log(1 + tf)`` in the passage.

    Each passage is scored on its own, so scores never depend on the rest of
    the batch.
    """

    def __init__(self, stopwords: frozenset[str] = DEFAULT_STOPWORDS):
        self.stopwords = stopwords

    def score(self, query: str, passages: Sequence[str]) -> list[float]:
        wanted = sorted(keywords(query, self.stopwords))  # fixed order keeps float sums reproducible
        scores = []
        for p in passages:
            tf = Counter(tokenize(p))
            scores.append(sum(math.log1p(tf[w]) for w in wanted if tf[w]))
        return scores


def rerank(
    chunks: Sequence[Chunk],
    query: str,
    scorer: RelevanceScorer,
    cfg: RetrieverConfig | None = None,
    notes: list[str] | None = None,
) -> list[Chunk]:
    cfg = cfg or RetrieverConfig()
    if not chunks:
        return []
    try:
        scores = list(scorer.score(query, [c.text for c in chunks]))
        if len(scores) != len(chunks):
            raise ValueError(f"scorer returned {len(scores)} scores for {len(chunks)} chunks")
    except Exception as exc:
        logger.warning("scorer failed, keeping retrieval order: %s", exc)
        if notes is not None:
            notes.append(f"scorer failed, original order kept: {exc}")
        return [replace(c, score=0.0) for c in chunks[: cfg.top_k_chunks]]
    order = sorted(range(len(chunks)), key=lambda i: -scores[i])  # sorted() is stable
    return [replace(chunks[i], score=float(scores[i])) for i in order[: cfg.top_k_chunks]]


def process(
    documents: Sequence[Document],
    query: str,
    scorer: RelevanceScorer,
    cfg: RetrieverConfig | None = None,
    notes: list[str] | None = None,
) -> list[Chunk]:
    cfg = cfg or RetrieverConfig()
    chunks = [c for d in documents for c in chunk_document(d)]
    kept = filter_chunks(chunks, query, cfg, notes)
    return rerank(kept, query, scorer, cfg, notes)
