"""Knowledge-graph data model, TSV ingestion and relation cardinality."""

from __future__ import annotations

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, TextIO

logger = logging.getLogger(__name__)

_UNSAFE = ("\t", "\n", "\r")


class TSVFormatError(ValueError):
    """A malformed line in a triples or catalog file."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _check_id(value: str, what: str) -> None:
    if not value:
        raise ValueError(f"empty {what}")
    if any(c in value for c in _UNSAFE):
        raise ValueError(f"{what} {value!r} contains tab or newline")


@dataclass(frozen=True, slots=True)
class Triple:
    head: str
    relation: str
    tail: str

    def __post_init__(self) -> None:
        _check_id(self.head, "head")
        _check_id(self.relation, "relation")
        _check_id(self.tail, "tail")

    def to_tsv(self) -> str:
        return f"{self.head}\t{self.relation}\t{self.tail}"


@dataclass(frozen=True)
class EntityRecord:
    id: str
    label: str
    aliases: tuple[str, ...] = ()
    description: str = ""

    def __post_init__(self) -> None:
        _check_id(self.id, "entity id")
        from .linking import normalize_surface

        ordered = ([self.label] if self.label else []) + [a for a in self.aliases if a]
        aliases, seen = [], set()
        for alias in ordered:
            key = normalize_surface(alias)
            if key not in seen:
                seen.add(key)
                aliases.append(alias)
        object.__setattr__(self, "aliases", tuple(aliases))


class Direction(str, enum.Enum):
    TAIL = "tail"  # predict t given (h, r)
    HEAD = "head"  # predict h given (r, t)


@dataclass(frozen=True)
class Query:
    direction: Direction
    known_entity: str
    relation: str


@dataclass(frozen=True)
class EvalCase:
    case_id: str
    query: Query
    gold: str

    def __post_init__(self) -> None:
        if not self.gold:
            raise ValueError("gold entity must be non-empty")

    @property
    def gold_triple(self) -> Triple:
        q = self.query
        if q.direction is Direction.TAIL:
            return Triple(q.known_entity, q.relation, self.gold)
        return Triple(self.gold, q.relation, q.known_entity)

    @classmethod
    def from_triple(cls, case_id: str, triple: Triple, direction: Direction = Direction.TAIL) -> "EvalCase":
        if direction is Direction.TAIL:
            return cls(case_id, Query(direction, triple.head, triple.relation), triple.tail)
        return cls(case_id, Query(direction, triple.tail, triple.relation), triple.head)


class KnowledgeGraph:
    """An immutable, indexed set of triples.

    Iteration order everywhere is first-seen ingestion order. ``duplicates``
    counts the repeated triples dropped during construction.
    """

    def __init__(self, triples: Iterable[Triple] = ()):
        ordered: dict[Triple, None] = {}
        duplicates = 0
        for t in triples:
            if t in ordered:
                duplicates += 1
            else:
                ordered[t] = None
        self._triples: tuple[Triple, ...] = tuple(ordered)
        self._set = frozenset(ordered)
        self.duplicates = duplicates

        by_head: dict[str, list[Triple]] = defaultdict(list)
        by_tail: dict[str, list[Triple]] = defaultdict(list)
        by_head_relation: dict[tuple[str, str], list[Triple]] = defaultdict(list)
        by_relation: dict[str, list[Triple]] = defaultdict(list)
        by_tail_relation: dict[tuple[str, str], list[Triple]] = defaultdict(list)
        touching: dict[str, list[Triple]] = defaultdict(list)
        for t in self._triples:
            by_head[t.head].append(t)
            by_tail[t.tail].append(t)
            by_head_relation[(t.head, t.relation)].append(t)
            by_relation[t.relation].append(t)
            by_tail_relation[(t.tail, t.relation)].append(t)
            touching[t.head].append(t)
            if t.tail != t.head:
                touching[t.tail].append(t)
        self.by_head = dict(by_head)
        self.by_tail = dict(by_tail)
        self.by_head_relation = dict(by_head_relation)
        self.by_relation = dict(by_relation)
        self.by_tail_relation = dict(by_tail_relation)
        self._touching = dict(touching)

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    def __contains__(self, triple: object) -> bool:
        return triple in self._set

    def entities(self) -> list[str]:
        seen: dict[str, None] = {}
        for t in self._triples:
            seen.setdefault(t.head)
            seen.setdefault(t.tail)
        return list(seen)

    def relations(self) -> list[str]:
        return list(self.by_relation)

    def touching(self, entity: str) -> list[Triple]:
        return self._touching.get(entity, [])


def _lines(source: TextIO | Iterable[str] | str | Path) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def load_triples(source: TextIO | Iterable[str] | str | Path) -> KnowledgeGraph:
    """Read ``head<TAB>relation<TAB>tail`` lines into a :class:`KnowledgeGraph`.

    ``source`` may be a path or any iterable of lines. Blank lines are skipped;
    malformed lines raise :class:`TSVFormatError` with their 1-based line number.
    """

    def parse() -> Iterator[Triple]:
        for lineno, raw in enumerate(_lines(source), start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TSVFormatError(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            if not all(parts):
                raise TSVFormatError(lineno, "empty field")
            yield Triple(*parts)

    kg = KnowledgeGraph(parse())
    if kg.duplicates:
        logger.info("dropped %d duplicate triples (%d kept)", kg.duplicates, len(kg))
    return kg


def dump_triples(triples: Iterable[Triple], out: TextIO) -> int:
    n = 0
    for t in triples:
        out.write(t.to_tsv() + "\n")
        n += 1
    return n


def load_entity_catalog(source: TextIO | Iterable[str] | str | Path) -> dict[str, EntityRecord]:
    """Read ``id<TAB>label<TAB>alias1|alias2<TAB>description`` lines."""
    catalog: dict[str, EntityRecord] = {}
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 3 or len(parts) > 4:
            raise TSVFormatError(lineno, f"expected 3 or 4 tab-separated fields, got {len(parts)}")
        eid, label, aliases = parts[0], parts[1], parts[2]
        description = parts[3] if len(parts) == 4 else ""
        if not eid:
            raise TSVFormatError(lineno, "empty entity id")
        if eid in catalog:
            raise TSVFormatError(lineno, f"duplicate entity id {eid!r}")
        alias_list = [a for a in aliases.split("|") if a] if aliases else []
        catalog[eid] = EntityRecord(eid, label, tuple(alias_list), description)
    return catalog


def dump_entity_catalog(catalog: Mapping[str, EntityRecord] | Iterable[EntityRecord], out: TextIO) -> int:
    records = catalog.values() if isinstance(catalog, Mapping) else catalog
    n = 0
    for rec in records:
        fields = [rec.id, rec.label, "|".join(rec.aliases), rec.description]
        out.write("\t".join(f.replace("\t", " ").replace("\n", " ") for f in fields) + "\n")
        n += 1
    return n


def load_cases(source: TextIO | Iterable[str] | str | Path, directions: str = "tail") -> list[EvalCase]:
    """Turn a test-triples TSV into evaluation cases.

    An optional fourth column (``head``/``tail``) overrides ``directions``,
    which is one of ``tail``, ``head`` or ``both``.
    """
    cases: list[EvalCase] = []
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) not in (3, 4) or not all(parts):
            raise TSVFormatError(lineno, "expected head, relation, tail and optional direction")
        triple = Triple(*parts[:3])
        which = parts[3] if len(parts) == 4 else directions
        dirs = [Direction.TAIL, Direction.HEAD] if which == "both" else [Direction(which)]
        for d in dirs:
            cases.append(EvalCase.from_triple(f"c{len(cases):05d}", triple, d))
    return cases


def neighborhood(kg: KnowledgeGraph, entity: str, limit: int = 10, exclude: Iterable[Triple] = ()) -> list[Triple]:
    """Up to ``limit`` triples mentioning ``entity`` as head or tail."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    skip = set(exclude)
    out = []
    for t in kg.touching(entity):
        if t in skip:
            continue
        out.append(t)
        if len(out) == limit:
            break
    return out


def examples_for_relation(kg: KnowledgeGraph, relation: str, k: int = 5, exclude: Iterable[Triple] = ()) -> list[Triple]:
    if k < 1:
        raise ValueError("k must be >= 1")
    skip = set(exclude)
    out = []
    for t in kg.by_relation.get(relation, ()):
        if t in skip:
            continue
        out.append(t)
        if len(out) == k:
            break
    return out


@dataclass(frozen=True)
class RelationCardinalityTable:
    """Per-relation maximum answer-set size, for each prediction direction."""

    tail_card: dict[str, int] = field(default_factory=dict)
    head_card: dict[str, int] = field(default_factory=dict)

    def get(self, relation: str, direction: Direction) -> int | None:
        table = self.tail_card if direction is Direction.TAIL else self.head_card
        return table.get(relation)


def compute_relation_cardinality(kg_train: KnowledgeGraph) -> RelationCardinalityTable:
    if len(kg_train) == 0:
        raise ValueError("cannot compute relation cardinality of an empty graph")
    tail_card: dict[str, int] = {}
    for (_, rel), ts in kg_train.by_head_relation.items():
        # triples are unique, so each (h, r) group already holds distinct tails
        if len(ts) > tail_card.get(rel, 0):
            tail_card[rel] = len(ts)
    head_card: dict[str, int] = {}
    for (_, rel), ts in kg_train.by_tail_relation.items():
        if len(ts) > head_card.get(rel, 0):
            head_card[rel] = len(ts)
    return RelationCardinalityTable(tail_card, head_card)
