"""Map answer surface strings onto catalog entity ids (exact alias match, then token Jaccard)."""

from __future__ import annotations

import enum
import logging
import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

from .kg import EntityRecord

logger = logging.getLogger(__name__)

DEFAULT_JACCARD_THRESHOLD = 0.5


def normalize_surface(s: str) -> str:
    """NFKC, lowercase, punctuation to spaces, whitespace collapsed."""
    s = unicodedata.normalize("NFKC", s).lower()
    s = "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in s)
    return " ".join(s.split())


class LinkMethod(str, enum.Enum):
    EXACT = "EXACT"
    FUZZY = "FUZZY"
    UNLINKED = "UNLINKED"


@dataclass(frozen=True)
class LinkResult:
    surface: str
    entity: str | None
    method: LinkMethod
    score: float
    alternatives: tuple[str, ...] = ()  # other ids tied with the chosen one


@dataclass
class AliasIndex:
    exact: dict[str, list[str]] = field(default_factory=dict)
    token_sets: dict[str, list[frozenset[str]]] = field(default_factory=dict)
    # token -> ids having an alias with that token; only used to prune fuzzy search
    postings: dict[str, set[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.token_sets)


def build_alias_index(catalog: Mapping[str, EntityRecord]) -> AliasIndex:
    exact: dict[str, set[str]] = defaultdict(set)
    token_sets: dict[str, list[frozenset[str]]] = {}
    postings: dict[str, set[str]] = defaultdict(set)
    for eid, rec in catalog.items():
        sets: list[frozenset[str]] = []
        for alias in rec.aliases or (rec.label,):
            norm = normalize_surface(alias)
            if not norm:
                continue
            exact[norm].add(eid)
            toks = frozenset(norm.split())
            if toks not in sets:
                sets.append(toks)
            for tok in toks:
                postings[tok].add(eid)
        token_sets[eid] = sets
    return AliasIndex({k: sorted(v) for k, v in exact.items()}, token_sets, dict(postings))


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def link_one(surface: str, index: AliasIndex, threshold: float = DEFAULT_JACCARD_THRESHOLD) -> LinkResult:
    if not surface or not surface.strip():
        raise ValueError("surface must be non-empty")
    norm = normalize_surface(surface)
    ids = index.exact.get(norm)
    if ids:
        if len(ids) > 1:
            logger.debug("alias collision for %r: %s -> %s", surface, ids, ids[0])
        return LinkResult(surface, ids[0], LinkMethod.EXACT, 1.0, tuple(ids[1:]))
    toks = frozenset(norm.split())
    candidates: set[str] = set()
    for tok in toks:
        candidates |= index.postings.get(tok, set())
    best_score, best_ids = 0.0, []
    for eid in candidates:
        score = max((jaccard(toks, s) for s in index.token_sets.get(eid, ())), default=0.0)
        if score > best_score:
            best_score, best_ids = score, [eid]
        elif score == best_score and score > 0:
            best_ids.append(eid)
    if best_ids and best_score >= threshold:
        best_ids.sort()
        return LinkResult(surface, best_ids[0], LinkMethod.FUZZY, best_score, tuple(best_ids[1:]))
    return LinkResult(surface, None, LinkMethod.UNLINKED, best_score if best_ids else 0.0)


def link_candidates(candidates: Sequence[str], index: AliasIndex, threshold: float = DEFAULT_JACCARD_THRESHOLD) -> list[LinkResult]:
    return [link_one(s, index, threshold) for s in candidates if s.strip()]


def ranked_ids(results: Iterable[LinkResult]) -> list[str]:
    out: list[str] = []
    seen: set[str] = set()
    for r in results:
        if r.entity is not None and r.entity not in seen:
            seen.add(r.entity)
            out.append(r.entity)
    return out


def link_ranked(candidates: Sequence[str], index: AliasIndex, threshold: float = DEFAULT_JACCARD_THRESHOLD) -> list[str]:
    """Linked entity ids in candidate order, unlinked dropped, duplicates kept at first position."""
    return ranked_ids(link_candidates(candidates, index, threshold))


def write_audit(results: Iterable[LinkResult], out: TextIO) -> None:
    """Write ``surface<TAB>entity_or_dash<TAB>method<TAB>score`` rows."""
    for r in results:
        surface = " ".join(r.surface.split())
        out.write(f"{surface}\t{r.entity or '-'}\t{r.method.value}\t{r.score:.4f}\n")
