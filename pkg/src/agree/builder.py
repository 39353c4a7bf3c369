"""Build an emerging-entities benchmark from a Wikidata-compatible endpoint.

Steps: select entities created inside a time window and belonging to a
category whitelist, fetch their item-valued statements, drop (head, relation)
groups with too many tails, and emit triples/catalog TSVs plus a manifest.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import httpx

from .cache import CacheKind, ReplayCache
from .clients import HttpJsonClient
from .kg import EntityRecord, Triple, dump_entity_catalog, dump_triples

logger = logging.getLogger(__name__)

INCEPTION = "P571"
PUBLICATION_DATE = "P577"
INSTANCE_OF = "P31"
OCCUPATION = "P106"
SUBCLASS_OF = "P279"

# Reconstructed default whitelist: the four named example domains
# (artists, albums, TV shows, films) plus classes seen in published samples,
# filled up to 20 with common creative-work and organisation classes.
DEFAULT_CATEGORIES: dict[str, str] = {
    "Q483501": "artist",
    "Q482994": "album",
    "Q5398426": "television series",
    "Q11424": "film",
    "Q115305900": "large language model",
    "Q27686": "hotel",
    "Q163740": "nonprofit organization",
    "Q134556": "single",
    "Q7366": "song",
    "Q215380": "musical group",
    "Q7889": "video game",
    "Q571": "book",
    "Q7397": "software",
    "Q4830453": "business",
    "Q783794": "company",
    "Q41176": "building",
    "Q1656682": "event",
    "Q177220": "singer",
    "Q33999": "actor",
    "Q3305213": "painting",
}


@dataclass
class BuilderConfig:
    window_start: dt.date = dt.date(2025, 1, 1)
    window_end: dt.date = dt.date(2025, 5, 1)
    categories: list[str] = field(default_factory=lambda: list(DEFAULT_CATEGORIES))
    max_tail_cardinality: int = 10
    endpoint: str = "https://query.wikidata.org/sparql"
    entity_endpoint: str = "https://www.wikidata.org/wiki/Special:EntityData"
    api_endpoint: str = "https://www.wikidata.org/w/api.php"
    page_size: int = 500
    parallelism: int = 1
    expand_subclasses: bool = False
    fetch_labels: bool = True

    def __post_init__(self) -> None:
        if not self.window_start < self.window_end:
            raise ValueError(f"window_start {self.window_start} must precede window_end {self.window_end}")
        if not self.categories:
            raise ValueError("at least one category is required")
        if self.max_tail_cardinality < 1 or self.page_size < 1 or self.parallelism < 1:
            raise ValueError("max_tail_cardinality, page_size and parallelism must be positive")

    def in_window(self, day: dt.date) -> bool:
        return self.window_start <= day < self.window_end


@dataclass
class RawEntityBundle:
    id: str
    label: str
    description: str
    inception: dt.date | None
    categories: list[str]
    triples: list[Triple]
    aliases: list[str] = field(default_factory=list)
    inception_source: str | None = None  # P571, or P577 when falling back to publication date

    def record(self) -> EntityRecord:
        return EntityRecord(self.id, self.label or self.id, tuple(self.aliases), self.description)


class BuildError(RuntimeError):
    def __init__(self, message: str, progress_path: Path | None = None):
        super().__init__(message)
        self.progress_path = progress_path


def id_sort_key(ident: str) -> tuple[str, int, str]:
    m = re.fullmatch(r"([A-Za-z]+)(\d+)", ident)
    return (m.group(1), int(m.group(2)), "") if m else (ident, -1, ident)


def parse_wikidata_time(value: str) -> dt.date | None:
    m = re.match(r"^[+]?(\d{4,})-(\d{2})-(\d{2})", value)
    if not m:
        return None
    year, month, day = int(m.group(1)), max(int(m.group(2)), 1), max(int(m.group(3)), 1)
    try:
        return dt.date(year, month, day)
    except ValueError:
        return None


class WikidataClient:
    """SPARQL selection, entity-data fetches and label lookups, all via the replay cache."""

    def __init__(
        self,
        endpoint: str = "https://query.wikidata.org/sparql",
        entity_endpoint: str = "https://www.wikidata.org/wiki/Special:EntityData",
        api_endpoint: str = "https://www.wikidata.org/w/api.php",
        cache: ReplayCache | None = None,
        transport: httpx.BaseTransport | None = None,
        retries: int = 2,
        backoff: float = 1.0,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.entity_endpoint = entity_endpoint.rstrip("/")
        self.api_endpoint = api_endpoint
        self.http = HttpJsonClient(CacheKind.WIKIDATA, cache=cache, transport=transport, retries=retries, backoff=backoff, timeout=timeout)

    @classmethod
    def from_config(cls, cfg: BuilderConfig, **kwargs: Any) -> "WikidataClient":
        return cls(cfg.endpoint, cfg.entity_endpoint, cfg.api_endpoint, **kwargs)

    def sparql(self, query: str) -> list[dict]:
        data = self.http.request_json("GET", self.endpoint, {"query": query, "format": "json"})
        return data.get("results", {}).get("bindings", [])

    def select(self, cfg: BuilderConfig, categories: Sequence[str], offset: int, limit: int) -> list[str]:
        rows = self.sparql(selection_query(cfg, categories, offset, limit))
        return [row["item"]["value"].rsplit("/", 1)[-1] for row in rows if "item" in row]

    def subclasses(self, category: str) -> list[str]:
        rows = self.sparql(f"SELECT ?item WHERE {{ ?item wdt:{SUBCLASS_OF} wd:{category} . }} ORDER BY ?item")
        return [row["item"]["value"].rsplit("/", 1)[-1] for row in rows if "item" in row]

    def entity(self, qid: str) -> dict:
        data = self.http.request_json("GET", f"{self.entity_endpoint}/{qid}.json")
        entities = data.get("entities", {})
        return entities.get(qid) or next(iter(entities.values()))

    def labels(self, ids: Sequence[str], batch: int = 50) -> dict[str, EntityRecord]:
        out: dict[str, EntityRecord] = {}
        ids = sorted(set(ids), key=id_sort_key)
        for i in range(0, len(ids), batch):
            chunk = ids[i : i + batch]
            data = self.http.request_json(
                "GET",
                self.api_endpoint,
                {"action": "wbgetentities", "ids": "|".join(chunk), "props": "labels|aliases|descriptions", "languages": "en", "format": "json"},
            )
            for eid, ent in data.get("entities", {}).items():
                if "missing" in ent:
                    continue
                label, aliases, desc = _english(ent)
                out[eid] = EntityRecord(eid, label or eid, tuple(aliases), desc)
        return out


def selection_query(cfg: BuilderConfig, categories: Sequence[str], offset: int, limit: int) -> str:
    values = " ".join(f"wd:{c}" for c in categories)
    start = f'"{cfg.window_start.isoformat()}T00:00:00Z"^^xsd:dateTime'
    end = f'"{cfg.window_end.isoformat()}T00:00:00Z"^^xsd:dateTime'
    return (
        "SELECT DISTINCT ?item WHERE {\n"
        f"  VALUES ?cls {{ {values} }}\n"
        f"  {{ ?item wdt:{INSTANCE_OF} ?cls }} UNION {{ ?item wdt:{OCCUPATION} ?cls }}\n"
        f"  {{ ?item wdt:{INCEPTION} ?date }} UNION {{ FILTER NOT EXISTS {{ ?item wdt:{INCEPTION} [] }} ?item wdt:{PUBLICATION_DATE} ?date }}\n"
        f"  FILTER(?date >= {start} && ?date < {end})\n"
        "}\n"
        f"ORDER BY ?item\nLIMIT {limit}\nOFFSET {offset}"
    )


def _english(ent: Mapping) -> tuple[str, list[str], str]:
    label = ent.get("labels", {}).get("en", {}).get("value", "")
    desc = ent.get("descriptions", {}).get("en", {}).get("value", "")
    aliases = [a["value"] for a in ent.get("aliases", {}).get("en", [])]
    return label, aliases, desc


def _item_values(claims: Mapping, prop: str) -> list[str]:
    out = []
    for st in claims.get(prop, []):
        if st.get("rank") == "deprecated":
            continue
        snak = st.get("mainsnak", {})
        dv = snak.get("datavalue", {})
        if snak.get("snaktype") == "value" and dv.get("type") == "wikibase-entityid":
            vid = dv["value"].get("id") or f"Q{dv['value']['numeric-id']}"
            if vid not in out:
                out.append(vid)
    return out


def _first_date(claims: Mapping, prop: str) -> dt.date | None:
    for st in claims.get(prop, []):
        if st.get("rank") == "deprecated":
            continue
        dv = st.get("mainsnak", {}).get("datavalue", {})
        if dv.get("type") == "time":
            day = parse_wikidata_time(dv["value"]["time"])
            if day is not None:
                return day
    return None


def parse_entity(ent: Mapping) -> RawEntityBundle:
    """Turn Wikidata entity JSON into a bundle of item-valued triples."""
    qid = ent["id"]
    label, aliases, desc = _english(ent)
    claims = ent.get("claims", {})
    inception, source = _first_date(claims, INCEPTION), INCEPTION
    if inception is None:
        inception, source = _first_date(claims, PUBLICATION_DATE), PUBLICATION_DATE
    categories = _item_values(claims, INSTANCE_OF) + [c for c in _item_values(claims, OCCUPATION)]
    triples = [Triple(qid, prop, tail) for prop in claims for tail in _item_values(claims, prop)]
    return RawEntityBundle(qid, label, desc, inception, categories, triples, aliases, source if inception else None)


def _expanded_categories(cfg: BuilderConfig, client: WikidataClient) -> list[str]:
    cats = list(dict.fromkeys(cfg.categories))
    if cfg.expand_subclasses:
        for c in list(cats):
            for sub in client.subclasses(c):
                if sub not in cats:
                    cats.append(sub)
    return cats


def _write_json(path: Path, obj: Any) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    tmp.replace(path)


def fetch_emerging_entities(cfg: BuilderConfig, client: WikidataClient, progress_path: str | Path | None = None) -> list[RawEntityBundle]:
    """Select, fetch and filter entities created in ``[window_start, window_end)``.

    Window and category membership are re-checked on the fetched entity data.
    On failure a progress manifest is written to ``progress_path`` and
    :class:`BuildError` is raised; because every response is cached,
    re-running resumes from where the failure happened.
    """
    progress = Path(progress_path) if progress_path else None
    categories = _expanded_categories(cfg, client)
    wanted = set(categories)
    selected: list[str] = []
    completed: list[str] = []
    try:
        offset = 0
        while True:
            page = client.select(cfg, categories, offset, cfg.page_size)
            selected.extend(page)
            if len(page) < cfg.page_size:
                break
            offset += cfg.page_size
        selected = sorted(set(selected), key=id_sort_key)

        def one(qid: str) -> RawEntityBundle:
            bundle = parse_entity(client.entity(qid))
            completed.append(qid)
            return bundle

        if cfg.parallelism > 1:
            with ThreadPoolExecutor(cfg.parallelism) as pool:
                bundles = list(pool.map(one, selected))
        else:
            bundles = [one(q) for q in selected]
    except Exception as exc:
        if progress is not None:
            _write_json(progress, {
                "status": "failed",
                "error": str(exc),
                "selected": selected,
                "completed": sorted(completed, key=id_sort_key),
            })
        raise BuildError(f"entity fetch failed after {len(completed)} of {len(selected)} entities: {exc}", progress) from exc

    kept = []
    for b in bundles:
        if b.inception is None or not cfg.in_window(b.inception):
            continue
        if wanted.isdisjoint(b.categories):
            continue
        if b.inception_source == PUBLICATION_DATE:
            logger.info("%s: inception taken from publication date", b.id)
        kept.append(b)
    if progress is not None:
        _write_json(progress, {"status": "complete", "selected": selected, "completed": sorted(completed, key=id_sort_key)})
    return kept


def apply_cardinality_filter(bundles: Iterable[RawEntityBundle], max_card: int = 10) -> list[Triple]:
    """Drop every (head, relation) group with more than ``max_card`` distinct tails."""
    survivors = []
    for b in bundles:
        groups: dict[tuple[str, str], list[Triple]] = defaultdict(list)
        for t in dict.fromkeys(b.triples):
            groups[(t.head, t.relation)].append(t)
        for group in groups.values():
            if len({t.tail for t in group}) <= max_card:
                survivors.extend(group)
    return survivors


def emit_benchmark(
    triples: Sequence[Triple],
    bundles: Sequence[RawEntityBundle],
    out_dir: str | Path,
    cfg: BuilderConfig | None = None,
    extra_records: Mapping[str, EntityRecord] | None = None,
    endpoint: str = "",
) -> dict:
    """Write ``triples.tsv``, ``catalog.tsv`` and ``manifest.json``; return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_id = {b.id: b for b in bundles}
    if cfg is not None:
        triples = [t for t in triples if t.head in by_id and by_id[t.head].inception and cfg.in_window(by_id[t.head].inception)]
    triples = list(dict.fromkeys(t for t in triples if t.head in by_id))

    heads = list(dict.fromkeys(t.head for t in triples))
    records = [by_id[h].record() for h in heads]
    head_set = set(heads)
    extra = extra_records or {}
    others = sorted((i for i in extra if i not in head_set), key=id_sort_key)
    records += [extra[i] for i in others]

    with open(out / "triples.tsv", "w", encoding="utf-8", newline="\n") as fh:
        dump_triples(triples, fh)
    with open(out / "catalog.tsv", "w", encoding="utf-8", newline="\n") as fh:
        dump_entity_catalog(records, fh)

    manifest = {
        "triple_count": len(triples),
        "relation_count": len({t.relation for t in triples}),
        "entity_count": len(heads),
        "catalog_count": len(records),
        "window": {"start": cfg.window_start.isoformat(), "end": cfg.window_end.isoformat()} if cfg else None,
        "categories": list(cfg.categories) if cfg else [],
        "max_tail_cardinality": cfg.max_tail_cardinality if cfg else None,
        "publication_date_fallbacks": sorted((h for h in heads if by_id[h].inception_source == PUBLICATION_DATE), key=id_sort_key),
        "endpoint": endpoint or (cfg.endpoint if cfg else ""),
        "build_timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    _write_json(out / "manifest.json", manifest)
    return manifest


def build_benchmark(cfg: BuilderConfig, client: WikidataClient, out_dir: str | Path) -> dict:
    """Fetch, filter and emit in one go. Failures leave ``build_progress.json`` in ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    bundles = fetch_emerging_entities(cfg, client, out / "build_progress.json")
    triples = apply_cardinality_filter(bundles, cfg.max_tail_cardinality)
    extra: dict[str, EntityRecord] = {}
    if cfg.fetch_labels and triples:
        heads = {b.id for b in bundles}
        ids = {t.tail for t in triples if t.tail not in heads} | {t.relation for t in triples}
        extra = client.labels(sorted(ids, key=id_sort_key))
    manifest = emit_benchmark(triples, bundles, out, cfg, extra, cfg.endpoint)
    logger.info("built benchmark: %d triples, %d entities in %.1fs", manifest["triple_count"], manifest["entity_count"], time.monotonic() - started)
    return manifest
