"""A small in-memory Wikidata look-alike served through ``httpx.MockTransport``."""

from __future__ import annotations

import re

import httpx

SPARQL = "https://wd.test/sparql"
ENTITY = "https://wd.test/entity"
API = "https://wd.test/w/api.php"

FILM, TV_SERIES, HOTEL = "Q11424", "Q5398426", "Q27686"


def item(qid):
    return {"mainsnak": {"snaktype": "value", "datavalue": {"type": "wikibase-entityid", "value": {"id": qid}}}, "rank": "normal"}


def when(day):
    return {"mainsnak": {"snaktype": "value", "datavalue": {"type": "time", "value": {"time": f"+{day}T00:00:00Z", "precision": 11}}}, "rank": "normal"}


def entity(qid, label, cls, claims, desc="", aliases=(), date_prop="P571", day=None):
    claims = {"P31": [item(cls)], **{p: [item(t) for t in tails] for p, tails in claims.items()}}
    if day:
        claims[date_prop] = [when(day)]
    return {
        "id": qid,
        "labels": {"en": {"language": "en", "value": label}},
        "descriptions": {"en": {"language": "en", "value": desc}} if desc else {},
        "aliases": {"en": [{"language": "en", "value": a} for a in aliases]},
        "claims": claims,
    }


def default_entities():
    return {
        "Q100": entity(
            "Q100", "Moonrise Harbor", FILM,
            {"P57": ["Q900"], "P161": [f"Q{901 + i}" for i in range(11)], "P136": [f"Q{920 + i}" for i in range(10)]},
            desc="2025 film", aliases=("Moonrise",), day="2025-02-03",
        ),
        # no inception, publication date on the last in-window day
        "Q101": entity("Q101", "Paper Lanterns", TV_SERIES, {"P161": ["Q901", "Q902"]}, desc="2025 TV series", date_prop="P577", day="2025-04-30"),
        "Q102": entity("Q102", "Late Bloom", FILM, {"P57": ["Q900"]}, day="2025-05-01"),
        "Q103": entity("Q103", "Old Reel", FILM, {"P57": ["Q900"]}, day="2024-12-31"),
        "Q105": entity("Q105", "First Light", FILM, {"P495": ["Q30"]}, desc="film released on new year's day", day="2025-01-01"),
        "Q104": entity("Q104", "Grand Harbor Hotel", HOTEL, {"P131": ["Q60"]}, day="2025-03-01"),
    }


class FakeWikidata:
    """Serves SPARQL selection, entity JSON and wbgetentities labels.

    The SPARQL handler honours the VALUES category list, LIMIT and OFFSET but
    ignores the date filter unless ``strict_dates`` is set, so the builder's
    own window re-check is exercised. ``fail_after`` makes the entity endpoint
    fail once that many entity documents have been served.
    """

    def __init__(self, entities=None, strict_dates=False, ignore_categories=False, fail_after=None):
        self.entities = entities if entities is not None else default_entities()
        self.strict_dates = strict_dates
        self.ignore_categories = ignore_categories
        self.fail_after = fail_after
        self.requests: list[httpx.Request] = []
        self.entity_served = 0

    @property
    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handle)

    def _classes(self, ent):
        return [s["mainsnak"]["datavalue"]["value"]["id"] for p in ("P31", "P106") for s in ent["claims"].get(p, [])]

    def _date(self, ent):
        for p in ("P571", "P577"):
            if p in ent["claims"]:
                return ent["claims"][p][0]["mainsnak"]["datavalue"]["value"]["time"][1:11]
        return None

    def handle(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(request)
        url = str(request.url)
        if url.startswith(SPARQL):
            return self._sparql(request.url.params["query"])
        if url.startswith(ENTITY):
            qid = request.url.path.rsplit("/", 1)[-1].removesuffix(".json")
            if self.fail_after is not None and self.entity_served >= self.fail_after:
                return httpx.Response(503, text="unavailable")
            self.entity_served += 1
            return httpx.Response(200, json={"entities": {qid: self.entities[qid]}})
        if url.startswith(API):
            ids = request.url.params["ids"].split("|")
            out = {}
            for i in ids:
                out[i] = {"id": i, "labels": {"en": {"value": f"label of {i}"}}, "aliases": {}, "descriptions": {}}
            return httpx.Response(200, json={"entities": out})
        return httpx.Response(404)

    def _sparql(self, query: str) -> httpx.Response:
        cats = set(re.findall(r"wd:(Q\d+)", re.search(r"VALUES \?cls \{([^}]*)\}", query).group(1)))
        limit = int(re.search(r"LIMIT (\d+)", query).group(1))
        offset = int(re.search(r"OFFSET (\d+)", query).group(1))
        start, end = re.findall(r'"(\d{4}-\d{2}-\d{2})T', query)
        rows = []
        for qid in sorted(self.entities, key=lambda q: int(q[1:])):
            ent = self.entities[qid]
            if not self.ignore_categories and cats.isdisjoint(self._classes(ent)):
                continue
            day = self._date(ent)
            if self.strict_dates and not (day and start <= day < end):
                continue
            rows.append({"item": {"type": "uri", "value": f"http://www.wikidata.org/entity/{qid}"}})
        page = rows[offset : offset + limit]
        return httpx.Response(200, json={"head": {"vars": ["item"]}, "results": {"bindings": page}})
