"""Retriever and scorer clients: Wikipedia, web search, remote scorer, offline corpora.

HTTP clients read every response through a :class:`~agree.cache.ReplayCache`
when one is given. API keys are sent as request headers/params but never
enter cache keys.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from pathlib import Path
from typing import Any, Iterable, Sequence

import httpx

from .cache import CacheKind, ReplayCache
from .retrieval import DEFAULT_STOPWORDS, Document, RetrievalError, ToolKind, keywords

logger = logging.getLogger(__name__)

USER_AGENT = "agree-kgc/0.1 (research toolkit)"


class HttpJsonClient:
    """Small GET/POST JSON helper with retries and optional replay caching."""

    def __init__(
        self,
        kind: CacheKind,
        cache: ReplayCache | None = None,
        transport: httpx.BaseTransport | None = None,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
    ):
        self.kind = kind
        self.cache = cache
        self.retries = retries
        self.backoff = backoff
        self.network_calls = 0
        self._count_lock = threading.Lock()
        self._http = httpx.Client(transport=transport, timeout=timeout, headers={"User-Agent": USER_AGENT})

    def close(self) -> None:
        self._http.close()

    def _send(self, method: str, url: str, params: dict | None, body: Any, headers: dict | None) -> str:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                with self._count_lock:
                    self.network_calls += 1
                resp = self._http.request(method, url, params=params, json=body, headers=headers)
                resp.raise_for_status()
                return resp.text
            except (httpx.HTTPError, OSError) as exc:
                last = exc
                logger.debug("%s %s failed (attempt %d): %s", method, url, attempt + 1, exc)
                if attempt < self.retries and self.backoff:
                    time.sleep(self.backoff * 2**attempt)
        raise RetrievalError(f"{method} {url} failed after {self.retries + 1} attempts: {last}")

    def request_json(
        self,
        method: str,
        url: str,
        params: dict | None = None,
        body: Any = None,
        secret_params: dict | None = None,
        headers: dict | None = None,
    ) -> Any:
        key = {"method": method, "url": url, "params": params or {}, "body": body}
        all_params = {**(params or {}), **(secret_params or {})} or None

        def fetch() -> str:
            return self._send(method, url, all_params, body, headers)

        text = self.cache.fetch(self.kind, key, fetch) if self.cache is not None else fetch()
        return json.loads(text)


class WikipediaClient:
    """Basic retriever over a MediaWiki ``api.php`` endpoint (search, then plain-text extracts)."""

    def __init__(self, base_url: str = "https://en.wikipedia.org/w/api.php", **http_kwargs: Any):
        self.base_url = base_url
        self.http = HttpJsonClient(CacheKind.BASIC_SEARCH, **http_kwargs)

    def search(self, query: str, limit: int) -> list[Document]:
        found = self.http.request_json(
            "GET",
            self.base_url,
            {"action": "query", "list": "search", "srsearch": query, "srlimit": limit, "format": "json", "formatversion": 2},
        )
        titles = [hit["title"] for hit in found.get("query", {}).get("search", [])][:limit]
        docs = []
        for title in titles:
            data = self.http.request_json(
                "GET",
                self.base_url,
                {"action": "query", "prop": "extracts", "explaintext": 1, "titles": title, "format": "json", "formatversion": 2},
            )
            pages = data.get("query", {}).get("pages", [])
            if isinstance(pages, dict):
                pages = list(pages.values())
            for page in pages:
                if "missing" in page:
                    continue
                docs.append(Document(f"wikipedia:{page.get('pageid', page['title'])}", page["title"], page.get("extract", ""), ToolKind.BASIC))
        return docs


class WebSearchClient:
    """Advanced retriever over a generic JSON web-search API.

    Defaults follow the Google Custom Search response shape (``items`` with
    ``title``/``link``/``snippet``); the key names are configurable for
    other providers. The API key is read from the environment variable
    ``api_key_env`` at call time.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str | None = None,
        key_param: str = "key",
        query_param: str = "q",
        limit_param: str = "num",
        extra_params: dict[str, str] | None = None,
        results_key: str = "items",
        title_key: str = "title",
        url_key: str = "link",
        text_key: str = "snippet",
        **http_kwargs: Any,
    ):
        self.base_url = base_url
        self.api_key_env = api_key_env
        self.key_param = key_param
        self.query_param = query_param
        self.limit_param = limit_param
        self.extra_params = extra_params or {}
        self.results_key = results_key
        self.title_key = title_key
        self.url_key = url_key
        self.text_key = text_key
        self.http = HttpJsonClient(CacheKind.ADVANCED_SEARCH, **http_kwargs)

    def search(self, query: str, limit: int) -> list[Document]:
        secret = {}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if key:
                secret[self.key_param] = key
        params = {self.query_param: query, self.limit_param: limit, **self.extra_params}
        data = self.http.request_json("GET", self.base_url, params, secret_params=secret)
        docs = []
        for item in (data.get(self.results_key) or [])[:limit]:
            url = item.get(self.url_key, "")
            docs.append(Document(url, item.get(self.title_key, ""), item.get(self.text_key, ""), ToolKind.ADVANCED))
        return docs


class RemoteScorer:
    """Relevance scorer speaking ``POST {"query", "passages"} -> {"scores"}``."""

    def __init__(self, url: str, **http_kwargs: Any):
        self.url = url
        self.http = HttpJsonClient(CacheKind.SCORER, **http_kwargs)

    def score(self, query: str, passages: Sequence[str]) -> list[float]:
        data = self.http.request_json("POST", self.url, body={"query": query, "passages": list(passages)})
        scores = data.get("scores")
        if not isinstance(scores, list) or len(scores) != len(passages):
            raise ValueError("remote scorer returned a malformed score list")
        return [float(s) for s in scores]


def _doc_from_json(obj: dict, tool: ToolKind) -> Document:
    return Document(str(obj.get("source_id") or obj.get("url") or obj.get("title", "")), obj.get("title", ""), obj.get("text", ""), tool)


class CorpusRetriever:
    """Offline retriever over a fixed document list.

    Documents are ranked by the number of query keywords they contain; ties
    keep corpus order and documents with no shared keyword are not returned.
    """

    def __init__(self, documents: Iterable[Document], tool: ToolKind = ToolKind.BASIC, stopwords: frozenset[str] = DEFAULT_STOPWORDS):
        self.documents = list(documents)
        self.tool = tool
        self.stopwords = stopwords
        self._index = [keywords(f"{d.title} {d.text}", stopwords) for d in self.documents]

    @classmethod
    def from_jsonl(cls, path: str | Path, tool: ToolKind = ToolKind.BASIC) -> "CorpusRetriever":
        with open(path, encoding="utf-8") as fh:
            docs = [_doc_from_json(json.loads(line), tool) for line in fh if line.strip()]
        return cls(docs, tool)

    def search(self, query: str, limit: int) -> list[Document]:
        wanted = keywords(query, self.stopwords)
        scored = [(len(wanted & kw), i) for i, kw in enumerate(self._index)]
        scored = [(s, i) for s, i in scored if s > 0]
        scored.sort(key=lambda p: (-p[0], p[1]))
        return [self.documents[i] for _, i in scored[:limit]]


class RecordedRetriever:
    """Offline retriever replaying a recorded ``{query: [documents]}`` mapping."""

    def __init__(self, recordings: dict[str, list[Document]], tool: ToolKind = ToolKind.BASIC):
        self.recordings = {" ".join(q.split()): docs for q, docs in recordings.items()}
        self.tool = tool

    @classmethod
    def from_json(cls, path: str | Path, tool: ToolKind = ToolKind.BASIC) -> "RecordedRetriever":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls({q: [_doc_from_json(d, tool) for d in docs] for q, docs in raw.items()}, tool)

    def search(self, query: str, limit: int) -> list[Document]:
        return list(self.recordings.get(" ".join(query.split()), []))[:limit]
