"""Content-addressed replay cache for external calls (LLM, search, scorer, Wikidata)."""

from __future__ import annotations

import enum
import hashlib
import json
import os
import re
import threading
import time
from pathlib import Path
from typing import Any, Callable

_WS = re.compile(r"\s+")


class CacheKind(str, enum.Enum):
    LLM = "llm"
    BASIC_SEARCH = "basic_search"
    ADVANCED_SEARCH = "advanced_search"
    SCORER = "scorer"
    WIKIDATA = "wikidata"


class CacheMiss(LookupError):
    """Raised in offline mode when a request has no recorded response."""


def _normalize(obj: Any) -> Any:
    if isinstance(obj, str):
        return _WS.sub(" ", obj).strip()
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    return obj


def canonical_json(request: Any) -> str:
    """Sorted-key, whitespace-normalized JSON used for cache keys."""
    return json.dumps(_normalize(request), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def cache_key(kind: CacheKind | str, request: Any) -> str:
    kind = CacheKind(kind)
    payload = f"{kind.value}\n{canonical_json(request)}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ReplayCache:
    """On-disk store of response payloads keyed by (kind, canonical request).

    Entries are written atomically (temp file then rename). Concurrent lookups
    of the same key are serialized so that a response is fetched at most once.
    With ``offline=True`` a miss raises :class:`CacheMiss` instead of calling
    the fetch function.
    """

    def __init__(self, root: str | Path, offline: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.offline = offline
        self.hits = 0
        self.misses = 0
        self._guard = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    def _path(self, kind: CacheKind, key: str) -> Path:
        return self.root / kind.value / key[:2] / f"{key}.json"

    def _lock_for(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(key, threading.Lock())

    def get(self, kind: CacheKind | str, request: Any) -> str | None:
        kind = CacheKind(kind)
        path = self._path(kind, cache_key(kind, request))
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)["payload"]

    def put(self, kind: CacheKind | str, request: Any, payload: str) -> str:
        kind = CacheKind(kind)
        key = cache_key(kind, request)
        path = self._path(kind, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {
            "key": key,
            "kind": kind.value,
            "request": json.loads(canonical_json(request)),
            "payload": payload,
            "created_at": time.time(),
        }
        tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, ensure_ascii=False, sort_keys=True)
        os.replace(tmp, path)
        return key

    def fetch(self, kind: CacheKind | str, request: Any, fetch: Callable[[], str]) -> str:
        """Return the recorded payload for ``request``, calling ``fetch`` on a miss."""
        kind = CacheKind(kind)
        key = cache_key(kind, request)
        with self._lock_for(key):
            cached = self.get(kind, request)
            if cached is not None:
                with self._guard:
                    self.hits += 1
                return cached
            with self._guard:
                self.misses += 1
            if self.offline:
                raise CacheMiss(f"no recorded {kind.value} response for key {key[:12]}")
            payload = fetch()
            self.put(kind, request, payload)
            return payload

    @property
    def stats(self) -> dict[str, int]:
        return {"hits": self.hits, "misses": self.misses}

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*/*/*.json"))
