"""Fake chat-completions and MediaWiki servers for replay tests."""

from __future__ import annotations

import json

import httpx

from agree.clients import CorpusRetriever
from agree.llm import ChatMessage, RetrievalFollowingLLM, Role, ToolInvocation

LLM_URL = "https://llm.test/v1"
WIKI_URL = "https://wiki.test/w/api.php"


def from_wire(messages: list[dict]) -> list[ChatMessage]:
    out = []
    for m in messages:
        calls = m.get("tool_calls")
        call = None
        if calls:
            fn = calls[0]["function"]
            call = ToolInvocation(fn["name"], json.loads(fn["arguments"])["query"])
        out.append(ChatMessage(Role(m["role"]), m.get("content") or "", call))
    return out


class FakeServices:
    """Routes chat-completions to a retrieval-following policy and MediaWiki calls to a corpus."""

    def __init__(self, corpus: CorpusRetriever):
        self.corpus = corpus
        self.policy = RetrievalFollowingLLM()
        self.calls = 0

    @property
    def transport(self) -> httpx.MockTransport:
        return httpx.MockTransport(self.handle)

    def handle(self, request: httpx.Request) -> httpx.Response:
        self.calls += 1
        url = str(request.url)
        if url.startswith(LLM_URL):
            body = json.loads(request.content)
            turn = self.policy.complete(from_wire(body["messages"]), [])
            msg: dict = {"role": "assistant", "content": turn.text or None}
            if turn.tool_call:
                msg["tool_calls"] = [{
                    "id": "call_0",
                    "type": "function",
                    "function": {"name": turn.tool_call.name, "arguments": json.dumps({"query": turn.tool_call.query})},
                }]
            return httpx.Response(200, json={"choices": [{"index": 0, "message": msg}]})
        if url.startswith(WIKI_URL):
            params = request.url.params
            if params.get("list") == "search":
                docs = self.corpus.search(params["srsearch"], int(params["srlimit"]))
                return httpx.Response(200, json={"query": {"search": [{"title": d.title} for d in docs]}})
            title = params["titles"]
            doc = next(d for d in self.corpus.documents if d.title == title)
            return httpx.Response(200, json={"query": {"pages": [{"pageid": doc.source_id, "title": title, "extract": doc.text}]}})
        return httpx.Response(404)


class NoNetwork(httpx.BaseTransport):
    """Fails the test on any attempt to reach the network."""

    def __init__(self):
        self.attempts = 0

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        self.attempts += 1
        raise AssertionError(f"unexpected network call: {request.method} {request.url}")
