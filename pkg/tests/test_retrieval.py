import json
from pathlib import Path

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from agree.cache import CacheMiss, ReplayCache
from agree.clients import CorpusRetriever, RecordedRetriever, RemoteScorer, WebSearchClient, WikipediaClient
from agree.retrieval import (
    Chunk,
    Document,
    LexicalScorer,
    RetrievalError,
    RetrieverConfig,
    ToolKind,
    chunk_document,
    filter_chunks,
    keywords,
    process,
    rerank,
    search,
    segment_sentences,
    sentence_spans,
)

FIXTURES = Path(__file__).parent / "fixtures"


class FixedScorer:
    def __init__(self, scores):
        self.scores = scores

    def score(self, query, passages):
        return list(self.scores[: len(passages)])


class BrokenScorer:
    def score(self, query, passages):
        raise RuntimeError("scorer down")


def chunk(text, i=0):
    doc = Document(f"d{i}", f"T{i}", text)
    return Chunk(doc, 0, (text,), text)


# -- search -------------------------------------------------------------------

def test_search_love_scout_fixture():
    client = RecordedRetriever.from_json(FIXTURES / "recorded_basic.json")
    docs = search(ToolKind.BASIC, "Love Scout genre", client)
    assert len(docs) == 1
    assert docs[0].text.startswith("Love Scout (Korean: ") and "is a 2025 South Korea" in docs[0].text
    assert docs[0].tool is ToolKind.BASIC


def test_search_advanced_fixture_and_tagging():
    client = RecordedRetriever.from_json(FIXTURES / "recorded_advanced.json")
    docs = search(ToolKind.ADVANCED, "Us 2025 Thai television series cast member", client)
    assert any("Emi Thasorn Klinnium" in d.text for d in docs)
    assert all(d.tool is ToolKind.ADVANCED for d in docs)


def test_search_blank_query_rejected():
    with pytest.raises(ValueError):
        search(ToolKind.BASIC, "   ", RecordedRetriever({}))


def test_search_empty_result_is_not_error_and_limit_applies():
    assert search(ToolKind.BASIC, "nothing", RecordedRetriever({})) == []
    docs = [Document(str(i), "t", "alpha beta") for i in range(9)]
    got = search(ToolKind.BASIC, "alpha", CorpusRetriever(docs), RetrieverConfig(max_documents_per_call=5))
    assert [d.source_id for d in got] == ["0", "1", "2", "3", "4"]


def test_search_failure_wrapped():
    class Down:
        def search(self, query, limit):
            raise OSError("connection refused")

    with pytest.raises(RetrievalError):
        search(ToolKind.ADVANCED, "q", Down())


# -- segmentation -----------------------------------------------------------------

def test_segment_examples():
    assert segment_sentences("") == []
    assert segment_sentences("A is here. B follows! C?") == ["A is here.", "B follows!", "C?"]
    text = "In Jan. 2012, he returned to J. League, loaned by 1. FC Köln to Urawa Red Diamonds."
    assert segment_sentences(text) == [text]


@pytest.mark.parametrize(
    "text,expected",
    [
        ("Mr. Smith met Dr. Jones. They talked.", ["Mr. Smith met Dr. Jones.", "They talked."]),
        ('He said "Go." "Now?" she asked.', ['He said "Go."', '"Now?" she asked.']),
        ("It ended in 1999. 2000 began.", ["It ended in 1999.", "2000 began."]),
        ("The U.S. Army left. Peace followed.", ["The U.S. Army left.", "Peace followed."]),
        ("lower case. continues here", ["lower case. continues here"]),
        ("No terminal punctuation", ["No terminal punctuation"]),
    ],
)
def test_segment_rules(text, expected):
    assert segment_sentences(text) == expected


# -- chunking -------------------------------------------------------------------

def doc_with(n):
    return Document("d", "Doc", " ".join(f"Sentence number {i} is here." for i in range(n)))


def test_chunk_sizes():
    assert [len(c.sentences) for c in chunk_document(doc_with(7))] == [3, 3, 1]
    assert chunk_document(doc_with(0)) == []
    d = doc_with(3)
    chunks = chunk_document(d)
    assert len(chunks) == 1 and chunks[0].text == d.text
    assert [c.sentence_start for c in chunk_document(doc_with(7))] == [0, 3, 6]


# -- filtering and re-ranking -------------------------------------------------------

def test_filter_examples():
    notes = []
    drop = chunk("It is a 2025 South Korean romance drama.")
    assert filter_chunks([drop], "Love Scout genre") == []
    keep = chunk("Genre, Adventure, fantasy")
    assert filter_chunks([keep], "genre") == [keep]
    both = [drop, keep]
    assert filter_chunks(both, "the of a", notes=notes) == both
    assert notes and "disabled" in notes[0]


def test_keywords_unicode_and_stopwords():
    assert keywords("The Köln, FC_2012 of it") == {"köln", "fc", "2012"}


def test_rerank_examples():
    cs = [chunk(f"c{i}", i) for i in range(3)]
    out = rerank(cs, "q", FixedScorer([0.1, 0.9, 0.5]))
    assert [c.doc.source_id for c in out] == ["d1", "d2", "d0"]
    assert [c.score for c in out] == [0.9, 0.5, 0.1]
    same = rerank(cs, "q", FixedScorer([1.0, 1.0, 1.0]))
    assert [c.doc.source_id for c in same] == ["d0", "d1", "d2"]
    many = [chunk(f"c{i}", i) for i in range(20)]
    assert len(rerank(many, "q", FixedScorer([0.0] * 20), RetrieverConfig(top_k_chunks=8))) == 8


def test_rerank_scorer_failure_falls_back():
    notes = []
    cs = [chunk(f"c{i}", i) for i in range(3)]
    out = rerank(cs, "q", BrokenScorer(), notes=notes)
    assert [c.doc.source_id for c in out] == ["d0", "d1", "d2"]
    assert all(c.score == 0.0 for c in out)
    assert "scorer failed" in notes[0]


def test_lexical_scorer():
    s = LexicalScorer()
    a, b, c = s.score("love scout genre", ["genre genre scout", "love", "nothing here"])
    assert c == 0.0
    assert a > b > 0


# -- composition ---------------------------------------------------------------------

def test_process_examples():
    assert process([], "q", LexicalScorer()) == []
    d1 = Document("1", "Love Scout", "Love Scout is a series. It aired in 2025. The genre is romance. Ratings rose. Critics liked the genre choice. Scout is a role.")
    d2 = Document("2", "Other", "This is unrelated. Nothing matches. Still nothing. A genre appears here. Last one.")
    s1, s2 = segment_sentences(d1.text), segment_sentences(d2.text)
    assert len(s1) + len(s2) == 11
    query = "scout genre"
    assert keywords(query) == {"scout", "genre"}
    chunks = chunk_document(d1) + chunk_document(d2)
    kept = [c for c in chunks if {"scout", "genre"} & set(c.text.lower().replace(".", " ").split())]
    expected = rerank(kept, query, LexicalScorer())
    assert process([d1, d2], query, LexicalScorer()) == expected
    assert process([d1, d2], "zebra", LexicalScorer()) == []


# -- property tests (>= 1000 generated inputs in total) --------------------------------

WORDS = ["alpha", "Beta", "gamma", "Dr.", "Jan.", "U.S.", "J.", "1.", "2012", "Köln", "x", "the", "of"]
ENDS = [".", "!", "?", ". ", "...", '."', ""]

sentence_st = st.builds(
    lambda ws, end: " ".join(ws) + end,
    st.lists(st.sampled_from(WORDS), min_size=1, max_size=6),
    st.sampled_from(ENDS),
)
text_st = st.builds(
    lambda parts, seps: "".join(p + s for p, s in zip(parts, seps)),
    st.lists(sentence_st, max_size=12),
    st.lists(st.sampled_from([" ", "  ", "\n", " \t"]), min_size=12, max_size=12),
)
scores_st = st.lists(st.sampled_from([0.0, 0.5, 1.0, 2.0, 3.5]), min_size=40, max_size=40)
query_st = st.sampled_from(["alpha", "beta gamma", "the of", "köln 2012", "zeta", "x"])


@settings(max_examples=1000, deadline=None)
@given(text_st, query_st, scores_st, st.integers(1, 10))
def test_pipeline_invariants(text, query, scores, top_k):
    cfg = RetrieverConfig(top_k_chunks=top_k)
    doc = Document("d", "T", text)

    # segmentation reproduces the input up to whitespace separators
    spans = sentence_spans(text)
    pieces, pos = [], 0
    for a, b in spans:
        assert text[pos:a].strip() == ""
        pieces.append(text[pos:b])
        pos = b
    assert text[pos:].strip() == ""
    assert "".join(pieces) + text[pos:] == text

    # tiling and sentence bounds
    chunks = chunk_document(doc)
    sentences = segment_sentences(text)
    assert [s for c in chunks for s in c.sentences] == sentences
    assert all(1 <= len(c.sentences) <= 3 for c in chunks)
    assert all(len(c.sentences) == 3 for c in chunks[:-1])
    starts = [c.sentence_start for c in chunks]
    assert starts == list(range(0, len(sentences), 3))

    # filter output is a subsequence of its input
    kept = filter_chunks(chunks, query, cfg)
    it = iter(chunks)
    assert all(any(k is c for c in it) for k in kept)

    # rerank output is a stable, sorted permutation prefix
    scorer = FixedScorer(scores)
    ranked = rerank(kept, query, scorer, cfg)
    assert len(ranked) == min(top_k, len(kept))
    keys = [(-scores[i], i) for i in range(len(kept))]
    expected = [kept[i] for _, i in sorted(keys)][:top_k]
    assert [(c.doc, c.sentence_start) for c in ranked] == [(c.doc, c.sentence_start) for c in expected]
    assert len({(c.sentence_start) for c in ranked}) == len(ranked)

    # composition law and determinism
    assert process([doc], query, scorer, cfg) == ranked
    assert process([doc], query, scorer, cfg) == process([doc], query, scorer, cfg)


@settings(max_examples=200, deadline=None)
@given(text_st, text_st, query_st)
def test_lexical_order_unaffected_by_unrelated_document(text, other, query):
    base = [Document("a", "A", text)]
    unrelated = Document("b", "B", other)
    cfg = RetrieverConfig(top_k_chunks=1000)
    before = [(c.doc.source_id, c.sentence_start) for c in process(base, query, LexicalScorer(), cfg)]
    after = [(c.doc.source_id, c.sentence_start) for c in process(base + [unrelated], query, LexicalScorer(), cfg) if c.doc.source_id == "a"]
    assert before == after


# -- HTTP clients ----------------------------------------------------------------------

def wiki_handler(request: httpx.Request) -> httpx.Response:
    params = request.url.params
    if params.get("list") == "search":
        return httpx.Response(200, json={"query": {"search": [{"title": "Love Scout"}, {"title": "Gone"}]}})
    title = params["titles"]
    if title == "Gone":
        return httpx.Response(200, json={"query": {"pages": [{"title": "Gone", "missing": True}]}})
    return httpx.Response(200, json={"query": {"pages": [{"pageid": 7, "title": title, "extract": "Love Scout is a drama."}]}})


def test_wikipedia_client_with_cache(tmp_path):
    calls = []

    def handler(request):
        calls.append(request)
        return wiki_handler(request)

    cache = ReplayCache(tmp_path)
    client = WikipediaClient("https://wiki.test/w/api.php", cache=cache, transport=httpx.MockTransport(handler))
    docs = client.search("Love Scout genre", 5)
    assert [(d.source_id, d.title, d.text) for d in docs] == [("wikipedia:7", "Love Scout", "Love Scout is a drama.")]
    n = len(calls)
    assert client.search("Love   Scout genre", 5) == docs  # whitespace-normalized key
    assert len(calls) == n and cache.stats["hits"] == n

    def refuse(request):
        raise AssertionError("network used")

    offline = WikipediaClient("https://wiki.test/w/api.php", cache=ReplayCache(tmp_path, offline=True), transport=httpx.MockTransport(refuse))
    assert offline.search("Love Scout genre", 5) == docs
    with pytest.raises(CacheMiss):
        offline.search("something new", 5)


def test_websearch_key_not_in_cache(tmp_path, monkeypatch):
    seen = []

    def handler(request):
        seen.append(dict(request.url.params))
        return httpx.Response(200, json={"items": [{"title": "Us", "link": "https://x.test/us", "snippet": "Us: With Emi Thasorn Klinnium."}]})

    monkeypatch.setenv("TEST_SEARCH_KEY", "secret-123")
    cache = ReplayCache(tmp_path)
    client = WebSearchClient("https://search.test/v1", "TEST_SEARCH_KEY", extra_params={"cx": "engine"}, cache=cache, transport=httpx.MockTransport(handler), retries=0)
    docs = client.search("Us cast", 3)
    assert docs[0].tool is ToolKind.ADVANCED and docs[0].source_id == "https://x.test/us"
    assert seen[0]["key"] == "secret-123" and seen[0]["cx"] == "engine"
    stored = "".join(p.read_text() for p in tmp_path.rglob("*.json"))
    assert "secret-123" not in stored
    monkeypatch.setenv("TEST_SEARCH_KEY", "another-key")
    assert client.search("Us cast", 3) == docs and len(seen) == 1


def test_remote_scorer_contract(tmp_path):
    def handler(request):
        body = json.loads(request.content)
        assert set(body) == {"query", "passages"}
        return httpx.Response(200, json={"scores": [float(len(p)) for p in body["passages"]]})

    scorer = RemoteScorer("https://scorer.test/score", transport=httpx.MockTransport(handler))
    assert scorer.score("q", ["a", "abc"]) == [1.0, 3.0]
    cs = [chunk("a", 0), chunk("abc", 1)]
    assert [c.doc.source_id for c in rerank(cs, "q", scorer)] == ["d1", "d0"]


def test_remote_scorer_failure_is_recorded():
    def handler(request):
        return httpx.Response(503)

    scorer = RemoteScorer("https://scorer.test/score", transport=httpx.MockTransport(handler), retries=1, backoff=0)
    notes = []
    cs = [chunk("a", 0), chunk("b", 1)]
    out = rerank(cs, "q", scorer, notes=notes)
    assert [c.doc.source_id for c in out] == ["d0", "d1"] and notes


def test_http_retries_then_error():
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(500)

    client = WikipediaClient("https://wiki.test/w/api.php", transport=httpx.MockTransport(handler), retries=2, backoff=0)
    with pytest.raises(RetrievalError):
        client.search("x", 1)
    assert len(attempts) == 3


def test_corpus_retriever_ranking(tmp_path):
    path = tmp_path / "c.jsonl"
    rows = [{"source_id": "1", "title": "A", "text": "alpha"}, {"source_id": "2", "title": "B", "text": "alpha beta"}, {"source_id": "3", "title": "C", "text": "zeta"}]
    path.write_text("\n".join(json.dumps(r) for r in rows))
    r = CorpusRetriever.from_jsonl(path)
    assert [d.source_id for d in r.search("alpha beta", 5)] == ["2", "1"]
