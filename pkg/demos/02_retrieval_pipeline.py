"""Segment, chunk, filter and rerank two documents for one query."""

from agree.retrieval import Document, LexicalScorer, RetrieverConfig, ToolKind, chunk_document, process, segment_sentences

docs = [
    Document(
        "love-scout",
        "Love Scout",
        "Love Scout is a 2025 South Korean television series. It stars Han Ji-min and Lee Jun-hyuk. "
        "The series is a romance drama set in a headhunting firm. It aired on SBS from Jan. 3, 2025. "
        "Dr. Kim wrote the screenplay. Ratings rose after the 2nd episode.",
        ToolKind.BASIC,
    ),
    Document("other", "Weather", "It rained all week. Nobody went outside. The garden was happy.", ToolKind.BASIC),
]

print("sentences:")
for s in segment_sentences(docs[0].text):
    print("  -", s)
print("\nchunks:", [len(c.sentences) for c in chunk_document(docs[0])])

print("\nranked chunks for 'Love Scout genre drama':")
for c in process(docs, "Love Scout genre drama", LexicalScorer(), RetrieverConfig(top_k_chunks=3)):
    print(f"  {c.score:.3f}  [{c.doc.title}] {c.text}")
