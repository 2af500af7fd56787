#!/usr/bin/env python3
"""Walkthrough: ingest the fixture incident corpus, inspect chunking and
word statistics, build the exact-cosine index, persist it, and search.
"""

import tempfile
from pathlib import Path

from harness.corpus import ChunkingPolicy, CorpusStore
from harness.embedding import MockEmbeddingBackend, VectorIndex, build_index

FIXTURES = Path(__file__).parent.parent / "fixtures"

workdir = Path(tempfile.mkdtemp(prefix="demo-corpus-"))
store = CorpusStore(workdir / "store")

print("== ingest ==")
report = store.ingest(FIXTURES / "incidents.jsonl", policy=ChunkingPolicy(max_tokens=64, overlap_tokens=16))
stats = report.stats
print(f"documents: {stats.doc_count}, chunks: {stats.chunk_count}")
print(
    "summary words: mean {:.2f} +/- {:.2f}, median {:.1f}, max {}".format(
        stats.summary_word_stats.mean,
        stats.summary_word_stats.std,
        stats.summary_word_stats.median,
        stats.summary_word_stats.max,
    )
)

print("\n== chunking of one document ==")
doc = store.get("evt-0001")
for piece in store.chunks_of(doc.doc_id):
    print(f"  {piece.chunk_id} seq={piece.seq} tokens={piece.token_count} text={piece.text[:60]!r}...")

print("\n== build + persist index ==")
backend = MockEmbeddingBackend(dim=64)
index = build_index([(c.chunk_id, c.text) for c in store.chunks()], backend)
index.save(workdir / "index")
reloaded = VectorIndex.load(workdir / "index")
print(f"index entries: {len(reloaded)} (dim {reloaded.backend.dim}, backend {reloaded.backend.backend_id})")
print(f"files: {workdir / 'index.vecs'} + {workdir / 'index.meta.json'}")

print("\n== top-5 search ==")
query = "mechanical seal failure on a cooling pump"
for hit in reloaded.top_k(backend.embed(query), 5):
    doc_id = store.doc_of_chunk(hit.chunk_id)
    print(f"  {hit.score:.4f}  {hit.chunk_id:14s}  {store.get(doc_id).event_name}")
