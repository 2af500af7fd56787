#!/usr/bin/env python3
"""Walkthrough of the retrieval pipeline: interpretation, expansion
(threshold tau), pooled search, similarity filtering (threshold theta),
cross-encoder reranking, context selection, and the six ranking variants.
"""

import json
import tempfile
from pathlib import Path

from harness.backends import FixtureGenerationBackend, JaccardCrossEncoder
from harness.corpus import CorpusStore, Document
from harness.embedding import MockEmbeddingBackend, build_index
from harness.retrieval import (
    Query,
    RetrievalConfig,
    VARIANTS,
    VariantDeps,
    run_pipeline,
    run_variant,
)

FIXTURES = Path(__file__).parent.parent / "fixtures"

workdir = Path(tempfile.mkdtemp(prefix="demo-retrieval-"))
store = CorpusStore(workdir / "store")
store.ingest(FIXTURES / "incidents.jsonl")
embedder = MockEmbeddingBackend(dim=64)
index = build_index([(c.chunk_id, c.text) for c in store.chunks()], embedder)
llm = FixtureGenerationBackend()
cross = JaccardCrossEncoder()
workplan = Document.from_dict(json.loads((FIXTURES / "workplan.json").read_text()))

config = RetrievalConfig()  # tau=0.8, theta=0.5, K=50, final k=10
result = run_pipeline(Query.from_doc(workplan), store, index, embedder, llm, cross, config)

print("== interpretation ==")
print(f"reason: {result.interpretation.decomposition_reason}")
for sub in result.interpretation.subqueries:
    print(f"  subquery: {sub.text!r}")
    for e in sub.expansions:
        print(f"    expansion (sim {e.sim_to_parent:.3f} >= tau {config.tau}): {e.text!r}")

print("\n== pool -> filter -> rerank ==")
print(f"pooled candidates: {len(result.pool)}")
print(f"after theta filter (>= {config.theta}): {len(result.filtered)}")
for cand in result.reranked[:5]:
    print(f"  rerank {cand.rerank_score:.4f}  sim {cand.best_query_sim:.3f}  {cand.chunk_id}")
print(f"context chunks selected: {len(result.context.chunks)} (k={result.context.k})")

print("\n== six variants, document level ==")
deps = VariantDeps(store=store, index=index, embedder=embedder, llm=llm, cross=cross, config=config)
for variant in VARIANTS:
    hits = run_variant(workplan, variant, deps)
    head = ", ".join(f"{h.doc_id}:{h.score:.3f}" for h in hits[:3])
    print(f"  {variant:18s} -> {head} ...")
