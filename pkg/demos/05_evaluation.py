#!/usr/bin/env python3
"""Evaluation walkthrough: run all six variants over test plans, pool
their top-10 lists for annotation, score runs against graded qrels
(P@5 / R@5 / F1@5 as mean +/- population std), rubric-judge a report,
and benchmark embedding backends on the shipped QA fixture.
"""

import json
import tempfile
from pathlib import Path

from harness.backends import FixtureGenerationBackend, JaccardCrossEncoder, ScriptedGenerationBackend
from harness.corpus import CorpusStore, Document
from harness.embedding import MockEmbeddingBackend, build_index
from harness.evaluation import (
    QaPair,
    Qrels,
    RunFile,
    SubstringAgreementJudge,
    benchmark_embeddings,
    benchmark_markdown,
    evaluate_run,
    judge_report,
    metrics_markdown,
    pool,
)
from harness.retrieval import RetrievalConfig, VARIANTS, VariantDeps, run_variant

FIXTURES = Path(__file__).parent.parent / "fixtures"

workdir = Path(tempfile.mkdtemp(prefix="demo-eval-"))
store = CorpusStore(workdir / "store")
store.ingest(FIXTURES / "incidents.jsonl")
embedder = MockEmbeddingBackend(dim=64)
index = build_index([(c.chunk_id, c.text) for c in store.chunks()], embedder)
# theta relaxed for these terse demo plans; hashing-bag cosines run low on
# short keyword queries and 0.5 would empty the current_best context
deps = VariantDeps(
    store=store, index=index, embedder=embedder,
    llm=FixtureGenerationBackend(), cross=JaccardCrossEncoder(),
    config=RetrievalConfig(theta=0.3),
)

plans = [
    Document(doc_id="plan-pump", event_name="Pump seal replacement",
             summary="replace mechanical seal on cooling pump and restore pressure"),
    Document(doc_id="plan-crane", event_name="Crane lift of heat exchanger",
             summary="crane lift rigging taglines exclusion zone heat exchanger"),
    Document(doc_id="plan-acid", event_name="Acid day tank transfer",
             summary="transfer sulfuric acid to day tank with hose inspection"),
]

print("== variant runs ==")
runs = []
for variant in VARIANTS:
    run = RunFile(variant)
    for plan in plans:
        hits = run_variant(plan, variant, deps)
        run.add_ranking(plan.doc_id, [(h.doc_id, h.score) for h in hits])
    run.validate()
    runs.append(run)
    print(f"  {variant}: ranked {sum(len(run.ranking(q)) for q in run.query_ids())} rows")

print("\n== pooled judgment ==")
pairs = pool(runs, depth=10, cap_per_query=25)
per_query = {}
for query_id, doc_id in pairs:
    per_query.setdefault(query_id, []).append(doc_id)
for query_id, docs in per_query.items():
    print(f"  {query_id}: {len(docs)} docs to annotate")

# stand-in annotation: events sharing the plan topic get grade 2/1
topic = {"plan-pump": ("evt-0001", "evt-0002", "evt-0003"),
         "plan-crane": ("evt-0006", "evt-0007"),
         "plan-acid": ("evt-0008", "evt-0009")}
qrels = Qrels()
for query_id, docs in per_query.items():
    for doc_id in docs:
        grade = 2 if doc_id in topic[query_id] else 0
        qrels.add(query_id, doc_id, grade)
qrels.save(workdir / "qrels.txt")

print("\n== retrieval metrics ==")
rows = [evaluate_run(run, qrels, k=5) for run in runs]
rows.sort(key=lambda r: -r.f1_at_k.mean)
print(metrics_markdown(rows))

print("\n== LLM-as-judge rubric (scripted judge) ==")
judge = ScriptedGenerationBackend(
    [json.dumps({"score": s, "justification": "demo"}) for s in (4, 3, 4, 5, 3)]
)
scores = judge_report("demo report text", "demo work plan", judge)
print(f"  dimensions: clarity={scores.clarity} completeness={scores.completeness} "
      f"usefulness={scores.usefulness} accuracy={scores.accuracy} specificity={scores.specificity}")
print(f"  overall: {scores.overall}")

print("\n== embedding benchmark (shipped QA fixture) ==")
qa = [
    QaPair(r["question"], r["reference_answer"], r["source_doc_id"])
    for r in (json.loads(line) for line in (FIXTURES / "qa_pairs.jsonl").read_text().splitlines() if line.strip())
]
bench = benchmark_embeddings(
    qa,
    [MockEmbeddingBackend(dim=64, backend_id="mock-64"), MockEmbeddingBackend(dim=128, backend_id="mock-128")],
    SubstringAgreementJudge(),
    store,
    FixtureGenerationBackend(),
)
print(benchmark_markdown(bench))
