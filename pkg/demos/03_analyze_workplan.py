#!/usr/bin/env python3
"""End-to-end job: create a job for the fixture work plan, run every
stage (summary, retrieval, hazards, coverage, FMEA, policies, report),
then print the trace and an excerpt of the markdown report.
"""

import json
import tempfile
from pathlib import Path

from harness.agents import PolicyIndex
from harness.backends import FixtureGenerationBackend, JaccardCrossEncoder
from harness.corpus import ChunkingPolicy, CorpusStore, Document, load_policy_corpus
from harness.embedding import MockEmbeddingBackend, build_index
from harness.orchestrator import Deps, JobStore, create_job, deterministic_job_id, get_trace, run_job

FIXTURES = Path(__file__).parent.parent / "fixtures"

workdir = Path(tempfile.mkdtemp(prefix="demo-analyze-"))
store = CorpusStore(workdir / "store")
store.ingest(FIXTURES / "incidents.jsonl")
embedder = MockEmbeddingBackend(dim=64)
deps = Deps(
    store=store,
    index=build_index([(c.chunk_id, c.text) for c in store.chunks()], embedder),
    embedder=embedder,
    llm=FixtureGenerationBackend(),
    cross=JaccardCrossEncoder(),
    policy_index=PolicyIndex(
        load_policy_corpus(FIXTURES / "policies.jsonl"),
        embedder,
        ChunkingPolicy(max_tokens=12, overlap_tokens=3),
    ),
)
job_store = JobStore(workdir / "jobs")

workplan = Document.from_dict(json.loads((FIXTURES / "workplan.json").read_text()))
job_id = create_job(job_store, workplan, job_id=deterministic_job_id(workplan))
state = run_job(job_store, job_id, deps)

print(f"job {job_id} finished at stage: {state.stage}\n")

print("== trace ==")
for entry in get_trace(job_store, job_id):
    print(
        f"  {entry.agent_name:22s} attempt={entry.attempt} {entry.status:7s} "
        f"in={entry.input_digest[:8]} out={entry.output_digest[:8]}"
    )

print("\n== report (markdown excerpt) ==")
md = job_store.report_path(job_id, 1, "markdown").read_text()
for line in md.splitlines()[:40]:
    print(line)
print("  ...")
print(f"\nfull reports: {job_store.report_path(job_id, 1)} (.md/.html alongside)")
