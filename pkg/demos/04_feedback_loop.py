#!/usr/bin/env python3
"""The SME loop: run a job, grade the top retrieved event 0 (irrelevant),
and diff report v1 vs v2 — the graded event is excluded, its hazards
disappear, and the risk profile shifts. Approval alone changes nothing.
"""

import json
import tempfile
from pathlib import Path

from harness.agents import PolicyIndex
from harness.backends import FixtureGenerationBackend, JaccardCrossEncoder
from harness.corpus import ChunkingPolicy, CorpusStore, Document, load_policy_corpus
from harness.embedding import MockEmbeddingBackend, build_index
from harness.orchestrator import Deps, JobStore, SmeFeedback, apply_feedback, create_job, run_job

FIXTURES = Path(__file__).parent.parent / "fixtures"

workdir = Path(tempfile.mkdtemp(prefix="demo-feedback-"))
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

job_id = create_job(job_store, workplan)
run_job(job_store, job_id, deps)
v1 = json.loads(job_store.read_report_bytes(job_id, 1))
target = v1["retrieved_events"][0]["doc_id"]
print(f"report v1: {len(v1['retrieved_events'])} events, "
      f"{len(v1['hazard_control_analysis']['pairs'])} hazard pairs, "
      f"profile {v1['overall_risk_profile']}")
print(f"\nSME grades {target} as 0 (irrelevant) ...")

state = apply_feedback(
    job_store,
    job_id,
    SmeFeedback(job_id=job_id, event_grades={target: 0}, author="demo-sme"),
    deps,
)
v2 = json.loads(job_store.read_report_bytes(job_id, state.latest_version))
excluded = [e["doc_id"] for e in v2["retrieved_events"] if e["excluded"]]
print(f"report v2: excluded events {excluded}")
print(f"           {len(v2['hazard_control_analysis']['pairs'])} hazard pairs, "
      f"profile {v2['overall_risk_profile']}")

before = {p["hazard"] for p in v1["hazard_control_analysis"]["pairs"]}
after = {p["hazard"] for p in v2["hazard_control_analysis"]["pairs"]}
print("\nhazards removed by the exclusion:")
for hazard in sorted(before - after):
    print(f"  - {hazard}")

print("\nSME approves v2 (no edits) ...")
state = apply_feedback(
    job_store, job_id, SmeFeedback(job_id=job_id, approved=True, author="demo-sme"), deps
)
print(f"versions: {state.report_versions} (unchanged), approved={any(f.approved for f in state.feedback)}")
print(f"\nexported qrels: {(job_store.root / 'feedback_qrels.txt').read_text().strip()}")
