#!/usr/bin/env python3
"""Start the analysis service with fixture backends for console e2e tests.

Builds a throwaway corpus/job store from the repository fixtures and
serves on the given port. Exits when killed.
"""

import argparse
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent.parent
sys.path.insert(0, str(REPO_ROOT / "src"))

from harness.agents import PolicyIndex                      # noqa: E402
from harness.backends import FixtureGenerationBackend, JaccardCrossEncoder  # noqa: E402
from harness.corpus import ChunkingPolicy, CorpusStore, load_policy_corpus  # noqa: E402
from harness.embedding import MockEmbeddingBackend, build_index             # noqa: E402
from harness.orchestrator import Deps, JobStore             # noqa: E402
from harness.service import create_app                      # noqa: E402


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, default=8356)
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args()

    fixtures = REPO_ROOT / "fixtures"
    workdir = Path(tempfile.mkdtemp(prefix="console-e2e-"))
    store = CorpusStore(workdir / "corpus")
    store.ingest(fixtures / "incidents.jsonl")
    embedder = MockEmbeddingBackend(dim=64)
    deps = Deps(
        store=store,
        index=build_index([(c.chunk_id, c.text) for c in store.chunks()], embedder),
        embedder=embedder,
        llm=FixtureGenerationBackend(),
        cross=JaccardCrossEncoder(),
        policy_index=PolicyIndex(
            load_policy_corpus(fixtures / "policies.jsonl"),
            embedder,
            ChunkingPolicy(max_tokens=12, overlap_tokens=3),
        ),
    )
    job_store = JobStore(workdir / "jobs")
    app = create_app(deps, job_store)

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="error")


if __name__ == "__main__":
    main()
