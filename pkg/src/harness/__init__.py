"""Agentic incident-retrieval and risk-analysis pipeline.

Subsystems: corpus store, embedding index, smart retrieval, analysis
agents, orchestrator, reporting, evaluation harness, HTTP service, CLI.
"""

from .corpus import (
    Chunk,
    ChunkingPolicy,
    CorpusStats,
    CorpusStore,
    Document,
    PolicyDocument,
    chunk,
    load_policy_corpus,
    normalize,
    tokenize,
)
from .embedding import (
    EmbeddingBackendDescriptor,
    EmbeddingVector,
    MockEmbeddingBackend,
    SearchHit,
    VectorIndex,
    build_index,
    cosine,
    mock_embed,
)
from .retrieval import (
    ContextSet,
    Query,
    RetrievalConfig,
    VariantDeps,
    run_pipeline,
    run_variant,
)
from .orchestrator import (
    Deps,
    JobStore,
    RetryPolicy,
    SmeFeedback,
    apply_feedback,
    create_job,
    run_job,
)

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "ChunkingPolicy",
    "ContextSet",
    "CorpusStats",
    "CorpusStore",
    "Deps",
    "Document",
    "EmbeddingBackendDescriptor",
    "EmbeddingVector",
    "JobStore",
    "MockEmbeddingBackend",
    "PolicyDocument",
    "Query",
    "RetrievalConfig",
    "RetryPolicy",
    "SearchHit",
    "SmeFeedback",
    "VariantDeps",
    "VectorIndex",
    "apply_feedback",
    "build_index",
    "chunk",
    "cosine",
    "create_job",
    "load_policy_corpus",
    "mock_embed",
    "normalize",
    "run_job",
    "run_pipeline",
    "run_variant",
    "tokenize",
    "__version__",
]
