from __future__ import annotations

import json
import math
import random

import numpy as np
import pytest

from harness.backends import (
    FailingCrossEncoder,
    FailingGenerationBackend,
    FixtureGenerationBackend,
    JaccardCrossEncoder,
    ScriptedGenerationBackend,
)
from harness.corpus import ChunkingPolicy, CorpusStore, Document
from harness.embedding import (
    EmbeddingBackendDescriptor,
    EmbeddingVector,
    MockEmbeddingBackend,
    build_index,
    mock_embed,
)
from harness.retrieval import (
    Query,
    RetrievalCandidate,
    RetrievalConfig,
    RetrievalError,
    Subquery,
    VariantDeps,
    canonical_query_text,
    capitalized_spans,
    expand,
    filter_candidates,
    interpret,
    rerank,
    retrieve_pool,
    run_pipeline,
    run_variant,
    select_context,
    tfidf_terms,
    write_run_file,
)

from conftest import make_synthetic_docs, write_jsonl


class MappingEmbedder:
    """Test embedder with hand-assigned vectors (exact boundary control)."""

    def __init__(self, mapping: dict[str, list[float]], dim: int):
        self.mapping = mapping
        self.descriptor = EmbeddingBackendDescriptor("mapping", dim, "mock")

    def embed(self, text: str) -> EmbeddingVector:
        return EmbeddingVector.of(self.mapping[text])

    def embed_batch(self, texts):
        return [self.embed(t) for t in texts]


def build_store(tmp_path, docs, max_tokens=64, overlap=8):
    path = write_jsonl(tmp_path / "corpus.jsonl", docs)
    store = CorpusStore(tmp_path / "store")
    store.ingest(path, policy=ChunkingPolicy(max_tokens=max_tokens, overlap_tokens=overlap))
    return store


def index_of(store, embedder):
    return build_index([(c.chunk_id, c.text) for c in store.chunks()], embedder)


# -- interpret -------------------------------------------------------------------


def test_interpret_atomic_single_clause():
    embedder = MockEmbeddingBackend(dim=16)
    result = interpret(Query.from_text("replace pump seal"), FixtureGenerationBackend(), embedder)
    assert result.decomposition_reason == "atomic"
    assert [s.text for s in result.subqueries] == ["replace pump seal"]


def test_interpret_compound_three_clauses():
    embedder = MockEmbeddingBackend(dim=16)
    query = Query.from_text("drain the tank and replace pump seal and restore power")
    result = interpret(query, FixtureGenerationBackend(), embedder)
    assert result.decomposition_reason == "compound"
    assert [s.text for s in result.subqueries] == [
        "drain the tank",
        "replace pump seal",
        "restore power",
    ]


def test_interpret_backend_failure_falls_back_underspecified():
    embedder = MockEmbeddingBackend(dim=16)
    query = Query.from_text("drain the tank and restore power")
    result = interpret(query, FailingGenerationBackend(), embedder)
    assert result.decomposition_reason == "underspecified"
    assert [s.text for s in result.subqueries] == ["drain the tank and restore power"]


def test_interpret_unsupported_decomposition_falls_back():
    embedder = MockEmbeddingBackend(dim=16)
    llm = ScriptedGenerationBackend([json.dumps(["something entirely different", "unrelated"])])
    result = interpret(Query.from_text("drain the tank and restore power"), llm, embedder)
    assert result.decomposition_reason == "underspecified"


def test_interpret_intent_vector_is_embed_of_canonical_text():
    embedder = MockEmbeddingBackend(dim=16)
    query = Query.from_text("  Replace   pump  seal ")
    result = interpret(query, None, embedder)
    want = embedder.embed(canonical_query_text(query))
    assert np.array_equal(result.intent_vector.values, want.values)


def test_query_kinds_canonical_text():
    doc = Document(doc_id="d1", event_name="Pump failure", summary="seal leak")
    assert canonical_query_text(Query.from_doc(doc)) == "Pump failure seal leak"
    assert canonical_query_text(Query.from_docs([doc])) == "Pump failure seal leak"
    with pytest.raises(RetrievalError):
        Query.from_docs([doc, doc])
    with pytest.raises(RetrievalError):
        Query.from_text("   ")


# -- expand ----------------------------------------------------------------------


def test_expand_keeps_high_similarity_paraphrase():
    # 4 shared tokens, norms 2 and sqrt(5): cosine 0.894427 >= 0.8 (oracle:
    # 4 / (2 * sqrt(5)))
    embedder = MockEmbeddingBackend(dim=64)
    llm = ScriptedGenerationBackend([json.dumps(["replace pump mechanical seal test"])])
    sub = expand(Subquery(text="replace pump mechanical seal"), llm, embedder, RetrievalConfig())
    texts = [e.text for e in sub.expansions]
    assert texts == ["replace pump mechanical seal", "replace pump mechanical seal test"]
    assert sub.expansions[1].sim_to_parent == pytest.approx(4 / (2 * math.sqrt(5)), abs=1e-9)


def test_expand_drops_low_similarity_paraphrase():
    # 3 shared tokens, norms 2 and 2: cosine 0.75 < 0.8 (hand oracle 3/4)
    embedder = MockEmbeddingBackend(dim=64)
    llm = ScriptedGenerationBackend([json.dumps(["pressure valve leak test"])])
    sub = expand(Subquery(text="pressure valve leak check"), llm, embedder, RetrievalConfig())
    assert [e.text for e in sub.expansions] == ["pressure valve leak check"]


def test_expand_boundary_inclusive_at_exactly_tau():
    mapping = {
        "parent task": [1.0, 0.0],
        "boundary para": [4.0, 3.0],  # cosine exactly 4/5 = 0.8
    }
    embedder = MappingEmbedder(mapping, dim=2)
    llm = ScriptedGenerationBackend([json.dumps(["boundary para"])])
    sub = expand(Subquery(text="parent task"), llm, embedder, RetrievalConfig())
    assert [e.text for e in sub.expansions] == ["parent task", "boundary para"]
    assert sub.expansions[1].sim_to_parent == 0.8


def test_expand_empty_reply_keeps_original_only():
    embedder = MockEmbeddingBackend(dim=16)
    llm = ScriptedGenerationBackend([json.dumps([])])
    sub = expand(Subquery(text="replace seal"), llm, embedder, RetrievalConfig())
    assert [(e.text, e.sim_to_parent) for e in sub.expansions] == [("replace seal", 1.0)]


def test_expand_backend_failure_keeps_original_only():
    embedder = MockEmbeddingBackend(dim=16)
    sub = expand(Subquery(text="replace seal"), FailingGenerationBackend(), embedder, RetrievalConfig())
    assert [(e.text, e.sim_to_parent) for e in sub.expansions] == [("replace seal", 1.0)]


def test_expand_caps_paraphrase_count():
    embedder = MockEmbeddingBackend(dim=64)
    paraphrases = [f"replace pump mechanical seal v{i}" for i in range(6)]
    llm = ScriptedGenerationBackend([json.dumps(paraphrases)])
    config = RetrievalConfig(expansions_per_subquery=2)
    sub = expand(Subquery(text="replace pump mechanical seal"), llm, embedder, config)
    assert len(sub.expansions) <= 3  # original + at most 2


# -- retrieve_pool -----------------------------------------------------------------


def make_interpretation(embedder, subtexts):
    from harness.retrieval import QueryInterpretation

    return QueryInterpretation(
        intent_vector=embedder.embed(" ".join(subtexts)),
        subqueries=[Subquery(text=t, expansions=[]) for t in subtexts],
        decomposition_reason="atomic" if len(subtexts) == 1 else "compound",
    )


def test_pool_disjoint_union(tmp_path):
    docs = [
        Document(doc_id="d1", body="alpha beta"),
        Document(doc_id="d2", body="alpha gamma"),
        Document(doc_id="d3", body="delta epsilon"),
        Document(doc_id="d4", body="delta zeta"),
    ]
    store = build_store(tmp_path, docs)
    embedder = MockEmbeddingBackend(dim=64)
    index = index_of(store, embedder)
    interp = make_interpretation(embedder, ["alpha", "delta"])
    pool = retrieve_pool(interp, index, RetrievalConfig(per_subquery_k=2, theta=0.0), embedder)
    assert len(pool) == 4


def test_pool_dedup_keeps_max_similarity():
    # one chunk, two expansions with different sims: 1.0 and ~0.707
    mapping = {
        "q-exact": [1.0, 0.0],
        "q-part": [1.0, 1.0],
    }
    embedder = MappingEmbedder(mapping, dim=2)
    backend = EmbeddingBackendDescriptor("mapping", 2, "mock")
    from harness.embedding import VectorIndex

    index = VectorIndex.build([("c1", EmbeddingVector.of([1.0, 0.0]))], backend)
    interp_subs = [Subquery(text="q-exact"), Subquery(text="q-part")]
    from harness.retrieval import QueryInterpretation

    interp = QueryInterpretation(
        intent_vector=EmbeddingVector.of([1.0, 0.0]),
        subqueries=interp_subs,
        decomposition_reason="compound",
    )
    pool = retrieve_pool(interp, index, RetrievalConfig(theta=0.0), embedder)
    assert len(pool) == 1
    assert pool[0].best_query_sim == pytest.approx(1.0, abs=1e-12)


def test_pool_matches_brute_force_union(tmp_path):
    rng = random.Random(5)
    vocab = "pump seal valve leak crane lift arc flash spill acid".split()
    docs = [
        Document(doc_id=f"d{i}", body=" ".join(rng.choice(vocab) for _ in range(8)))
        for i in range(10)
    ]
    store = build_store(tmp_path, docs)
    embedder = MockEmbeddingBackend(dim=64)
    index = index_of(store, embedder)
    expansion_texts = ["pump seal", "crane lift rigging", "acid spill response"]
    interp = make_interpretation(embedder, expansion_texts)
    config = RetrievalConfig(per_subquery_k=5, theta=0.0)
    pool = retrieve_pool(interp, index, config, embedder)

    # brute-force oracle over the full expansion x chunk cosine matrix,
    # quantizing chunk vectors to f32 the way the index build does
    def oracle_cos(qtext, ctext):
        q = mock_embed(qtext, 64).values
        c = mock_embed(ctext, 64).values.astype(np.float32).astype(np.float64)
        return float(np.dot(q, c) / (np.linalg.norm(q) * np.linalg.norm(c)))

    chunks = {c.chunk_id: c.text for c in store.chunks()}
    union: set[str] = set()
    best: dict[str, float] = {}
    for qtext in expansion_texts:
        sims = sorted(
            ((cid, oracle_cos(qtext, text)) for cid, text in chunks.items()),
            key=lambda item: (-item[1], item[0]),
        )
        union.update(cid for cid, _ in sims[:5])
        for cid, s in sims:
            best[cid] = max(best.get(cid, -1.0), s)

    assert {c.chunk_id for c in pool} == union
    for cand in pool:
        assert cand.best_query_sim == pytest.approx(best[cand.chunk_id], abs=1e-9)


# -- filter ------------------------------------------------------------------------


def cands(*sims):
    return [RetrievalCandidate(chunk_id=f"c{i}", best_query_sim=s) for i, s in enumerate(sims)]


def test_filter_boundary_inclusive():
    pool = cands(0.9, 0.5, 0.49)
    kept = filter_candidates(pool, RetrievalConfig(theta=0.5))
    assert [c.best_query_sim for c in kept] == [0.9, 0.5]


def test_filter_empty_pool():
    assert filter_candidates([], RetrievalConfig()) == []


def test_filter_theta_zero_keeps_all():
    pool = cands(0.9, 0.1, 0.0)
    assert filter_candidates(pool, RetrievalConfig(theta=0.0)) == pool


# -- rerank ------------------------------------------------------------------------


def test_rerank_jaccard_hand_values():
    # "pump seal" vs "pump seal failure": J = 2/3; vs "crane lift": J = 0
    texts = {"c1": "pump seal failure", "c2": "crane lift"}
    candidates = [
        RetrievalCandidate(chunk_id="c2", best_query_sim=0.9),
        RetrievalCandidate(chunk_id="c1", best_query_sim=0.6),
    ]
    ranked = rerank("pump seal", candidates, JaccardCrossEncoder(), texts.__getitem__)
    assert [c.chunk_id for c in ranked] == ["c1", "c2"]
    assert ranked[0].rerank_score == pytest.approx(2 / 3)
    assert ranked[1].rerank_score == 0.0
    # best_query_sim untouched
    assert {c.chunk_id: c.best_query_sim for c in ranked} == {"c1": 0.6, "c2": 0.9}


def test_rerank_single_candidate():
    texts = {"c1": "anything"}
    one = [RetrievalCandidate(chunk_id="c1", best_query_sim=0.7)]
    ranked = rerank("query", one, JaccardCrossEncoder(), texts.__getitem__)
    assert [c.chunk_id for c in ranked] == ["c1"]


def test_rerank_equal_scores_tie_by_chunk_id():
    texts = {"b": "same text here", "a": "same text here", "c": "same text here"}
    candidates = [RetrievalCandidate(chunk_id=k, best_query_sim=0.5) for k in ("b", "a", "c")]
    ranked = rerank("unrelated query", candidates, JaccardCrossEncoder(), texts.__getitem__)
    assert [c.chunk_id for c in ranked] == ["a", "b", "c"]


def test_rerank_is_permutation_of_input():
    rng = random.Random(3)
    texts = {f"c{i}": " ".join(rng.choice("x y z w pump seal".split()) for _ in range(4)) for i in range(12)}
    candidates = [RetrievalCandidate(chunk_id=k, best_query_sim=rng.random()) for k in texts]
    ranked = rerank("pump seal", candidates, JaccardCrossEncoder(), texts.__getitem__)
    assert sorted(c.chunk_id for c in ranked) == sorted(texts)


def test_rerank_fallback_on_cross_failure():
    texts = {"c1": "a", "c2": "b"}
    candidates = [
        RetrievalCandidate(chunk_id="c1", best_query_sim=0.4),
        RetrievalCandidate(chunk_id="c2", best_query_sim=0.9),
    ]
    notes: list[str] = []
    ranked = rerank("q", candidates, FailingCrossEncoder(), texts.__getitem__, notes)
    assert [c.chunk_id for c in ranked] == ["c2", "c1"]
    assert any("rerank-fallback" in n for n in notes)


# -- select_context -----------------------------------------------------------------


def test_select_context_takes_final_k():
    ranked = [
        RetrievalCandidate(chunk_id=f"c{i:02d}", best_query_sim=1 - i * 0.01, rerank_score=1 - i * 0.01)
        for i in range(25)
    ]
    ctx = select_context(ranked, RetrievalConfig(final_k=10))
    assert len(ctx.chunks) == 10
    assert ctx.chunks == [c.chunk_id for c in ranked[:10]]


def test_select_context_clamps():
    ranked = [RetrievalCandidate(chunk_id=f"c{i}", best_query_sim=0.5, rerank_score=0.5) for i in range(4)]
    ctx = select_context(ranked, RetrievalConfig(final_k=10))
    assert len(ctx.chunks) == 4


def test_select_context_prefix_property():
    rng = random.Random(11)
    for _ in range(50):
        n = rng.randint(1, 30)
        scores = sorted((rng.random() for _ in range(n)), reverse=True)
        ranked = [
            RetrievalCandidate(chunk_id=f"c{i:02d}", best_query_sim=s, rerank_score=s)
            for i, s in enumerate(scores)
        ]
        k = rng.randint(1, 15)
        ctx = select_context(ranked, RetrievalConfig(final_k=k))
        assert ctx.chunks == [c.chunk_id for c in ranked[: min(k, n)]]


# -- pipeline props ------------------------------------------------------------------


def test_pipeline_thresholds_enforced(tmp_path):
    docs = make_synthetic_docs(12, seed=21)
    store = build_store(tmp_path, docs, max_tokens=24, overlap=4)
    embedder = MockEmbeddingBackend(dim=64)
    index = index_of(store, embedder)
    config = RetrievalConfig()
    result = run_pipeline(
        Query.from_text("pump seal replacement and crane lift plan"),
        store,
        index,
        embedder,
        FixtureGenerationBackend(),
        JaccardCrossEncoder(),
        config,
    )
    for sub in result.interpretation.subqueries:
        for e in sub.expansions:
            assert e.sim_to_parent >= config.tau
    for cand in result.filtered:
        assert cand.best_query_sim >= config.theta
    assert [c.chunk_id for c in result.reranked[: len(result.context.chunks)]] == result.context.chunks


# -- variants -----------------------------------------------------------------------


def doc_level_oracle(query_text: str, store: CorpusStore, dim: int = 64, limit: int = 10):
    """Independent doc-level max-cosine ranking (pure python + f32 quantization)."""
    q = mock_embed(query_text, dim).values
    best: dict[str, float] = {}
    for c in store.chunks():
        v = mock_embed(c.text, dim).values.astype(np.float32).astype(np.float64)
        score = float(np.dot(q, v) / (np.linalg.norm(q) * np.linalg.norm(v)))
        if score > best.get(c.doc_id, -math.inf):
            best[c.doc_id] = score
    ranked = sorted(best.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:limit]


def test_pure_rag_matches_doc_level_oracle(tmp_path):
    docs = make_synthetic_docs(10, seed=31)
    store = build_store(tmp_path, docs, max_tokens=16, overlap=4)
    embedder = MockEmbeddingBackend(dim=64)
    deps = VariantDeps(store=store, index=index_of(store, embedder), embedder=embedder)
    plan = Document(doc_id="wp", event_name="pump work", body="pump seal replacement with torque wrench")
    hits = run_variant(plan, "pure_rag", deps)
    from harness.retrieval import _doc_query_text

    oracle = doc_level_oracle(_doc_query_text(plan), store)
    assert [(h.doc_id, round(h.score, 9)) for h in hits] == [
        (d, round(s, 9)) for d, s in oracle
    ]


def test_title_only_self_similarity_first(tmp_path):
    docs = [
        Document(doc_id="d1", event_name="Crane lift mishap", body="crane crane"),
        Document(doc_id="d2", event_name="Pump seal replacement", body="pump pump"),
        Document(doc_id="d3", event_name="Acid spill", body="acid acid"),
    ]
    store = build_store(tmp_path, docs)
    embedder = MockEmbeddingBackend(dim=64)
    deps = VariantDeps(store=store, index=index_of(store, embedder), embedder=embedder)
    plan = Document(doc_id="wp", event_name="Pump seal replacement", body="replace the seal")
    hits = run_variant(plan, "title_only", deps)
    assert hits[0].doc_id == "d2"
    assert hits[0].score == pytest.approx(1.0, abs=1e-9)


def test_rule_keywords_tfidf_hand_table(tmp_path):
    # plan tokens: pump x2, seal x2, replacement x1, torque x1
    # df over 5 docs: pump 4, seal 2, replacement 1, torque 0 (floored to 1)
    # idf: pump ln(5/4)=0.223, seal ln(5/2)=0.916, replacement ln5=1.609, torque ln5=1.609
    # tf*idf: seal 1.833 > replacement 1.609 = torque 1.609 (alpha tie) > pump 0.446
    docs = [
        Document(doc_id="d1", body="pump compressor"),
        Document(doc_id="d2", body="pump motor"),
        Document(doc_id="d3", body="pump bearing seal"),
        Document(doc_id="d4", body="pump impeller"),
        Document(doc_id="d5", body="seal housing"),
    ]
    store = build_store(tmp_path, docs)
    terms = tfidf_terms("pump seal replacement pump seal torque", store, top_n=5)
    assert terms == ["seal", "replacement", "torque", "pump"]


def test_capitalized_spans():
    text = "Inspect the North Cooling Tower and the main pump at Building Seven today"
    assert capitalized_spans(text) == ["North Cooling Tower", "Building Seven"]


def test_keywords_only_uses_llm_keywords(tmp_path):
    docs = make_synthetic_docs(8, seed=41)
    store = build_store(tmp_path, docs, max_tokens=16, overlap=4)
    embedder = MockEmbeddingBackend(dim=64)
    deps = VariantDeps(
        store=store,
        index=index_of(store, embedder),
        embedder=embedder,
        llm=FixtureGenerationBackend(),
    )
    plan = Document(doc_id="wp", event_name="maintenance", body="pump seal pump seal torque wrench work")
    hits = run_variant(plan, "keywords_only", deps)
    assert len(hits) <= 10 and hits


def test_unknown_variant_rejected(tmp_path):
    docs = make_synthetic_docs(3, seed=43)
    store = build_store(tmp_path, docs)
    embedder = MockEmbeddingBackend(dim=64)
    deps = VariantDeps(store=store, index=index_of(store, embedder), embedder=embedder)
    with pytest.raises(RetrievalError):
        run_variant(Document(doc_id="wp", body="x"), "bm25", deps)


def test_current_best_identity_reduces_to_pure_rag(tmp_path):
    # pipeline with decomposition off, expansions off, theta 0 and the
    # identity reranker must equal pure_rag exactly, doc level
    for seed in range(20):
        docs = make_synthetic_docs(8, seed=100 + seed)
        subdir = tmp_path / f"s{seed}"
        subdir.mkdir()
        store = build_store(subdir, docs, max_tokens=16, overlap=4)
        embedder = MockEmbeddingBackend(dim=64)
        index = index_of(store, embedder)
        config = RetrievalConfig(theta=0.0, decompose=False, expand=False)
        deps = VariantDeps(store=store, index=index, embedder=embedder, config=config)
        plan = make_synthetic_docs(1, seed=999 + seed)[0]

        pure = run_variant(plan, "pure_rag", deps)

        result = run_pipeline(
            Query.from_doc(plan), store, index, embedder, None, None, config
        )
        from harness.retrieval import _docs_from_chunk_scores

        pipeline_docs = _docs_from_chunk_scores(
            [(c.chunk_id, c.rerank_score) for c in result.reranked], store, config.final_k
        )
        assert [(h.doc_id, h.score) for h in pipeline_docs] == [
            (h.doc_id, h.score) for h in pure
        ]


def test_write_run_file_trec_format(tmp_path):
    from harness.retrieval import DocHit

    path = tmp_path / "run.txt"
    write_run_file(path, "q1", [DocHit("d2", 0.9), DocHit("d7", 0.5)], "pure_rag", mode="w")
    lines = path.read_text().splitlines()
    assert lines == [
        "q1 Q0 d2 1 0.900000 pure_rag",
        "q1 Q0 d7 2 0.500000 pure_rag",
    ]
