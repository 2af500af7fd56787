"""Smart retrieval: query interpretation, expansion, pooled search,
similarity filtering, cross-encoder reranking, and context selection.

Thresholds: an expansion is kept only when its cosine to the parent
subquery is at least ``tau`` (default 0.8); a pooled candidate survives
filtering only when its best query similarity is at least ``theta``
(default 0.5). Both comparisons are inclusive.

The six retrieval variants produce document-level top-10 rankings; chunk
hits are mapped to their parent document keeping the best chunk score.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

from .backends import (
    CrossEncoderBackend,
    GenerationBackend,
    generate_json,
    load_template,
)
from .corpus import CorpusStore, Document, normalize, tokenize
from .embedding import EmbeddingBackend, EmbeddingVector, VectorIndex, cosine
from .errors import AgentError, BackendProtocolError, TransportError

VARIANTS = (
    "current_best",
    "keywords_only",
    "pure_rag",
    "title_only",
    "rule_keywords",
    "extended_keywords",
)

_CLAUSE_SPLIT_RE = re.compile(r"\band\b|;|\bthen\b")


class RetrievalError(Exception):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    tau: float = 0.8
    theta: float = 0.5
    per_subquery_k: int = 50
    final_k: int = 10
    expansions_per_subquery: int = 3
    variant: str = "current_best"
    decompose: bool = True
    expand: bool = True

    def validate(self) -> None:
        if not (0.0 <= self.theta <= self.tau <= 1.0):
            raise ValueError("thresholds must satisfy 0 <= theta <= tau <= 1")
        if min(self.per_subquery_k, self.final_k, self.expansions_per_subquery) < 1:
            raise ValueError("all counts must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class Query:
    kind: str  # "text" | "doc" | "doc_set"
    payload: object

    @classmethod
    def from_text(cls, text: str) -> "Query":
        if not normalize(text):
            raise RetrievalError("query text is empty")
        return cls(kind="text", payload=text)

    @classmethod
    def from_doc(cls, doc: Document) -> "Query":
        return cls(kind="doc", payload=doc)

    @classmethod
    def from_docs(cls, docs: list[Document]) -> "Query":
        if not docs:
            raise RetrievalError("query document set is empty")
        ids = [d.doc_id for d in docs]
        if len(set(ids)) != len(ids):
            raise RetrievalError("query document set has duplicates")
        return cls(kind="doc_set", payload=list(docs))


def _doc_query_text(doc: Document) -> str:
    return normalize(" ".join(part for part in (doc.event_name, doc.summary, doc.body) if part))


def canonical_query_text(query: Query) -> str:
    if query.kind == "text":
        return normalize(query.payload)
    if query.kind == "doc":
        return _doc_query_text(query.payload)
    if query.kind == "doc_set":
        return normalize(" ".join(_doc_query_text(d) for d in query.payload))
    raise RetrievalError(f"unknown query kind {query.kind!r}")


@dataclass(frozen=True)
class Expansion:
    text: str
    sim_to_parent: float


@dataclass(frozen=True)
class Subquery:
    text: str
    expansions: list[Expansion] = field(default_factory=list)


@dataclass(frozen=True)
class QueryInterpretation:
    intent_vector: EmbeddingVector
    subqueries: list[Subquery]
    decomposition_reason: str  # "atomic" | "compound" | "underspecified"


@dataclass(frozen=True)
class RetrievalCandidate:
    chunk_id: str
    best_query_sim: float
    rerank_score: float | None = None


@dataclass(frozen=True)
class ContextSet:
    chunks: list[str]  # chunk_ids ordered by rerank score descending
    k: int


@dataclass
class PipelineResult:
    query_text: str
    interpretation: QueryInterpretation
    pool: list[RetrievalCandidate]
    filtered: list[RetrievalCandidate]
    reranked: list[RetrievalCandidate]
    context: ContextSet
    notes: list[str] = field(default_factory=list)


def _clauses(text: str) -> list[str]:
    return [c.strip() for c in _CLAUSE_SPLIT_RE.split(text) if c.strip()]


def _supported_subquery(candidate: str, query_text: str) -> bool:
    """A decomposed subquery must be non-empty, <= 64 tokens, and appear
    verbatim (case-insensitive) inside the query it came from."""
    cleaned = normalize(candidate)
    if not cleaned or len(tokenize(cleaned)) > 64:
        return False
    return cleaned.lower() in query_text.lower()


def interpret(
    query: Query, llm: GenerationBackend | None, embedder: EmbeddingBackend
) -> QueryInterpretation:
    """Build the intent vector and decompose compound queries.

    Single-clause queries are atomic (no backend call). Multi-clause
    queries go to the generation backend for decomposition; any backend or
    validation failure falls back to one subquery equal to the full text
    with reason ``underspecified``.
    """
    text = canonical_query_text(query)
    if not text:
        raise RetrievalError("query has no text")
    intent = embedder.embed(text)

    if llm is None or len(_clauses(text)) < 2:
        return QueryInterpretation(intent, [Subquery(text=text)], "atomic")

    prompt = load_template("decompose_query").render(query=text)
    try:
        parts, _ = generate_json(llm, prompt)
        if not isinstance(parts, list) or not parts:
            raise BackendProtocolError("decomposition must be a non-empty JSON array")
        subtexts = [normalize(str(p)) for p in parts]
        if not all(_supported_subquery(s, text) for s in subtexts):
            raise BackendProtocolError("decomposition not supported by query text")
    except (TransportError, AgentError, BackendProtocolError):
        return QueryInterpretation(intent, [Subquery(text=text)], "underspecified")

    if len(subtexts) == 1:
        return QueryInterpretation(intent, [Subquery(text=subtexts[0])], "atomic")
    return QueryInterpretation(
        intent, [Subquery(text=s) for s in subtexts], "compound"
    )


def expand(
    subquery: Subquery,
    llm: GenerationBackend | None,
    embedder: EmbeddingBackend,
    config: RetrievalConfig,
) -> Subquery:
    """Request paraphrases and keep those with cosine >= tau to the parent.

    The original subquery is always present with similarity 1.0; on any
    backend failure the expansion set degrades to just the original.
    """
    expansions = [Expansion(text=subquery.text, sim_to_parent=1.0)]
    if llm is None:
        return replace(subquery, expansions=expansions)

    prompt = load_template("expand_subquery").render(
        count=str(config.expansions_per_subquery), subquery=subquery.text
    )
    try:
        raw, _ = generate_json(llm, prompt)
        if not isinstance(raw, list):
            raise BackendProtocolError("expansion reply must be a JSON array")
    except (TransportError, AgentError, BackendProtocolError):
        return replace(subquery, expansions=expansions)

    parent_vec = embedder.embed(subquery.text)
    seen = {normalize(subquery.text).lower()}
    for candidate in [normalize(str(p)) for p in raw][: config.expansions_per_subquery]:
        if not candidate or candidate.lower() in seen:
            continue
        seen.add(candidate.lower())
        sim = cosine(embedder.embed(candidate), parent_vec)
        if sim >= config.tau:
            expansions.append(Expansion(text=candidate, sim_to_parent=sim))
    return replace(subquery, expansions=expansions)


def retrieve_pool(
    interpretation: QueryInterpretation,
    index: VectorIndex,
    config: RetrievalConfig,
    embedder: EmbeddingBackend,
) -> list[RetrievalCandidate]:
    """Per-expansion top-K search, unioned and deduplicated by chunk.

    ``best_query_sim`` is the maximum cosine between the chunk and any
    expansion of any subquery (the value the theta filter applies to).
    Pool order: best_query_sim descending, chunk_id ascending on ties.
    """
    expansion_texts: list[str] = []
    for sub in interpretation.subqueries:
        exps = sub.expansions or [Expansion(text=sub.text, sim_to_parent=1.0)]
        expansion_texts.extend(e.text for e in exps)

    union: set[str] = set()
    best: dict[str, float] = {}
    for text in expansion_texts:
        vec = embedder.embed(text)
        score_map = index.scores(vec)
        hits = index.top_k(vec, config.per_subquery_k) if score_map else []
        union.update(h.chunk_id for h in hits)
        for cid, score in score_map.items():
            if score > best.get(cid, -math.inf):
                best[cid] = score

    pool = [RetrievalCandidate(chunk_id=cid, best_query_sim=best[cid]) for cid in union]
    pool.sort(key=lambda c: (-c.best_query_sim, c.chunk_id))
    return pool


def filter_candidates(
    pool: list[RetrievalCandidate], config: RetrievalConfig
) -> list[RetrievalCandidate]:
    """Keep candidates with best_query_sim >= theta, order preserved."""
    return [c for c in pool if c.best_query_sim >= config.theta]


def rerank(
    query_text: str,
    filtered: list[RetrievalCandidate],
    cross: CrossEncoderBackend | None,
    get_text,
    notes: list[str] | None = None,
) -> list[RetrievalCandidate]:
    """Score every candidate with the cross-encoder and sort descending.

    ``cross=None`` is the identity reranker (score := best_query_sim); a
    transport failure falls back to the same ordering and records a note.
    Ties break by ascending chunk_id; best_query_sim is never modified.
    """
    if not filtered:
        return []
    scores: list[float]
    if cross is None:
        scores = [c.best_query_sim for c in filtered]
    else:
        try:
            scores = cross.score(query_text, [get_text(c.chunk_id) for c in filtered])
        except TransportError:
            if notes is not None:
                notes.append("rerank-fallback: cross-encoder unavailable, ordered by best_query_sim")
            scores = [c.best_query_sim for c in filtered]
    ranked = [replace(c, rerank_score=float(s)) for c, s in zip(filtered, scores)]
    ranked.sort(key=lambda c: (-c.rerank_score, c.chunk_id))
    return ranked


def select_context(reranked: list[RetrievalCandidate], config: RetrievalConfig) -> ContextSet:
    """The top final_k reranked chunks (all of them when fewer)."""
    take = min(config.final_k, len(reranked))
    return ContextSet(chunks=[c.chunk_id for c in reranked[:take]], k=config.final_k)


def run_pipeline(
    query: Query,
    store: CorpusStore,
    index: VectorIndex,
    embedder: EmbeddingBackend,
    llm: GenerationBackend | None,
    cross: CrossEncoderBackend | None,
    config: RetrievalConfig | None = None,
) -> PipelineResult:
    """The full query -> context pipeline."""
    config = config or RetrievalConfig()
    config.validate()
    notes: list[str] = []

    interpretation = interpret(query, llm if config.decompose else None, embedder)
    if interpretation.decomposition_reason == "underspecified":
        notes.append("decomposition-fallback: backend failed, atomic interpretation")
    if config.expand:
        interpretation = QueryInterpretation(
            intent_vector=interpretation.intent_vector,
            subqueries=[expand(s, llm, embedder, config) for s in interpretation.subqueries],
            decomposition_reason=interpretation.decomposition_reason,
        )

    pool = retrieve_pool(interpretation, index, config, embedder)
    filtered = filter_candidates(pool, config)
    query_text = canonical_query_text(query)
    reranked = rerank(query_text, filtered, cross, lambda cid: store.chunk_by_id(cid).text, notes)
    context = select_context(reranked, config)
    return PipelineResult(
        query_text=query_text,
        interpretation=interpretation,
        pool=pool,
        filtered=filtered,
        reranked=reranked,
        context=context,
        notes=notes,
    )


# -- keyword extraction ------------------------------------------------------


def llm_keywords(text: str, llm: GenerationBackend, count: int) -> list[str]:
    prompt = load_template("extract_keywords").render(count=str(count), text=text)
    raw, _ = generate_json(llm, prompt)
    if not isinstance(raw, list):
        raise BackendProtocolError("keyword reply must be a JSON array")
    return [normalize(str(k)).lower() for k in raw if normalize(str(k))][:count]


def tfidf_terms(plan_text: str, store: CorpusStore, top_n: int = 5) -> list[str]:
    """Top terms of the plan by tf * ln(N/df) over the corpus documents.

    df is floored at 1 so unseen terms get the maximum idf ln(N); ties
    break alphabetically. Terms are lowercased alphabetic tokens.
    """
    plan_tokens = [t.lower() for t in tokenize(normalize(plan_text)) if t.isalpha()]
    if not plan_tokens:
        return []
    tf: dict[str, int] = {}
    for token in plan_tokens:
        tf[token] = tf.get(token, 0) + 1

    docs = store.documents()
    n_docs = max(len(docs), 1)
    df: dict[str, int] = {}
    for doc in docs:
        doc_terms = {t.lower() for t in tokenize(_doc_query_text(doc)) if t.isalpha()}
        for term in tf:
            if term in doc_terms:
                df[term] = df.get(term, 0) + 1

    scored = [
        (term, count * math.log(n_docs / max(df.get(term, 0), 1)))
        for term, count in tf.items()
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return [term for term, score in scored[:top_n] if score > 0] or [
        term for term, _ in scored[:top_n]
    ]


_CAP_TOKEN_RE = re.compile(r"^[A-Z][A-Za-z0-9'-]*$")


def capitalized_spans(text: str, min_len: int = 2) -> list[str]:
    """Named-entity stand-in: spans of >= min_len consecutive capitalized
    tokens, deduplicated case-insensitively."""
    tokens = tokenize(normalize(text))
    spans: list[str] = []
    current: list[str] = []
    for token in tokens + [""]:
        if _CAP_TOKEN_RE.match(token):
            current.append(token)
        else:
            if len(current) >= min_len:
                spans.append(" ".join(current))
            current = []
    seen: set[str] = set()
    out = []
    for span in spans:
        if span.casefold() not in seen:
            seen.add(span.casefold())
            out.append(span)
    return out


# -- variants ----------------------------------------------------------------


@dataclass
class VariantDeps:
    store: CorpusStore
    index: VectorIndex
    embedder: EmbeddingBackend
    llm: GenerationBackend | None = None
    cross: CrossEncoderBackend | None = None
    config: RetrievalConfig = field(default_factory=RetrievalConfig)


@dataclass(frozen=True)
class DocHit:
    doc_id: str
    score: float


def _docs_from_chunk_scores(
    scored: list[tuple[str, float]], store: CorpusStore, limit: int
) -> list[DocHit]:
    best: dict[str, float] = {}
    for chunk_id, score in scored:
        doc_id = store.doc_of_chunk(chunk_id)
        if score > best.get(doc_id, -math.inf):
            best[doc_id] = score
    ranked = sorted(best.items(), key=lambda item: (-item[1], item[0]))
    return [DocHit(doc_id=d, score=s) for d, s in ranked[:limit]]


def _search_docs(query_text: str, deps: VariantDeps) -> list[DocHit]:
    vec = deps.embedder.embed(query_text)
    hits = deps.index.top_k(vec, deps.config.per_subquery_k)
    return _docs_from_chunk_scores(
        [(h.chunk_id, h.score) for h in hits], deps.store, deps.config.final_k
    )


def run_variant(workplan: Document, variant: str, deps: VariantDeps) -> list[DocHit]:
    """Run one of the six retrieval variants, returning the doc-level top-10."""
    if variant not in VARIANTS:
        raise RetrievalError(f"unknown variant {variant!r}")
    plan_text = _doc_query_text(workplan)
    title = normalize(workplan.event_name)

    if variant == "pure_rag":
        return _search_docs(plan_text, deps)

    if variant == "title_only":
        if not title:
            raise RetrievalError("work plan has no title for title_only variant")
        title_vec = deps.embedder.embed(title)
        scored = []
        for doc in deps.store.documents():
            doc_title = normalize(doc.event_name)
            if not doc_title:
                continue
            scored.append((doc.doc_id, cosine(title_vec, deps.embedder.embed(doc_title))))
        scored.sort(key=lambda item: (-item[1], item[0]))
        return [DocHit(doc_id=d, score=s) for d, s in scored[: deps.config.final_k]]

    if variant == "keywords_only":
        if deps.llm is None:
            raise RetrievalError("keywords_only requires a generation backend")
        keywords = llm_keywords(plan_text, deps.llm, count=5)
        return _search_docs(" ".join(keywords) or plan_text, deps)

    if variant == "rule_keywords":
        terms = tfidf_terms(plan_text, deps.store, top_n=5)
        entities = capitalized_spans(plan_text)
        query_text = " ".join(terms + entities) or plan_text
        return _search_docs(query_text, deps)

    if variant == "extended_keywords":
        if deps.llm is None:
            raise RetrievalError("extended_keywords requires a generation backend")
        keywords = llm_keywords(plan_text, deps.llm, count=10)
        return _search_docs(" ".join([title] + keywords).strip() or plan_text, deps)

    # current_best: LLM keywords + title through the full pipeline
    if deps.llm is None:
        raise RetrievalError("current_best requires a generation backend")
    keywords = llm_keywords(plan_text, deps.llm, count=5)
    composite = normalize(" ".join([title] + keywords)) or plan_text
    result = run_pipeline(
        Query.from_text(composite),
        deps.store,
        deps.index,
        deps.embedder,
        deps.llm,
        deps.cross,
        deps.config,
    )
    scored = [(c.chunk_id, c.rerank_score) for c in result.reranked]
    return _docs_from_chunk_scores(scored, deps.store, deps.config.final_k)


def write_run_file(
    path, query_id: str, hits: list[DocHit], variant_tag: str, mode: str = "a"
) -> None:
    """Append one query's ranking in TREC run format:
    ``query_id Q0 doc_id rank score variant_tag``."""
    from pathlib import Path

    with Path(path).open(mode, encoding="utf-8") as handle:
        for rank, hit in enumerate(hits, start=1):
            handle.write(f"{query_id} Q0 {hit.doc_id} {rank} {hit.score:.6f} {variant_tag}\n")
