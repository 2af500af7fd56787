"""HTTP facade over corpus, jobs, feedback, and reports.

Job creation is async: POST /workplans returns immediately and clients
poll GET /jobs/{id}. Every non-2xx response body is a single ApiError
object ``{code, message, detail}``; request ids are echoed in the
``X-Request-Id`` header for trace correlation. State-changing endpoints
honor an ``Idempotency-Key`` header (same key, same result).
"""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import dataclass
from pathlib import Path

from fastapi import BackgroundTasks, FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import agents, orchestrator, retrieval
from .backends import FixtureGenerationBackend, JaccardCrossEncoder, RemoteCrossEncoder, RemoteGenerationBackend
from .corpus import ChunkingPolicy, CorpusStore, Document, load_policy_corpus
from .embedding import MockEmbeddingBackend, RemoteEmbeddingBackend, build_index
from .errors import TransportError
from .orchestrator import (
    Deps,
    FeedbackValidationError,
    JobNotFound,
    JobStore,
    OrchestratorError,
    SmeFeedback,
)


class ConfigError(Exception):
    pass


@dataclass
class ServiceConfig:
    """Flat key/value config; environment variables (HARNESS_<KEY>) override
    file values."""

    store_dir: str = "harness_store/corpus"
    job_store_dir: str = "harness_store/jobs"
    policy_file: str = ""
    backend: str = "mock"  # mock | remote
    dim: int = 64
    embed_url: str = ""
    llm_url: str = ""
    cross_url: str = ""
    tau: float = 0.8
    theta: float = 0.5
    per_subquery_k: int = 50
    final_k: int = 10
    critical_threshold: int = 12
    policy_threshold: float = 0.55
    policy_chunk_tokens: int = 12
    policy_chunk_overlap: int = 3
    bearer_token: str = ""
    host: str = "127.0.0.1"
    port: int = 8350
    console_dir: str = ""

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict | None = None) -> "ServiceConfig":
        values: dict = {}
        if path:
            values.update(_parse_kv_file(Path(path)))
        env = os.environ if env is None else env
        for name in cls.__dataclass_fields__:
            env_key = f"HARNESS_{name.upper()}"
            if env_key in env:
                values[name] = env[env_key]
        config = cls()
        for name, raw in values.items():
            if name not in cls.__dataclass_fields__:
                raise ConfigError(f"unknown config key {name!r}")
            current = getattr(config, name)
            try:
                if isinstance(current, bool):
                    parsed = str(raw).strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(current, int):
                    parsed = int(raw)
                elif isinstance(current, float):
                    parsed = float(raw)
                else:
                    parsed = str(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {name!r}: {raw!r}") from exc
            setattr(config, name, parsed)
        return config


def _parse_kv_file(path: Path) -> dict:
    """Minimal TOML-style ``key = value`` reader (strings, numbers, bools)."""
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or stripped.startswith("["):
            continue
        if "=" not in stripped:
            raise ConfigError(f"bad config line {lineno}: {line!r}")
        key, _, raw = stripped.partition("=")
        raw = raw.strip().strip('"').strip("'")
        values[key.strip()] = raw
    return values


def build_deps(config: ServiceConfig) -> tuple[Deps, JobStore]:
    """Assemble the dependency bundle a running service needs."""
    store = CorpusStore(config.store_dir)
    if config.backend == "mock":
        embedder = MockEmbeddingBackend(dim=config.dim)
        llm = FixtureGenerationBackend()
        cross = JaccardCrossEncoder()
    elif config.backend == "remote":
        embedder = RemoteEmbeddingBackend(config.embed_url, "remote-embed", dim=config.dim)
        llm = RemoteGenerationBackend(config.llm_url)
        cross = RemoteCrossEncoder(config.cross_url) if config.cross_url else JaccardCrossEncoder()
    else:
        raise ConfigError(f"unknown backend {config.backend!r}")
    index = build_index([(c.chunk_id, c.text) for c in store.chunks()], embedder)
    policies = load_policy_corpus(config.policy_file) if config.policy_file else []
    # short windows keep excerpts quotable and subject/policy cosines honest
    policy_chunking = ChunkingPolicy(
        max_tokens=config.policy_chunk_tokens, overlap_tokens=config.policy_chunk_overlap
    )
    policy_index = agents.PolicyIndex(policies, embedder, policy_chunking)
    deps = Deps(
        store=store,
        index=index,
        embedder=embedder,
        llm=llm,
        cross=cross,
        policy_index=policy_index,
        retrieval_config=retrieval.RetrievalConfig(
            tau=config.tau,
            theta=config.theta,
            per_subquery_k=config.per_subquery_k,
            final_k=config.final_k,
        ),
        critical_threshold=config.critical_threshold,
        policy_threshold=config.policy_threshold,
    )
    return deps, JobStore(config.job_store_dir)


class WorkplanBody(BaseModel):
    doc_id: str
    event_name: str = ""
    event_date: str = ""
    location: str = ""
    summary: str = ""
    body: str = ""
    source_tag: str = "workplan"


class FeedbackBody(BaseModel):
    event_grades: dict[str, int] = {}
    hazard_edits: list[dict] = []
    approved: bool = False
    author: str = ""


class QueryBody(BaseModel):
    text: str
    variant: str = "pure_rag"
    k: int = 10
    tau: float | None = None
    theta: float | None = None


def _api_error(code: str, message: str, status: int, detail: str = "", request_id: str = "") -> JSONResponse:
    response = JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "detail": detail},
    )
    if request_id:
        response.headers["X-Request-Id"] = request_id
    return response


class _Idempotency:
    """Same Idempotency-Key -> same recorded response, persisted on disk."""

    def __init__(self, root: Path):
        self.path = root / "idempotency.json"

    def get(self, key: str) -> dict | None:
        if not key or not self.path.exists():
            return None
        return json.loads(self.path.read_text()).get(key)

    def put(self, key: str, value: dict) -> None:
        if not key:
            return
        data = json.loads(self.path.read_text()) if self.path.exists() else {}
        data[key] = value
        self.path.write_text(json.dumps(data))


def create_app(
    deps: Deps,
    job_store: JobStore,
    bearer_token: str = "",
    console_dir: str | Path = "",
) -> FastAPI:
    app = FastAPI(title="harness", docs_url=None, redoc_url=None)
    idempotency = _Idempotency(job_store.root)
    retry = orchestrator.RetryPolicy()

    @app.middleware("http")
    async def request_id_and_auth(request: Request, call_next):
        request_id = request.headers.get("X-Request-Id") or uuid.uuid4().hex[:12]
        if bearer_token and request.url.path != "/healthz":
            header = request.headers.get("Authorization", "")
            if header != f"Bearer {bearer_token}":
                return _api_error("validation", "missing or invalid bearer token", 401, request_id=request_id)
        response = await call_next(request)
        response.headers["X-Request-Id"] = request_id
        return response

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return _api_error("validation", "request body failed validation", 422, detail=str(exc.errors()))

    @app.exception_handler(JobNotFound)
    async def not_found_handler(request: Request, exc: JobNotFound):
        return _api_error("not_found", str(exc), 404)

    @app.exception_handler(FeedbackValidationError)
    async def feedback_validation_handler(request: Request, exc: FeedbackValidationError):
        return _api_error("validation", str(exc), 422)

    @app.exception_handler(OrchestratorError)
    async def orchestrator_handler(request: Request, exc: OrchestratorError):
        return _api_error("conflict", str(exc), 409)

    @app.exception_handler(TransportError)
    async def transport_handler(request: Request, exc: TransportError):
        return _api_error("backend_unavailable", str(exc), 503)

    @app.exception_handler(Exception)
    async def internal_handler(request: Request, exc: Exception):
        return _api_error("internal", "internal error", 500, detail=str(exc))

    @app.get("/healthz")
    async def healthz():
        return {
            "status": "ok",
            "corpus_docs": len(deps.store),
            "index_entries": len(deps.index),
            "policies": len(deps.policy_index),
        }

    @app.post("/workplans", status_code=201)
    async def create_workplan(body: WorkplanBody, background: BackgroundTasks, request: Request):
        key = request.headers.get("Idempotency-Key", "")
        cached = idempotency.get(key)
        if cached is not None:
            return cached
        try:
            workplan = Document.from_dict(body.model_dump())
        except ValueError as exc:
            return _api_error("validation", str(exc), 422)
        job_id = orchestrator.create_job(job_store, workplan)
        background.add_task(orchestrator.run_job, job_store, job_id, deps, retry)
        payload = {"job_id": job_id}
        idempotency.put(key, payload)
        return payload

    @app.get("/jobs/{job_id}")
    async def job_status(job_id: str):
        return job_store.load(job_id).summary_dict()

    @app.get("/jobs/{job_id}/trace")
    async def job_trace(job_id: str):
        return {"job_id": job_id, "trace": [t.to_dict() for t in job_store.load(job_id).trace]}

    @app.post("/jobs/{job_id}/feedback")
    async def job_feedback(job_id: str, body: FeedbackBody, request: Request):
        key = request.headers.get("Idempotency-Key", "")
        cached = idempotency.get(key)
        if cached is not None:
            return cached
        feedback = SmeFeedback(
            job_id=job_id,
            event_grades=body.event_grades,
            hazard_edits=body.hazard_edits,
            approved=body.approved,
            author=body.author,
        )
        state = orchestrator.apply_feedback(job_store, job_id, feedback, deps)
        payload = state.summary_dict()
        idempotency.put(key, payload)
        return payload

    @app.get("/reports/{job_id}")
    async def get_report(job_id: str, version: int | None = None):
        state = job_store.load(job_id)
        if not state.report_versions:
            return _api_error("not_found", f"job {job_id} has no report yet", 404)
        version = version or state.latest_version
        raw = job_store.read_report_bytes(job_id, version)
        return Response(content=raw, media_type="application/json")

    @app.get("/events/{doc_id}")
    async def get_event(doc_id: str):
        try:
            return deps.store.get(doc_id).to_dict()
        except Exception:
            return _api_error("not_found", f"unknown document {doc_id}", 404)

    @app.post("/query")
    async def adhoc_query(body: QueryBody):
        if body.variant not in retrieval.VARIANTS:
            return _api_error("validation", f"unknown variant {body.variant!r}", 422)
        config = retrieval.RetrievalConfig(
            tau=body.tau if body.tau is not None else deps.retrieval_config.tau,
            theta=body.theta if body.theta is not None else deps.retrieval_config.theta,
            per_subquery_k=deps.retrieval_config.per_subquery_k,
            final_k=body.k,
        )
        plan = Document(doc_id="adhoc-query", event_name=body.text, summary=body.text)
        variant_deps = retrieval.VariantDeps(
            store=deps.store,
            index=deps.index,
            embedder=deps.embedder,
            llm=deps.llm,
            cross=deps.cross,
            config=config,
        )
        hits = retrieval.run_variant(plan, body.variant, variant_deps)
        return {
            "variant": body.variant,
            "results": [{"doc_id": h.doc_id, "score": h.score} for h in hits],
        }

    if console_dir and Path(console_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/console", StaticFiles(directory=str(console_dir), html=True), name="console")

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    deps, job_store = build_deps(config)
    app = create_app(deps, job_store, config.bearer_token, config.console_dir)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
