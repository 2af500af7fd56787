"""Job orchestration: the fixed agent sequence with retries, tracing, and
the SME feedback loop.

A job is an append-only JSONL event log; :class:`JobState` is a fold over
it, so every intermediate output and every attempt survives for audit.
Stage order: created -> summarized -> retrieved -> hazards_extracted ->
coverage_done -> fmea_done -> policies_done -> reported (failed terminal).
"""

from __future__ import annotations

import json
import time
import uuid
from dataclasses import dataclass, field, asdict
from pathlib import Path

from filelock import FileLock

from . import agents, reporting, retrieval
from .backends import CrossEncoderBackend, GenerationBackend
from .canonical import digest_of, sha256_hex, canonical_json_bytes
from .corpus import CorpusStore, Document
from .embedding import EmbeddingBackend, VectorIndex
from .errors import AgentError, BackendProtocolError, TransportError

STAGES = (
    "created",
    "summarized",
    "retrieved",
    "hazards_extracted",
    "coverage_done",
    "fmea_done",
    "policies_done",
    "reported",
)

VALID_GRADES = (0, 1, 2)


class OrchestratorError(Exception):
    pass


class JobNotFound(OrchestratorError):
    pass


class FeedbackValidationError(OrchestratorError):
    pass


@dataclass(frozen=True)
class TraceEntry:
    agent_name: str
    attempt: int
    started_at: float
    ended_at: float
    input_digest: str
    output_digest: str
    status: str  # "ok" | "retried" | "failed"
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SmeFeedback:
    job_id: str
    event_grades: dict[str, int] = field(default_factory=dict)
    hazard_edits: list[dict] = field(default_factory=list)
    approved: bool = False
    author: str = ""
    at: float = 0.0

    def validate(self) -> None:
        for doc_id, grade in self.event_grades.items():
            if grade not in VALID_GRADES:
                raise FeedbackValidationError(
                    f"grade {grade!r} for {doc_id!r} outside the 0-2 scale"
                )
        for edit in self.hazard_edits:
            if edit.get("op") not in ("add", "remove", "modify"):
                raise FeedbackValidationError(f"unknown hazard edit op {edit.get('op')!r}")
            if not str(edit.get("hazard", "")).strip():
                raise FeedbackValidationError("hazard edit requires a hazard text")

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "event_grades": dict(self.event_grades),
            "hazard_edits": [dict(e) for e in self.hazard_edits],
            "approved": self.approved,
            "author": self.author,
            "at": self.at,
        }


@dataclass
class JobState:
    job_id: str
    workplan: Document
    stage: str = "created"
    outputs: dict = field(default_factory=dict)
    trace: list[TraceEntry] = field(default_factory=list)
    feedback: list[SmeFeedback] = field(default_factory=list)
    report_versions: list[int] = field(default_factory=list)
    error: str | None = None

    @property
    def latest_version(self) -> int:
        return max(self.report_versions, default=0)

    def summary_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "workplan_doc_id": self.workplan.doc_id,
            "stage": self.stage,
            "report_versions": list(self.report_versions),
            "error": self.error,
            "approved": any(f.approved for f in self.feedback),
            "feedback_count": len(self.feedback),
        }


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.25
    sleeper: object = time.sleep

    def delay(self, attempt: int) -> float:
        return self.backoff_base * (2 ** (attempt - 1))


@dataclass
class Deps:
    """Everything a job needs: corpus, index, backends, policy corpus."""

    store: CorpusStore
    index: VectorIndex
    embedder: EmbeddingBackend
    llm: GenerationBackend
    policy_index: agents.PolicyIndex
    cross: CrossEncoderBackend | None = None
    retrieval_config: retrieval.RetrievalConfig = field(
        default_factory=retrieval.RetrievalConfig
    )
    critical_threshold: int = agents.CRITICAL_RISK_THRESHOLD
    policy_threshold: float = agents.POLICY_MATCH_THRESHOLD
    narrative: bool = True


class JobStore:
    """Append-only per-job event logs under ``root/jobs``.

    Appends are serialized per job with a file lock; readers fold the
    committed prefix. Reports live under ``root/reports`` and SME grades
    are exported to ``root/feedback_qrels.txt``.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "jobs").mkdir(parents=True, exist_ok=True)
        (self.root / "reports").mkdir(parents=True, exist_ok=True)

    def _events_path(self, job_id: str) -> Path:
        return self.root / "jobs" / f"{job_id}.events.jsonl"

    def _lock(self, job_id: str) -> FileLock:
        return FileLock(str(self._events_path(job_id)) + ".lock")

    def exists(self, job_id: str) -> bool:
        return self._events_path(job_id).exists()

    def job_ids(self) -> list[str]:
        return sorted(
            p.name.removesuffix(".events.jsonl")
            for p in (self.root / "jobs").glob("*.events.jsonl")
        )

    def append(self, job_id: str, event_type: str, payload: dict) -> None:
        record = {"type": event_type, "at": time.time(), "payload": payload}
        line = json.dumps(record, ensure_ascii=False) + "\n"
        with self._lock(job_id):
            with self._events_path(job_id).open("a", encoding="utf-8") as handle:
                handle.write(line)
                handle.flush()

    def events(self, job_id: str) -> list[dict]:
        path = self._events_path(job_id)
        if not path.exists():
            raise JobNotFound(f"unknown job {job_id!r}")
        out = []
        with path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    out.append(json.loads(line))
        return out

    def load(self, job_id: str) -> JobState:
        """Fold the event log into the current job state.

        The folded stage is monotone along the declared order (reruns
        update outputs without regressing the visible stage); ``failed``
        is terminal and reachable from anywhere.
        """
        events = self.events(job_id)
        state: JobState | None = None
        for event in events:
            payload = event["payload"]
            if event["type"] == "created":
                state = JobState(
                    job_id=payload["job_id"],
                    workplan=Document.from_dict(payload["workplan"]),
                )
            elif state is None:
                raise OrchestratorError(f"corrupt event log for {job_id!r}")
            elif event["type"] == "stage_completed":
                state.outputs[payload["stage"]] = payload["output"]
                if (
                    state.stage != "failed"
                    and STAGES.index(payload["stage"]) > STAGES.index(state.stage)
                ):
                    state.stage = payload["stage"]
            elif event["type"] == "trace":
                state.trace.append(TraceEntry(**payload))
            elif event["type"] == "feedback":
                state.feedback.append(SmeFeedback(**payload))
            elif event["type"] == "report_version":
                state.report_versions.append(payload["version"])
                if state.stage != "failed":
                    state.stage = "reported"
            elif event["type"] == "failed":
                state.stage = "failed"
                state.error = payload["error"]
        if state is None:
            raise OrchestratorError(f"empty event log for {job_id!r}")
        return state

    def report_path(self, job_id: str, version: int, fmt: str = "json") -> Path:
        suffix = {"json": "report.json", "markdown": "report.md", "html": "report.html"}[fmt]
        return self.root / "reports" / f"{job_id}.v{version}.{suffix}"

    def write_report(self, report: reporting.VulnerabilityReport) -> Path:
        """Persist all three renderings; versions are never overwritten."""
        json_path = self.report_path(report.job_id, report.version, "json")
        if json_path.exists():
            raise OrchestratorError(f"report version exists: {json_path.name}")
        for fmt in reporting.RENDER_FORMATS:
            self.report_path(report.job_id, report.version, fmt).write_bytes(
                reporting.render(report, fmt)
            )
        return json_path

    def read_report_bytes(self, job_id: str, version: int) -> bytes:
        path = self.report_path(job_id, version, "json")
        if not path.exists():
            raise JobNotFound(f"no report {job_id} v{version}")
        return path.read_bytes()

    def export_qrels(self, query_id: str, grades: dict[str, int]) -> None:
        path = self.root / "feedback_qrels.txt"
        with path.open("a", encoding="utf-8") as handle:
            for doc_id in sorted(grades):
                handle.write(f"{query_id} 0 {doc_id} {grades[doc_id]}\n")

    def append_hazard_pairs(self, pairs: list[agents.HazardControlPair]) -> None:
        path = self.root / "hazard_pairs.jsonl"
        with path.open("a", encoding="utf-8") as handle:
            for pair in pairs:
                handle.write(json.dumps(pair.to_dict(), ensure_ascii=False) + "\n")


def deterministic_job_id(workplan: Document) -> str:
    """Content-derived id: the same plan always maps to the same job id."""
    return "job-" + sha256_hex(canonical_json_bytes(workplan.to_dict()))[:16]


def create_job(
    job_store: JobStore, workplan: Document, job_id: str | None = None
) -> str:
    """Validate the work plan and persist a job at stage ``created``."""
    workplan.validate()
    job_id = job_id or ("job-" + uuid.uuid4().hex[:16])
    if job_store.exists(job_id):
        raise OrchestratorError(f"job {job_id!r} already exists")
    job_store.append(
        job_id, "created", {"job_id": job_id, "workplan": workplan.to_dict()}
    )
    return job_id


class _StageFailure(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


class _StageRunner:
    def __init__(self, job_store: JobStore, job_id: str, retry: RetryPolicy):
        self.job_store = job_store
        self.job_id = job_id
        self.retry = retry

    def run(self, agent_name: str, stage: str, fn, inputs, note: str = ""):
        """Execute one agent with transport retries and full tracing."""
        input_digest = digest_of(inputs)
        for attempt in range(1, self.retry.max_attempts + 1):
            started = time.time()
            meta: dict = {}
            try:
                result, output_payload = fn(meta)
            except TransportError as exc:
                status = "retried" if attempt < self.retry.max_attempts else "failed"
                self._trace(agent_name, attempt, started, input_digest, "", status, str(exc))
                if attempt == self.retry.max_attempts:
                    raise _StageFailure(stage, f"{agent_name}: {exc}") from exc
                self.retry.sleeper(self.retry.delay(attempt))
                continue
            except (AgentError, BackendProtocolError) as exc:
                self._trace(agent_name, attempt, started, input_digest, "", "failed", str(exc))
                raise _StageFailure(stage, f"{agent_name}: {exc}") from exc
            extra = f" repairs={meta['repairs']}" if meta.get("repairs") else ""
            extra += f" {meta['fallback']}" if meta.get("fallback") else ""
            if meta.get("templates"):
                extra += " templates=" + ",".join(meta["templates"])
            self._trace(
                agent_name,
                attempt,
                started,
                input_digest,
                digest_of(output_payload),
                "ok",
                (note + extra).strip(),
            )
            self.job_store.append(
                self.job_id, "stage_completed", {"stage": stage, "output": output_payload}
            )
            return result
        raise AssertionError("unreachable")

    def _trace(self, agent_name, attempt, started, input_digest, output_digest, status, note):
        entry = TraceEntry(
            agent_name=agent_name,
            attempt=attempt,
            started_at=started,
            ended_at=time.time(),
            input_digest=input_digest,
            output_digest=output_digest,
            status=status,
            note=note,
        )
        self.job_store.append(self.job_id, "trace", entry.to_dict())


def _doc_text(doc: Document) -> str:
    return " ".join(p for p in (doc.summary, doc.body) if p)


def _retrieval_output(result: retrieval.PipelineResult, store: CorpusStore) -> dict:
    by_id = {c.chunk_id: c for c in result.reranked}
    context_rows = []
    doc_best: dict[str, float] = {}
    for chunk_id in result.context.chunks:
        cand = by_id[chunk_id]
        doc_id = store.doc_of_chunk(chunk_id)
        context_rows.append(
            {
                "chunk_id": chunk_id,
                "doc_id": doc_id,
                "rerank_score": cand.rerank_score,
                "best_query_sim": cand.best_query_sim,
            }
        )
        if cand.rerank_score is not None:
            doc_best[doc_id] = max(doc_best.get(doc_id, float("-inf")), cand.rerank_score)
    events = [
        {"doc_id": doc_id, "score": score, "grade": None, "excluded": False}
        for doc_id, score in sorted(doc_best.items(), key=lambda kv: (-kv[1], kv[0]))
    ]
    return {
        "query_text": result.query_text,
        "subqueries": [
            {
                "text": sub.text,
                "expansions": [
                    {"text": e.text, "sim_to_parent": e.sim_to_parent}
                    for e in sub.expansions
                ],
            }
            for sub in result.interpretation.subqueries
        ],
        "decomposition_reason": result.interpretation.decomposition_reason,
        "context": context_rows,
        "events": events,
        "notes": list(result.notes),
    }


def _analysis_stages(
    runner: _StageRunner,
    state: JobState,
    deps: Deps,
    retrieval_output: dict,
    edits: list[dict] | None = None,
) -> dict:
    """Stages hazards_extracted .. policies_done over a retrieval output.

    Returns the accumulating outputs dict (also persisted per stage).
    Used by both the initial run and feedback-triggered reruns.
    """
    outputs = dict(state.outputs)
    outputs["retrieved"] = retrieval_output
    summary = agents.WorkPlanSummary(
        scope=outputs["summarized"]["scope"],
        components=outputs["summarized"]["components"],
        operational_context=outputs["summarized"]["operational_context"],
        controls_mentioned=outputs["summarized"]["controls_mentioned"],
    )

    # hazards_extracted: mine hazard-control pairs from each context event
    event_docs = [
        row["doc_id"]
        for row in retrieval_output["events"]
        if not row.get("excluded", False)
    ]

    def do_extract(meta):
        pairs: list[agents.HazardControlPair] = []
        for doc_id in event_docs:
            doc = deps.store.get(doc_id)
            pairs.extend(
                agents.extract_pairs(_doc_text(doc), doc_id, deps.llm, meta)
            )
        pairs = _apply_hazard_edits(pairs, edits or [], state.workplan.doc_id)
        return pairs, {"pairs": [p.to_dict() for p in pairs]}

    pairs = runner.run(
        "hazard_extraction", "hazards_extracted", do_extract, {"event_docs": event_docs}
    )
    runner.job_store.append_hazard_pairs(pairs)
    outputs["hazards_extracted"] = {"pairs": [p.to_dict() for p in pairs]}

    hazards = [p.hazard for p in pairs]

    def do_coverage(meta):
        report = agents.match_coverage(
            hazards, summary.controls_mentioned, deps.embedder
        )
        return report, report.to_dict()

    coverage = runner.run(
        "control_analysis",
        "coverage_done",
        do_coverage,
        {"hazards": hazards, "controls": summary.controls_mentioned},
    )
    outputs["coverage_done"] = coverage.to_dict()

    def do_fmea(meta):
        modes = agents.run_fmea(
            summary, hazards, deps.llm, deps.critical_threshold, meta
        )
        return modes, {"modes": [m.to_dict() for m in modes]}

    modes = runner.run(
        "failure_mode_analysis", "fmea_done", do_fmea, {"hazards": hazards}
    )
    outputs["fmea_done"] = {"modes": [m.to_dict() for m in modes]}

    subjects = (
        list(coverage.uncovered)
        + [entry.hazard for entry in coverage.weak]
        + [m for mode in modes if mode.critical for m in mode.mitigations]
    )

    def do_policies(meta):
        result = agents.match_policies(subjects, deps.policy_index, deps.policy_threshold)
        payload = {
            "matches": [m.to_dict() for m in result.matches],
            "unmapped": list(result.unmapped),
        }
        return result, payload

    policy_result = runner.run(
        "policy_integration", "policies_done", do_policies, {"subjects": subjects}
    )
    outputs["policies_done"] = {
        "matches": [m.to_dict() for m in policy_result.matches],
        "unmapped": list(policy_result.unmapped),
    }
    return outputs


def _report_stage(
    runner: _StageRunner,
    state: JobState,
    deps: Deps,
    outputs: dict,
    version: int,
) -> reporting.VulnerabilityReport:
    def do_report(meta):
        narrative = None
        if deps.narrative:
            agents._note_template(meta, "report_narrative")
        context_rows = outputs["retrieved"]["context"]
        active_rows = [
            row
            for row in context_rows
            if not _is_excluded(row["doc_id"], outputs["retrieved"]["events"])
        ]
        if deps.narrative and active_rows:
            draft = reporting.assemble(
                state.job_id,
                outputs,
                version=version,
                workplan_doc_id=state.workplan.doc_id,
            )
            doc_ids = list(dict.fromkeys(row["doc_id"] for row in active_rows))
            texts = [deps.store.chunk_by_id(row["chunk_id"]).text for row in active_rows]
            narrative = reporting.generate_narrative(draft, doc_ids, texts, deps.llm)
        report = reporting.assemble(
            state.job_id,
            outputs,
            version=version,
            narrative=narrative,
            workplan_doc_id=state.workplan.doc_id,
        )
        runner.job_store.write_report(report)
        return report, {"version": version, "report_id": report.report_id}

    report = runner.run(
        "report_generation",
        "reported",
        do_report,
        {"version": version, "stages": sorted(outputs)},
    )
    runner.job_store.append(state.job_id, "report_version", {"version": version})
    return report


def _is_excluded(doc_id: str, events: list[dict]) -> bool:
    return any(e["doc_id"] == doc_id and e.get("excluded") for e in events)


def run_job(
    job_store: JobStore,
    job_id: str,
    deps: Deps,
    retry: RetryPolicy | None = None,
) -> JobState:
    """Execute the full stage sequence for a job at stage ``created``.

    Retryable (transport) errors are retried with exponential backoff and
    every attempt is traced; hard agent errors fail the stage and the job,
    preserving all partial outputs.
    """
    retry = retry or RetryPolicy()
    state = job_store.load(job_id)
    if state.stage != "created":
        raise OrchestratorError(
            f"job {job_id!r} is at stage {state.stage!r}, not runnable"
        )
    runner = _StageRunner(job_store, job_id, retry)

    try:
        def do_summary(meta):
            summary = agents.summarize(state.workplan, deps.llm, meta)
            return summary, summary.to_dict()

        runner.run(
            "summarization", "summarized", do_summary, state.workplan.to_dict()
        )
        state = job_store.load(job_id)

        def do_retrieval(meta):
            if deps.retrieval_config.decompose:
                agents._note_template(meta, "decompose_query")
            if deps.retrieval_config.expand:
                agents._note_template(meta, "expand_subquery")
            result = retrieval.run_pipeline(
                retrieval.Query.from_doc(state.workplan),
                deps.store,
                deps.index,
                deps.embedder,
                deps.llm,
                deps.cross,
                deps.retrieval_config,
            )
            payload = _retrieval_output(result, deps.store)
            return payload, payload

        retrieval_output = runner.run(
            "smart_retrieval", "retrieved", do_retrieval, {"workplan": state.workplan.doc_id}
        )
        state = job_store.load(job_id)

        outputs = _analysis_stages(runner, state, deps, retrieval_output)
        _report_stage(runner, state, deps, outputs, version=1)
    except _StageFailure as failure:
        job_store.append(
            job_id, "failed", {"stage": failure.stage, "error": str(failure)}
        )
        return job_store.load(job_id)
    return job_store.load(job_id)


def _apply_hazard_edits(
    pairs: list[agents.HazardControlPair], edits: list[dict], workplan_id: str
) -> list[agents.HazardControlPair]:
    out = list(pairs)
    for edit in edits:
        op = edit["op"]
        hazard = str(edit["hazard"]).strip()
        if op == "add":
            out.append(
                agents.HazardControlPair(
                    hazard=hazard,
                    control=str(edit["control"]).strip() if edit.get("control") else None,
                    provenance_doc_id=workplan_id,
                    confidence=1.0,
                )
            )
        elif op == "remove":
            out = [p for p in out if p.hazard.casefold() != hazard.casefold()]
        elif op == "modify":
            new_hazard = str(edit.get("new_hazard", hazard)).strip()
            new_control = edit.get("control")
            replaced = []
            for pair in out:
                if pair.hazard.casefold() == hazard.casefold():
                    replaced.append(
                        agents.HazardControlPair(
                            hazard=new_hazard or pair.hazard,
                            control=(
                                str(new_control).strip()
                                if new_control
                                else pair.control
                            ),
                            provenance_doc_id=pair.provenance_doc_id,
                            confidence=pair.confidence,
                        )
                    )
                else:
                    replaced.append(pair)
            out = replaced
    return out


def apply_feedback(
    job_store: JobStore,
    job_id: str,
    feedback: SmeFeedback,
    deps: Deps,
    retry: RetryPolicy | None = None,
) -> JobState:
    """Record SME feedback; rerun analysis when it changes the inputs.

    Grades export as qrels rows keyed by the workplan doc_id. If any
    context event is graded 0 or any hazard is edited, stages from
    hazards_extracted re-run with graded-0 documents excluded and the
    edits applied, producing a new report version. Approval-only feedback
    records the approval and changes nothing else.
    """
    retry = retry or RetryPolicy()
    state = job_store.load(job_id)
    if state.stage != "reported":
        raise OrchestratorError(
            f"job {job_id!r} is at stage {state.stage!r}; feedback requires 'reported'"
        )
    feedback.job_id = job_id
    feedback.at = feedback.at or time.time()
    feedback.validate()

    job_store.append(job_id, "feedback", feedback.to_dict())
    if feedback.event_grades:
        job_store.export_qrels(state.workplan.doc_id, feedback.event_grades)

    retrieval_output = json.loads(json.dumps(state.outputs["retrieved"]))
    event_ids = {row["doc_id"] for row in retrieval_output["events"]}
    excluded = {
        doc_id
        for doc_id, grade in feedback.event_grades.items()
        if grade == 0 and doc_id in event_ids
    }
    for row in retrieval_output["events"]:
        grade = feedback.event_grades.get(row["doc_id"])
        if grade is not None:
            row["grade"] = grade
        if row["doc_id"] in excluded:
            row["excluded"] = True

    needs_rerun = bool(excluded) or bool(feedback.hazard_edits)
    if not needs_rerun:
        if feedback.event_grades:
            # grades recorded on the stored retrieval output for audit;
            # no rerun, no new report version
            job_store.append(
                job_id,
                "stage_completed",
                {"stage": "retrieved", "output": retrieval_output},
            )
        return job_store.load(job_id)

    runner = _StageRunner(job_store, job_id, retry)
    state_for_rerun = job_store.load(job_id)
    try:
        job_store.append(
            job_id, "stage_completed", {"stage": "retrieved", "output": retrieval_output}
        )
        outputs = _analysis_stages(
            runner, state_for_rerun, deps, retrieval_output, edits=feedback.hazard_edits
        )
        _report_stage(
            runner, state_for_rerun, deps, outputs, version=state.latest_version + 1
        )
    except _StageFailure as failure:
        job_store.append(job_id, "failed", {"stage": failure.stage, "error": str(failure)})
    return job_store.load(job_id)


def get_trace(job_store: JobStore, job_id: str) -> list[TraceEntry]:
    """Full ordered trace for a job; unknown jobs raise JobNotFound."""
    return job_store.load(job_id).trace
