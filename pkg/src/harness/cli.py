"""Command-line interface.

Subcommands: ingest, index build, query, analyze, job status|trace,
feedback, report, eval retrieval|judge|embeddings, serve.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import evaluation, orchestrator, retrieval
from .corpus import ChunkingPolicy, CorpusStore, Document
from .embedding import MockEmbeddingBackend, build_index
from .evaluation import Qrels, QaPair, RunFile, SubstringAgreementJudge
from .backends import FixtureGenerationBackend
from .service import ServiceConfig, build_deps


def _config_from(ctx_params: dict, config_path: str | None) -> ServiceConfig:
    config = ServiceConfig.load(config_path) if config_path else ServiceConfig.load()
    for key in ("store_dir", "job_store_dir", "policy_file", "dim", "tau", "theta"):
        value = ctx_params.get(key)
        if value is not None:
            setattr(config, key, value)
    return config


@click.group()
def main():
    """Incident retrieval and work-plan risk analysis pipeline."""


@main.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--store", "store_dir", default="harness_store/corpus", show_default=True)
@click.option("--chunk-size", default=1024, show_default=True)
@click.option("--overlap", default=128, show_default=True)
def ingest(path, store_dir, chunk_size, overlap):
    """Ingest a JSONL corpus file into the on-disk store."""
    store = CorpusStore(store_dir)
    policy = ChunkingPolicy(max_tokens=chunk_size, overlap_tokens=overlap)
    report = store.ingest(path, policy=policy)
    stats = report.stats
    click.echo(f"ingested {stats.doc_count} documents / {stats.chunk_count} chunks into {store_dir}")
    click.echo(
        "summary words: mean {:.2f} median {:.1f} max {}".format(
            stats.summary_word_stats.mean,
            stats.summary_word_stats.median,
            stats.summary_word_stats.max,
        )
    )
    for lineno, error in report.invalid_lines:
        click.echo(f"invalid line {lineno}: {error}", err=True)
    if report.invalid_lines:
        sys.exit(1)


@main.group()
def index():
    """Vector index operations."""


@index.command("build")
@click.option("--backend", "backend_id", default="mock", show_default=True)
@click.option("--dim", default=64, show_default=True)
@click.option("--store", "store_dir", default="harness_store/corpus", show_default=True)
@click.option("--out", default=None, help="Index basename (default <store>/index)")
def index_build(backend_id, dim, store_dir, out):
    """Embed every chunk and persist the index (.vecs + .meta.json)."""
    if backend_id != "mock":
        raise click.ClickException("only the mock backend is available offline; use serve --config for remote")
    store = CorpusStore(store_dir)
    embedder = MockEmbeddingBackend(dim=dim)
    idx = build_index([(c.chunk_id, c.text) for c in store.chunks()], embedder)
    base = Path(out) if out else Path(store_dir) / "index"
    idx.save(base)
    click.echo(f"indexed {len(idx)} chunks at {base}.vecs / {base}.meta.json")


@main.command()
@click.option("--text", default=None, help="Ad-hoc query text")
@click.option("--plan", "plan_path", default=None, type=click.Path(exists=True), help="Work-plan JSON")
@click.option("--variant", default="pure_rag", type=click.Choice(retrieval.VARIANTS), show_default=True)
@click.option("--tau", default=0.8, show_default=True)
@click.option("--theta", default=0.5, show_default=True)
@click.option("--k", default=10, show_default=True)
@click.option("--store", "store_dir", default="harness_store/corpus", show_default=True)
@click.option("--dim", default=64, show_default=True)
@click.option("--run-out", default=None, help="Append results in TREC run format")
@click.option("--query-id", default=None, help="query_id for the run file row")
def query(text, plan_path, variant, tau, theta, k, store_dir, dim, run_out, query_id):
    """Run one retrieval variant and print the document ranking."""
    if not text and not plan_path:
        raise click.ClickException("provide --text or --plan")
    store = CorpusStore(store_dir)
    embedder = MockEmbeddingBackend(dim=dim)
    idx = build_index([(c.chunk_id, c.text) for c in store.chunks()], embedder)
    if plan_path:
        plan = Document.from_dict(json.loads(Path(plan_path).read_text()))
    else:
        plan = Document(doc_id="adhoc-query", event_name=text, summary=text)
    config = retrieval.RetrievalConfig(tau=tau, theta=theta, final_k=k)
    deps = retrieval.VariantDeps(
        store=store,
        index=idx,
        embedder=embedder,
        llm=FixtureGenerationBackend(),
        cross=None,
        config=config,
    )
    hits = retrieval.run_variant(plan, variant, deps)
    for rank, hit in enumerate(hits, start=1):
        click.echo(f"{rank:2d}. {hit.doc_id}  {hit.score:.6f}")
    if run_out:
        retrieval.write_run_file(run_out, query_id or plan.doc_id, hits, variant)
        click.echo(f"run rows appended to {run_out}")


@main.command()
@click.argument("workplan_path", type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--store", "store_dir", default=None)
@click.option("--job-store", "job_store_dir", default=None)
@click.option("--policies", "policy_file", default=None)
@click.option("--dim", default=None, type=int)
@click.option("--tau", default=None, type=float)
@click.option("--theta", default=None, type=float)
@click.option("--job-id", default=None, help="Override the content-derived job id")
def analyze(workplan_path, config_path, job_id, **overrides):
    """Run the full analysis pipeline on a work plan and write the report."""
    config = _config_from(overrides, config_path)
    deps, job_store = build_deps(config)
    workplan = Document.from_dict(json.loads(Path(workplan_path).read_text()))
    job_id = job_id or orchestrator.deterministic_job_id(workplan)
    orchestrator.create_job(job_store, workplan, job_id=job_id)
    state = orchestrator.run_job(job_store, job_id, deps)
    click.echo(f"job {job_id}: {state.stage}")
    if state.stage == "failed":
        raise click.ClickException(state.error or "job failed")
    report_path = job_store.report_path(job_id, state.latest_version)
    click.echo(f"report: {report_path}")


@main.group()
def job():
    """Inspect jobs."""


@job.command("status")
@click.argument("job_id")
@click.option("--job-store", "job_store_dir", default="harness_store/jobs", show_default=True)
def job_status(job_id, job_store_dir):
    state = orchestrator.JobStore(job_store_dir).load(job_id)
    click.echo(json.dumps(state.summary_dict(), indent=2))


@job.command("trace")
@click.argument("job_id")
@click.option("--job-store", "job_store_dir", default="harness_store/jobs", show_default=True)
def job_trace(job_id, job_store_dir):
    store = orchestrator.JobStore(job_store_dir)
    for entry in orchestrator.get_trace(store, job_id):
        click.echo(
            f"{entry.agent_name:22s} attempt={entry.attempt} status={entry.status:8s} "
            f"in={entry.input_digest[:10]} out={entry.output_digest[:10]} {entry.note}"
        )


@main.command()
@click.argument("job_id")
@click.argument("feedback_path", type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--store", "store_dir", default=None)
@click.option("--job-store", "job_store_dir", default=None)
@click.option("--policies", "policy_file", default=None)
def feedback(job_id, feedback_path, config_path, **overrides):
    """Apply SME feedback from a JSON file to a reported job."""
    config = _config_from(overrides, config_path)
    deps, job_store = build_deps(config)
    raw = json.loads(Path(feedback_path).read_text())
    fb = orchestrator.SmeFeedback(
        job_id=job_id,
        event_grades={k: int(v) for k, v in raw.get("event_grades", {}).items()},
        hazard_edits=raw.get("hazard_edits", []),
        approved=bool(raw.get("approved", False)),
        author=raw.get("author", ""),
    )
    state = orchestrator.apply_feedback(job_store, job_id, fb, deps)
    click.echo(f"job {job_id}: versions {state.report_versions}")


@main.command()
@click.argument("job_id")
@click.option("--format", "fmt", default="json", type=click.Choice(["json", "markdown", "html"]), show_default=True)
@click.option("--version", default=None, type=int)
@click.option("--job-store", "job_store_dir", default="harness_store/jobs", show_default=True)
def report(job_id, fmt, version, job_store_dir):
    """Print a stored report (canonical JSON, markdown, or HTML)."""
    store = orchestrator.JobStore(job_store_dir)
    state = store.load(job_id)
    if not state.report_versions:
        raise click.ClickException(f"job {job_id} has no report")
    version = version or state.latest_version
    path = store.report_path(job_id, version, fmt)
    click.echo(path.read_text(), nl=False)


@main.group(name="eval")
def eval_group():
    """Evaluation harness."""


@eval_group.command("retrieval")
@click.option("--runs", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--qrels", "qrels_path", required=True, type=click.Path(exists=True))
@click.option("--k", default=5, show_default=True)
@click.option("--min-grade", default=1, show_default=True, help="Minimum grade counted relevant")
@click.option("--csv-out", default=None)
def eval_retrieval(runs, qrels_path, k, min_grade, csv_out):
    """Score run files against qrels: P@k, R@k, F1@k (mean +/- std)."""
    qrels = Qrels.load(qrels_path)
    rows = []
    for run_path in runs:
        run = RunFile.load(run_path)
        rows.append(evaluation.evaluate_run(run, qrels, k=k, min_relevant_grade=min_grade))
    rows.sort(key=lambda r: -r.f1_at_k.mean)
    click.echo(evaluation.metrics_markdown(rows, k=k))
    for row in rows:
        if row.excluded_queries:
            click.echo(f"note: {row.variant_tag} excluded queries with no relevant docs: {row.excluded_queries}")
    if csv_out:
        Path(csv_out).write_text(evaluation.metrics_csv(rows, k=k))
        click.echo(f"csv written to {csv_out}")


@eval_group.command("judge")
@click.option("--reports", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--workplan", "workplan_path", default=None, type=click.Path(exists=True))
def eval_judge(reports, workplan_path):
    """Rubric-score rendered reports with the judge backend."""
    judge_backend = FixtureGenerationBackend()
    workplan_text = Path(workplan_path).read_text() if workplan_path else ""
    for report_path in reports:
        scores = evaluation.judge_report(Path(report_path).read_text(), workplan_text, judge_backend)
        click.echo(f"{report_path}:")
        for name, value in scores.to_dict().items():
            if name != "justifications":
                click.echo(f"  {name}: {value}")


@eval_group.command("embeddings")
@click.option("--backends", default="mock:64", show_default=True, help="Comma-separated backend:dim list")
@click.option("--qa", "qa_path", required=True, type=click.Path(exists=True))
@click.option("--store", "store_dir", default="harness_store/corpus", show_default=True)
@click.option("--csv-out", default=None)
def eval_embeddings(backends, qa_path, store_dir, csv_out):
    """Benchmark embedding backends: correctness %% and mean query time."""
    store = CorpusStore(store_dir)
    qa = [
        QaPair(r["question"], r["reference_answer"], r["source_doc_id"])
        for r in (json.loads(line) for line in Path(qa_path).read_text().splitlines() if line.strip())
    ]
    backend_objs = []
    for spec_str in backends.split(","):
        name, _, dim = spec_str.strip().partition(":")
        if name != "mock":
            raise click.ClickException("offline benchmark supports mock backends; configure remote via serve")
        backend_objs.append(MockEmbeddingBackend(dim=int(dim or 64), backend_id=f"mock-{dim or 64}"))
    rows = evaluation.benchmark_embeddings(
        qa, backend_objs, SubstringAgreementJudge(), store, FixtureGenerationBackend()
    )
    click.echo(evaluation.benchmark_markdown(rows))
    if csv_out:
        Path(csv_out).write_text(evaluation.benchmark_csv(rows))


@main.command()
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
def serve(config_path):
    """Start the HTTP service."""
    from .service import serve as run_service

    config = ServiceConfig.load(config_path)
    click.echo(f"serving on {config.host}:{config.port}")
    run_service(config)


if __name__ == "__main__":
    main()
