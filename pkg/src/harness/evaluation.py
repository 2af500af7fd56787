"""Retrieval and report evaluation: pooled judgments, P@k / R@k / F1@k
with mean +/- population std, the rubric judge, and the embedding
benchmark protocol.

File formats are plain-text TREC conventions so third-party IR tools can
cross-check: qrels rows are ``query_id 0 doc_id grade`` and run rows are
``query_id Q0 doc_id rank score variant_tag``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .backends import GenerationBackend, generate_json, load_template
from .corpus import CorpusStore, normalize
from .embedding import EmbeddingBackend, build_index
from .errors import TransportError

GRADES = (0, 1, 2)

JUDGE_CRITERIA = {
    "clarity": "use of technical terms",
    "completeness": "coverage of hazards, lessons, and mitigations",
    "usefulness": "support for decision-making",
    "accuracy": "factual grounding",
    "specificity": "relevance to the work plan",
}


class EvaluationError(Exception):
    pass


# -- qrels ---------------------------------------------------------------------


class Qrels:
    """Graded relevance judgments; one grade per (query_id, doc_id)."""

    def __init__(self, rows: dict[tuple[str, str], int] | None = None):
        self.rows: dict[tuple[str, str], int] = {}
        for key, grade in (rows or {}).items():
            self.add(key[0], key[1], grade)

    def add(self, query_id: str, doc_id: str, grade: int) -> None:
        if grade not in GRADES:
            raise EvaluationError(f"grade {grade!r} outside the 0-2 scale")
        self.rows[(query_id, doc_id)] = grade

    def grade(self, query_id: str, doc_id: str) -> int | None:
        return self.rows.get((query_id, doc_id))

    def query_ids(self) -> list[str]:
        return sorted({q for q, _ in self.rows})

    def relevant_docs(self, query_id: str, min_grade: int = 1) -> set[str]:
        return {
            d for (q, d), g in self.rows.items() if q == query_id and g >= min_grade
        }

    @classmethod
    def load(cls, path: str | Path) -> "Qrels":
        qrels = cls()
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise EvaluationError(f"bad qrels line {lineno}: {line!r}")
            query_id, _, doc_id, grade = parts
            # later rows overwrite earlier ones (one grade per pair)
            qrels.add(query_id, doc_id, int(grade))
        return qrels

    def save(self, path: str | Path) -> None:
        lines = [
            f"{q} 0 {d} {g}" for (q, d), g in sorted(self.rows.items())
        ]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# -- run files -------------------------------------------------------------------


@dataclass(frozen=True)
class RunRow:
    query_id: str
    doc_id: str
    rank: int
    score: float


class RunFile:
    """One retrieval variant's ranked results across queries."""

    def __init__(self, variant_tag: str):
        self.variant_tag = variant_tag
        self._by_query: dict[str, list[RunRow]] = {}

    def add(self, query_id: str, doc_id: str, rank: int, score: float) -> None:
        self._by_query.setdefault(query_id, []).append(
            RunRow(query_id, doc_id, rank, float(score))
        )

    def add_ranking(self, query_id: str, docs_scores: list[tuple[str, float]]) -> None:
        for rank, (doc_id, score) in enumerate(docs_scores, start=1):
            self.add(query_id, doc_id, rank, score)

    def query_ids(self) -> list[str]:
        return sorted(self._by_query)

    def ranking(self, query_id: str) -> list[RunRow]:
        rows = sorted(self._by_query.get(query_id, []), key=lambda r: r.rank)
        return rows

    def top(self, query_id: str, k: int) -> list[RunRow]:
        return self.ranking(query_id)[:k]

    def validate(self) -> None:
        for query_id, rows in self._by_query.items():
            rows = self.ranking(query_id)
            ranks = [r.rank for r in rows]
            if ranks != list(range(1, len(rows) + 1)):
                raise EvaluationError(f"ranks not 1-based contiguous for {query_id!r}")
            scores = [r.score for r in rows]
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise EvaluationError(f"scores increase with rank for {query_id!r}")
            docs = [r.doc_id for r in rows]
            if len(set(docs)) != len(docs):
                raise EvaluationError(f"duplicate doc in ranking for {query_id!r}")

    @classmethod
    def load(cls, path: str | Path) -> "RunFile":
        run = cls(variant_tag=Path(path).stem)
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise EvaluationError(f"bad run line {lineno}: {line!r}")
            query_id, _, doc_id, rank, score, tag = parts
            run.variant_tag = tag
            run.add(query_id, doc_id, int(rank), float(score))
        run.validate()
        return run

    def save(self, path: str | Path) -> None:
        lines = []
        for query_id in self.query_ids():
            for row in self.ranking(query_id):
                lines.append(
                    f"{row.query_id} Q0 {row.doc_id} {row.rank} {row.score:.6f} {self.variant_tag}"
                )
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# -- pooling ---------------------------------------------------------------------


def pool(
    runs: list[RunFile], depth: int = 10, cap_per_query: int = 25
) -> list[tuple[str, str]]:
    """Pairs to annotate: per query, the union of top-``depth`` docs across
    runs, deduplicated, capped at ``cap_per_query`` in round-robin-by-rank
    first-appearance order across the runs."""
    if not runs:
        raise EvaluationError("pooling requires at least one run")
    queries: list[str] = []
    for run in runs:
        for query_id in run.query_ids():
            if query_id not in queries:
                queries.append(query_id)

    pairs: list[tuple[str, str]] = []
    for query_id in queries:
        seen: set[str] = set()
        for rank in range(1, depth + 1):
            for run in runs:
                if len(seen) >= cap_per_query:
                    break
                rows = run.top(query_id, depth)
                if rank <= len(rows):
                    doc_id = rows[rank - 1].doc_id
                    if doc_id not in seen:
                        seen.add(doc_id)
                        pairs.append((query_id, doc_id))
            if len(seen) >= cap_per_query:
                break
    return pairs


# -- precision / recall / F1 ------------------------------------------------------


def precision_at_k(
    run: RunFile, qrels: Qrels, k: int = 5, min_relevant_grade: int = 1
) -> dict[str, float]:
    """Per-query |relevant in top-k| / k; unjudged docs count non-relevant."""
    values: dict[str, float] = {}
    for query_id in qrels.query_ids():
        rows = run.top(query_id, k)
        if not rows:
            raise EvaluationError(f"run does not cover query {query_id!r}")
        hits = sum(
            1
            for row in rows
            if (qrels.grade(query_id, row.doc_id) or 0) >= min_relevant_grade
        )
        values[query_id] = hits / k
    return values


def recall_at_k(
    run: RunFile, qrels: Qrels, k: int = 5, min_relevant_grade: int = 1
) -> tuple[dict[str, float], list[str]]:
    """Per-query |relevant in top-k| / |relevant|; queries with zero
    relevant docs are excluded and reported, never divided by zero."""
    values: dict[str, float] = {}
    excluded: list[str] = []
    for query_id in qrels.query_ids():
        relevant = qrels.relevant_docs(query_id, min_relevant_grade)
        if not relevant:
            excluded.append(query_id)
            continue
        rows = run.top(query_id, k)
        if not rows:
            raise EvaluationError(f"run does not cover query {query_id!r}")
        hits = sum(1 for row in rows if row.doc_id in relevant)
        values[query_id] = hits / len(relevant)
    return values, excluded


def f1_at_k(p: float, r: float) -> float:
    """Harmonic mean 2pr/(p+r); zero when both inputs are zero."""
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


@dataclass(frozen=True)
class AggregateStat:
    mean: float
    std: float

    def __str__(self) -> str:
        return f"{self.mean:.3f} ± {self.std:.3f}"


def aggregate(values: list[float]) -> AggregateStat:
    """Arithmetic mean and population standard deviation."""
    if not values:
        raise EvaluationError("cannot aggregate zero values")
    mean = sum(values) / len(values)
    variance = sum((v - mean) ** 2 for v in values) / len(values)
    return AggregateStat(mean=mean, std=variance**0.5)


@dataclass(frozen=True)
class MetricRow:
    variant_tag: str
    p_at_k: AggregateStat
    r_at_k: AggregateStat
    f1_at_k: AggregateStat
    excluded_queries: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "variant_tag": self.variant_tag,
            "p_at_5": str(self.p_at_k),
            "r_at_5": str(self.r_at_k),
            "f1_at_5": str(self.f1_at_k),
        }


def evaluate_run(
    run: RunFile, qrels: Qrels, k: int = 5, min_relevant_grade: int = 1
) -> MetricRow:
    p_values = precision_at_k(run, qrels, k, min_relevant_grade)
    r_values, excluded = recall_at_k(run, qrels, k, min_relevant_grade)
    common = [q for q in p_values if q in r_values]
    f1_values = [f1_at_k(p_values[q], r_values[q]) for q in common]
    return MetricRow(
        variant_tag=run.variant_tag,
        p_at_k=aggregate([p_values[q] for q in common]),
        r_at_k=aggregate([r_values[q] for q in common]),
        f1_at_k=aggregate(f1_values),
        excluded_queries=excluded,
    )


def metrics_markdown(rows: list[MetricRow], k: int = 5) -> str:
    lines = [
        f"| System Variant | P@{k} | R@{k} | F1@{k} |",
        "|---|---|---|---|",
    ]
    for row in rows:
        lines.append(
            f"| {row.variant_tag} | {row.p_at_k} | {row.r_at_k} | {row.f1_at_k} |"
        )
    return "\n".join(lines)


def metrics_csv(rows: list[MetricRow], k: int = 5) -> str:
    lines = [f"variant,p_at_{k}_mean,p_at_{k}_std,r_at_{k}_mean,r_at_{k}_std,f1_at_{k}_mean,f1_at_{k}_std"]
    for row in rows:
        lines.append(
            f"{row.variant_tag},{row.p_at_k.mean:.6f},{row.p_at_k.std:.6f},"
            f"{row.r_at_k.mean:.6f},{row.r_at_k.std:.6f},"
            f"{row.f1_at_k.mean:.6f},{row.f1_at_k.std:.6f}"
        )
    return "\n".join(lines) + "\n"


# -- LLM-as-judge -----------------------------------------------------------------


@dataclass(frozen=True)
class JudgeScores:
    clarity: int
    completeness: int
    usefulness: int
    accuracy: int
    specificity: int
    justifications: dict[str, str]

    @property
    def overall(self) -> float:
        return (
            self.clarity
            + self.completeness
            + self.usefulness
            + self.accuracy
            + self.specificity
        ) / 5

    def to_dict(self) -> dict:
        return {
            "clarity": self.clarity,
            "completeness": self.completeness,
            "usefulness": self.usefulness,
            "accuracy": self.accuracy,
            "specificity": self.specificity,
            "overall": self.overall,
            "justifications": dict(self.justifications),
        }


def judge_report(
    report_text: str, workplan_text: str, judge: GenerationBackend
) -> JudgeScores:
    """Score a rendered report on the five rubric criteria (Likert 1-5),
    one judging prompt per criterion; overall is computed locally."""

    def check(payload) -> None:
        if not isinstance(payload, dict):
            raise ValueError("judge reply must be a JSON object")
        score = payload.get("score")
        if not isinstance(score, int) or not (1 <= score <= 5):
            raise ValueError(f"score {score!r} outside 1..5")

    scores: dict[str, int] = {}
    justifications: dict[str, str] = {}
    for criterion, definition in JUDGE_CRITERIA.items():
        prompt = load_template("judge_criterion").render(
            criterion=criterion,
            definition=definition,
            workplan=workplan_text,
            report=report_text,
        )
        payload, _ = generate_json(judge, prompt, validator=check)
        scores[criterion] = payload["score"]
        justifications[criterion] = str(payload.get("justification", ""))
    return JudgeScores(
        clarity=scores["clarity"],
        completeness=scores["completeness"],
        usefulness=scores["usefulness"],
        accuracy=scores["accuracy"],
        specificity=scores["specificity"],
        justifications=justifications,
    )


# -- embedding benchmark ------------------------------------------------------------


@dataclass(frozen=True)
class QaPair:
    question: str
    reference_answer: str
    source_doc_id: str


class AgreementJudge(Protocol):
    def agreement(self, question: str, reference: str, answer: str) -> float: ...


class SubstringAgreementJudge:
    """Fixture agreement judge: 1.0 when the reference answer appears
    verbatim (after normalization) inside the generated answer."""

    def agreement(self, question: str, reference: str, answer: str) -> float:
        return 1.0 if normalize(reference).lower() in normalize(answer).lower() else 0.0


@dataclass(frozen=True)
class BenchmarkRow:
    model: str
    correctness_pct: float | None
    avg_query_time_s: float | None
    skipped: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "correctness_pct": self.correctness_pct,
            "avg_query_time_s": self.avg_query_time_s,
            "skipped": self.skipped,
            "note": self.note,
        }


def benchmark_embeddings(
    qa_pairs: list[QaPair],
    backends: list[EmbeddingBackend],
    judge: AgreementJudge,
    store: CorpusStore,
    answer_llm: GenerationBackend,
    top_k: int = 5,
    clock=time.perf_counter,
) -> list[BenchmarkRow]:
    """Per backend: index the corpus, answer every question through
    retrieval + generation, and report judged correctness (%) plus mean
    per-query wall-clock latency. Unreachable backends yield skipped rows.
    Queries run one at a time so latency numbers are honest.
    """
    if not qa_pairs:
        raise EvaluationError("benchmark requires at least one QA pair")
    rows: list[BenchmarkRow] = []
    chunk_entries = [(c.chunk_id, c.text) for c in store.chunks()]
    for backend in backends:
        model = backend.descriptor.backend_id
        try:
            index = build_index(chunk_entries, backend)
        except TransportError as exc:
            rows.append(
                BenchmarkRow(model, None, None, skipped=True, note=str(exc))
            )
            continue
        agreements: list[float] = []
        latencies: list[float] = []
        try:
            for pair in qa_pairs:
                start = clock()
                hits = index.top_k(backend.embed(pair.question), top_k)
                context = [store.chunk_by_id(h.chunk_id).text for h in hits]
                prompt = load_template("qa_answer").render(
                    question=pair.question, context="\n".join(context)
                )
                answer = answer_llm.generate(prompt)
                latencies.append(clock() - start)
                agreements.append(
                    judge.agreement(pair.question, pair.reference_answer, answer)
                )
        except TransportError as exc:
            rows.append(BenchmarkRow(model, None, None, skipped=True, note=str(exc)))
            continue
        rows.append(
            BenchmarkRow(
                model=model,
                correctness_pct=100.0 * sum(agreements) / len(agreements),
                avg_query_time_s=sum(latencies) / len(latencies),
            )
        )
    return rows


def benchmark_markdown(rows: list[BenchmarkRow]) -> str:
    lines = [
        "| Model | Correctness (%) | Avg Query Time (s) |",
        "|---|---|---|",
    ]
    for row in rows:
        if row.skipped:
            lines.append(f"| {row.model} | skipped | skipped |")
        else:
            lines.append(
                f"| {row.model} | {row.correctness_pct:.1f} | {row.avg_query_time_s:.3f} |"
            )
    return "\n".join(lines)


def benchmark_csv(rows: list[BenchmarkRow]) -> str:
    lines = ["model,correctness_pct,avg_query_time_s"]
    for row in rows:
        if row.skipped:
            lines.append(f"{row.model},skipped,skipped")
        else:
            lines.append(
                f"{row.model},{row.correctness_pct:.1f},{row.avg_query_time_s:.6f}"
            )
    return "\n".join(lines) + "\n"
