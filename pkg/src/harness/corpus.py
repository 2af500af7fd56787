"""Incident corpus: ingestion, normalization, chunking, and the on-disk store.

Documents arrive as JSON Lines (one record per line, fields ``doc_id``,
``event_name``, ``event_date``, ``location``, ``summary``, ``body``,
``source_tag``). Text is normalized once at ingestion; chunking slides a
fixed token window over the normalized text so that chunk boundaries are
reproducible without any model-specific tokenizer.
"""

from __future__ import annotations

import json
import re
import statistics
import unicodedata
from dataclasses import dataclass, field, asdict
from datetime import date
from pathlib import Path

DOCUMENT_FIELDS = (
    "doc_id",
    "event_name",
    "event_date",
    "location",
    "summary",
    "body",
    "source_tag",
)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_CONTROL_RE = re.compile(r"[\x00-\x08\x0b-\x1f\x7f]")
_WS_RE = re.compile(r"\s+")

TOKENIZER_ID = "ws-punct-v1"


class CorpusError(Exception):
    """Corpus-level failure (unreadable file, duplicate ids, bad policy)."""


@dataclass(frozen=True)
class Document:
    """One incident record or work plan."""

    doc_id: str
    event_name: str = ""
    event_date: str = ""
    location: str = ""
    summary: str = ""
    body: str = ""
    source_tag: str = ""

    def validate(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if not self.summary.strip() and not self.body.strip():
            raise ValueError(f"document {self.doc_id!r}: summary and body both empty")
        if self.event_date:
            try:
                date.fromisoformat(self.event_date)
            except ValueError as exc:
                raise ValueError(
                    f"document {self.doc_id!r}: event_date {self.event_date!r} is not ISO-8601"
                ) from exc

    @property
    def date_missing(self) -> bool:
        return not self.event_date

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "Document":
        unknown = set(raw) - set(DOCUMENT_FIELDS)
        if unknown:
            raise ValueError(f"unknown document fields: {sorted(unknown)}")
        doc = cls(**{k: str(raw.get(k, "") or "") for k in DOCUMENT_FIELDS})
        doc.validate()
        return doc


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    seq: int
    text: str
    token_count: int


@dataclass(frozen=True)
class ChunkingPolicy:
    max_tokens: int = 1024
    overlap_tokens: int = 128
    tokenizer_id: str = TOKENIZER_ID

    def validate(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.overlap_tokens < 0:
            raise ValueError("overlap_tokens must be nonnegative")
        if self.overlap_tokens >= self.max_tokens:
            raise ValueError("overlap_tokens must be smaller than max_tokens")
        if self.tokenizer_id != TOKENIZER_ID:
            raise ValueError(f"unknown tokenizer {self.tokenizer_id!r}")


@dataclass(frozen=True)
class WordStats:
    mean: float
    std: float
    median: float
    max: int

    @classmethod
    def from_counts(cls, counts: list[int]) -> "WordStats":
        if not counts:
            return cls(0.0, 0.0, 0.0, 0)
        mean = sum(counts) / len(counts)
        # population std: stats must match a brute-force recount exactly
        variance = sum((c - mean) ** 2 for c in counts) / len(counts)
        return cls(
            mean=mean,
            std=variance**0.5,
            median=float(statistics.median(counts)),
            max=max(counts),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CorpusStats:
    doc_count: int
    chunk_count: int
    summary_word_stats: WordStats
    body_word_stats: WordStats

    def to_dict(self) -> dict:
        return {
            "doc_count": self.doc_count,
            "chunk_count": self.chunk_count,
            "summary_word_stats": self.summary_word_stats.to_dict(),
            "body_word_stats": self.body_word_stats.to_dict(),
        }


@dataclass
class IngestReport:
    stats: CorpusStats
    invalid_lines: list[tuple[int, str]] = field(default_factory=list)
    docs_missing_date: list[str] = field(default_factory=list)


def normalize(raw: str) -> str:
    """Normalize text: NFC, control chars stripped, whitespace collapsed.

    Total and idempotent; the empty string maps to itself.
    """
    text = unicodedata.normalize("NFC", raw)
    text = _CONTROL_RE.sub(" ", text)
    text = _WS_RE.sub(" ", text)
    return text.strip()


def tokenize(text: str) -> list[str]:
    """Deterministic whitespace+punctuation tokenizer (no ML tokenizer)."""
    return _TOKEN_RE.findall(text)


def token_spans(text: str) -> list[tuple[int, int]]:
    return [match.span() for match in _TOKEN_RE.finditer(text)]


def word_count(text: str) -> int:
    return len(text.split())


def chunk_text_of(doc: Document) -> str:
    """The text a document contributes to the index: body, else summary."""
    body = normalize(doc.body)
    if body:
        return body
    return normalize(doc.summary)


def chunk(doc: Document, policy: ChunkingPolicy | None = None) -> list[Chunk]:
    """Split a document into overlapping token windows.

    Windows start at multiples of (max_tokens - overlap_tokens); the final
    partial window is kept. Chunk text is the contiguous substring of the
    normalized source covering the window's tokens, so concatenating chunk
    texts minus overlaps reconstructs the normalized source byte-for-byte.
    """
    policy = policy or ChunkingPolicy()
    policy.validate()
    text = chunk_text_of(doc)
    if not text:
        raise CorpusError(f"document {doc.doc_id!r} has no text to chunk")

    spans = token_spans(text)
    total = len(spans)
    stride = policy.max_tokens - policy.overlap_tokens
    chunks: list[Chunk] = []
    start = 0
    prev_char_end = 0
    while True:
        end = min(start + policy.max_tokens, total)
        # include the inter-window gap when windows share no tokens, so
        # concatenation minus overlaps reconstructs the source exactly
        char_from = spans[start][0] if not chunks else min(spans[start][0], prev_char_end)
        window = text[char_from : spans[end - 1][1]]
        prev_char_end = spans[end - 1][1]
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}#c{len(chunks)}",
                doc_id=doc.doc_id,
                seq=len(chunks),
                text=window,
                token_count=end - start,
            )
        )
        if end == total:
            break
        start += stride
    return chunks


def reconstruct_from_chunks(chunks: list[Chunk], policy: ChunkingPolicy) -> str:
    """Inverse of :func:`chunk` (overlap dropped by re-tokenizing each chunk)."""
    if not chunks:
        return ""
    parts = [chunks[0].text]
    for piece in chunks[1:]:
        spans = token_spans(piece.text)
        cut = spans[policy.overlap_tokens - 1][1] if policy.overlap_tokens else 0
        parts.append(piece.text[cut:])
    return "".join(parts)


def _normalized_copy(doc: Document) -> Document:
    return Document(
        doc_id=doc.doc_id,
        event_name=normalize(doc.event_name),
        event_date=doc.event_date.strip(),
        location=normalize(doc.location),
        summary=normalize(doc.summary),
        body=normalize(doc.body),
        source_tag=doc.source_tag.strip(),
    )


def compute_stats(docs: list[Document], chunk_count: int) -> CorpusStats:
    return CorpusStats(
        doc_count=len(docs),
        chunk_count=chunk_count,
        summary_word_stats=WordStats.from_counts(
            [word_count(d.summary) for d in docs if d.summary]
        ),
        body_word_stats=WordStats.from_counts(
            [word_count(d.body) for d in docs if d.body]
        ),
    )


class CorpusStore:
    """On-disk document/chunk store.

    Layout under ``root``: ``documents.jsonl`` (normalized records),
    ``chunks.jsonl``, ``stats.json``, ``policy.json``. Ingestion is
    single-writer; once ingested the store is immutable and safe for any
    number of concurrent readers.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._docs: dict[str, Document] = {}
        self._chunks: list[Chunk] = []
        self._chunks_by_doc: dict[str, list[Chunk]] = {}
        self._chunk_by_id: dict[str, Chunk] = {}
        self._policy = ChunkingPolicy()
        self._stats: CorpusStats | None = None
        if (self.root / "documents.jsonl").exists():
            self._load()

    # -- ingestion --------------------------------------------------------

    def ingest(
        self,
        path: str | Path,
        fmt: str = "jsonl",
        policy: ChunkingPolicy | None = None,
    ) -> IngestReport:
        """Ingest a JSONL corpus file. Invalid lines are collected and
        reported with their line numbers; duplicate doc_ids abort ingestion.
        """
        if fmt != "jsonl":
            raise CorpusError(f"unsupported corpus format {fmt!r}")
        path = Path(path)
        if not path.exists():
            raise CorpusError(f"corpus file not found: {path}")
        policy = policy or ChunkingPolicy()
        policy.validate()

        docs: list[Document] = []
        invalid: list[tuple[int, str]] = []
        seen_lines: dict[str, int] = {}
        with path.open("r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    raw = json.loads(line)
                    doc = Document.from_dict(raw)
                except (json.JSONDecodeError, ValueError, TypeError) as exc:
                    invalid.append((lineno, str(exc)))
                    continue
                if doc.doc_id in seen_lines:
                    raise CorpusError(
                        f"duplicate doc_id {doc.doc_id!r} on lines "
                        f"{seen_lines[doc.doc_id]} and {lineno}"
                    )
                seen_lines[doc.doc_id] = lineno
                docs.append(_normalized_copy(doc))

        self._docs = {d.doc_id: d for d in docs}
        self._policy = policy
        self._chunks = []
        self._chunks_by_doc = {}
        for doc in docs:
            doc_chunks = chunk(doc, policy)
            self._chunks.extend(doc_chunks)
            self._chunks_by_doc[doc.doc_id] = doc_chunks
        self._chunk_by_id = {c.chunk_id: c for c in self._chunks}
        self._stats = compute_stats(docs, len(self._chunks))
        self._save()
        return IngestReport(
            stats=self._stats,
            invalid_lines=invalid,
            docs_missing_date=[d.doc_id for d in docs if d.date_missing],
        )

    # -- persistence ------------------------------------------------------

    def _save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with (self.root / "documents.jsonl").open("w", encoding="utf-8") as handle:
            for doc in self._docs.values():
                handle.write(json.dumps(doc.to_dict(), ensure_ascii=False) + "\n")
        with (self.root / "chunks.jsonl").open("w", encoding="utf-8") as handle:
            for piece in self._chunks:
                handle.write(json.dumps(asdict(piece), ensure_ascii=False) + "\n")
        (self.root / "policy.json").write_text(json.dumps(asdict(self._policy)))
        if self._stats is not None:
            (self.root / "stats.json").write_text(json.dumps(self._stats.to_dict()))

    def _load(self) -> None:
        with (self.root / "documents.jsonl").open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    doc = Document.from_dict(json.loads(line))
                    self._docs[doc.doc_id] = doc
        with (self.root / "chunks.jsonl").open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    self._chunks.append(Chunk(**json.loads(line)))
        policy_path = self.root / "policy.json"
        if policy_path.exists():
            self._policy = ChunkingPolicy(**json.loads(policy_path.read_text()))
        stats_path = self.root / "stats.json"
        if stats_path.exists():
            raw = json.loads(stats_path.read_text())
            self._stats = CorpusStats(
                doc_count=raw["doc_count"],
                chunk_count=raw["chunk_count"],
                summary_word_stats=WordStats(**raw["summary_word_stats"]),
                body_word_stats=WordStats(**raw["body_word_stats"]),
            )
        for piece in self._chunks:
            self._chunks_by_doc.setdefault(piece.doc_id, []).append(piece)
        self._chunk_by_id = {c.chunk_id: c for c in self._chunks}

    # -- read API ---------------------------------------------------------

    @property
    def policy(self) -> ChunkingPolicy:
        return self._policy

    @property
    def stats(self) -> CorpusStats | None:
        return self._stats

    def documents(self) -> list[Document]:
        return list(self._docs.values())

    def get(self, doc_id: str) -> Document:
        try:
            return self._docs[doc_id]
        except KeyError:
            raise CorpusError(f"unknown doc_id {doc_id!r}") from None

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def __len__(self) -> int:
        return len(self._docs)

    def chunks(self) -> list[Chunk]:
        return list(self._chunks)

    def chunks_of(self, doc_id: str) -> list[Chunk]:
        return list(self._chunks_by_doc.get(doc_id, []))

    def chunk_by_id(self, chunk_id: str) -> Chunk:
        try:
            return self._chunk_by_id[chunk_id]
        except KeyError:
            raise CorpusError(f"unknown chunk_id {chunk_id!r}") from None

    def doc_of_chunk(self, chunk_id: str) -> str:
        return self.chunk_by_id(chunk_id).doc_id

    def export_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8") as handle:
            for doc in self._docs.values():
                handle.write(json.dumps(doc.to_dict(), ensure_ascii=False) + "\n")


# -- policy corpus ---------------------------------------------------------

POLICY_ORIGINS = ("sbms", "external")


@dataclass(frozen=True)
class PolicyDocument:
    policy_id: str
    title: str
    body: str
    origin: str = "sbms"

    def validate(self) -> None:
        if not self.policy_id:
            raise ValueError("policy_id must be non-empty")
        if self.origin not in POLICY_ORIGINS:
            raise ValueError(f"origin must be one of {POLICY_ORIGINS}")


def load_policy_corpus(path: str | Path) -> list[PolicyDocument]:
    """Read policies from the incident JSONL schema plus an ``origin`` field."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"policy corpus not found: {path}")
    policies: list[PolicyDocument] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            raw = json.loads(line)
            origin = str(raw.pop("origin", "sbms"))
            doc = Document.from_dict(raw)
            policy = PolicyDocument(
                policy_id=doc.doc_id,
                title=normalize(doc.event_name),
                body=normalize(doc.body) or normalize(doc.summary),
                origin=origin,
            )
            policy.validate()
            if policy.policy_id in seen:
                raise CorpusError(f"duplicate policy_id {policy.policy_id!r} (line {lineno})")
            seen.add(policy.policy_id)
            policies.append(policy)
    return policies
