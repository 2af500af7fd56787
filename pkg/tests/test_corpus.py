from __future__ import annotations

import json
import statistics

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harness.corpus import (
    ChunkingPolicy,
    CorpusError,
    CorpusStore,
    Document,
    chunk,
    load_policy_corpus,
    normalize,
    reconstruct_from_chunks,
    tokenize,
)

from conftest import make_synthetic_docs, write_jsonl


def make_doc(body: str = "", summary: str = "", doc_id: str = "d1") -> Document:
    return Document(doc_id=doc_id, event_name="evt", summary=summary, body=body)


# -- normalize -------------------------------------------------------------


def test_normalize_collapses_whitespace():
    assert normalize("A\t\tB\n") == "A B"


def test_normalize_empty():
    assert normalize("") == ""


def test_normalize_strips_control_chars():
    assert normalize("a\x00b\x07c") == "a b c"


@settings(max_examples=1000, deadline=None)
@given(st.text(max_size=200))
def test_normalize_idempotent(text):
    once = normalize(text)
    assert normalize(once) == once


# -- chunking ----------------------------------------------------------------


def test_chunk_window_arithmetic_2048_tokens():
    # 2048 single-token words; max 1024, overlap 128 -> stride 896:
    # windows at token offsets 0, 896, 1792 (hand arithmetic)
    body = " ".join(f"w{i}" for i in range(2048))
    policy = ChunkingPolicy(max_tokens=1024, overlap_tokens=128)
    chunks = chunk(make_doc(body=body), policy)
    assert len(chunks) == 3
    assert [c.seq for c in chunks] == [0, 1, 2]
    assert chunks[0].text.startswith("w0 ")
    assert chunks[1].text.startswith("w896 ")
    assert chunks[2].text.startswith("w1792 ")
    assert [c.token_count for c in chunks] == [1024, 1024, 256]


def test_chunk_subwindow_input():
    chunks = chunk(make_doc(body=" ".join(f"t{i}" for i in range(10))))
    assert len(chunks) == 1
    assert chunks[0].token_count == 10


def test_chunk_summary_fallback():
    summary = " ".join(f"s{i}" for i in range(50))
    chunks = chunk(make_doc(body="", summary=summary))
    assert len(chunks) == 1
    assert chunks[0].text == summary


def test_chunk_empty_document_errors():
    with pytest.raises((CorpusError, ValueError)):
        chunk(make_doc(body="", summary=""))


def test_chunk_token_sum_identity():
    # sum(token_count) - (chunks-1) * overlap == total tokens
    body = " ".join(f"w{i}" for i in range(501)) + ", punctuation; included!"
    policy = ChunkingPolicy(max_tokens=64, overlap_tokens=16)
    doc = make_doc(body=body)
    chunks = chunk(doc, policy)
    total = len(tokenize(normalize(body)))
    assert sum(c.token_count for c in chunks) - (len(chunks) - 1) * policy.overlap_tokens == total


def test_chunk_reconstruction_bytes_exact():
    body = "Pump seal failed. Operator isolated the pump; pressure dropped, alarms sounded. " * 40
    policy = ChunkingPolicy(max_tokens=32, overlap_tokens=8)
    doc = make_doc(body=body)
    chunks = chunk(doc, policy)
    assert len(chunks) > 3
    assert reconstruct_from_chunks(chunks, policy) == normalize(body)


@settings(max_examples=100, deadline=None)
@given(
    n_tokens=st.integers(min_value=1, max_value=300),
    max_tokens=st.integers(min_value=4, max_value=64),
    overlap=st.integers(min_value=0, max_value=32),
)
def test_chunk_invariants_random(n_tokens, max_tokens, overlap):
    if overlap >= max_tokens:
        overlap = max_tokens - 1
    policy = ChunkingPolicy(max_tokens=max_tokens, overlap_tokens=overlap)
    body = " ".join(f"tok{i}" for i in range(n_tokens))
    chunks = chunk(make_doc(body=body), policy)
    assert [c.seq for c in chunks] == list(range(len(chunks)))
    assert all(c.token_count <= max_tokens for c in chunks)
    total = len(tokenize(normalize(body)))
    assert sum(c.token_count for c in chunks) - (len(chunks) - 1) * overlap == total
    assert reconstruct_from_chunks(chunks, policy) == normalize(body)


def test_policy_overlap_must_be_smaller():
    with pytest.raises(ValueError):
        ChunkingPolicy(max_tokens=10, overlap_tokens=10).validate()


# -- ingestion ----------------------------------------------------------------


def test_ingest_counts_three_docs(tmp_path):
    docs = make_synthetic_docs(3, seed=1)
    path = write_jsonl(tmp_path / "c.jsonl", docs)
    store = CorpusStore(tmp_path / "store")
    report = store.ingest(path)
    assert report.stats.doc_count == 3
    assert not report.invalid_lines


def test_ingest_duplicate_doc_id_names_both_lines(tmp_path):
    rows = [
        {"doc_id": "a", "summary": "one two"},
        {"doc_id": "b", "summary": "three"},
        {"doc_id": "a", "summary": "four"},
    ]
    path = write_jsonl(tmp_path / "c.jsonl", rows)
    store = CorpusStore(tmp_path / "store")
    with pytest.raises(CorpusError) as err:
        store.ingest(path)
    assert "lines 1 and 3" in str(err.value)


def test_ingest_word_stats_hand_arithmetic(tmp_path):
    # summaries of 10,20,30,40,50 words -> mean 30, median 30, max 50
    rows = [
        {"doc_id": f"d{n}", "summary": " ".join(["w"] * n)} for n in (10, 20, 30, 40, 50)
    ]
    path = write_jsonl(tmp_path / "c.jsonl", rows)
    store = CorpusStore(tmp_path / "store")
    stats = store.ingest(path).stats
    assert stats.summary_word_stats.mean == 30
    assert stats.summary_word_stats.median == 30
    assert stats.summary_word_stats.max == 50
    # population std oracle
    assert stats.summary_word_stats.std == pytest.approx(statistics.pstdev([10, 20, 30, 40, 50]))


def test_ingest_reports_invalid_lines_and_continues(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text(
        json.dumps({"doc_id": "ok1", "summary": "fine"})
        + "\n"
        + "{not json}\n"
        + json.dumps({"doc_id": "bad", "summary": "", "body": ""})
        + "\n"
        + json.dumps({"doc_id": "ok2", "summary": "also fine"})
        + "\n"
    )
    store = CorpusStore(tmp_path / "store")
    report = store.ingest(path)
    assert report.stats.doc_count == 2
    assert [lineno for lineno, _ in report.invalid_lines] == [2, 3]


def test_ingest_missing_file_errors(tmp_path):
    with pytest.raises(CorpusError):
        CorpusStore(tmp_path / "store").ingest(tmp_path / "nope.jsonl")


def test_stats_match_brute_force_recount(tmp_path):
    docs = make_synthetic_docs(25, seed=3)
    path = write_jsonl(tmp_path / "c.jsonl", docs)
    store = CorpusStore(tmp_path / "store")
    stats = store.ingest(path).stats
    # independent single-pass recount
    summaries = [len(normalize(d.summary).split()) for d in docs if d.summary]
    assert stats.summary_word_stats.mean == pytest.approx(sum(summaries) / len(summaries))
    assert stats.summary_word_stats.max == max(summaries)
    assert stats.summary_word_stats.median == statistics.median(summaries)
    assert stats.doc_count == 25
    assert stats.chunk_count == len(store.chunks())


def test_store_roundtrip_survives_restart(tmp_path):
    docs = make_synthetic_docs(5, seed=9)
    path = write_jsonl(tmp_path / "c.jsonl", docs)
    store = CorpusStore(tmp_path / "store")
    store.ingest(path, policy=ChunkingPolicy(max_tokens=16, overlap_tokens=4))
    reopened = CorpusStore(tmp_path / "store")
    assert [d.doc_id for d in reopened.documents()] == [d.doc_id for d in store.documents()]
    assert [c.chunk_id for c in reopened.chunks()] == [c.chunk_id for c in store.chunks()]
    assert reopened.policy.max_tokens == 16


def test_export_roundtrips_normalized_input(tmp_path):
    docs = make_synthetic_docs(4, seed=11)
    path = write_jsonl(tmp_path / "c.jsonl", docs)
    store = CorpusStore(tmp_path / "store")
    store.ingest(path)
    out = tmp_path / "export.jsonl"
    store.export_jsonl(out)
    # already-normalized input round-trips byte-identically
    assert out.read_text() == path.read_text()


def test_event_date_validation(tmp_path):
    rows = [{"doc_id": "d1", "summary": "text", "event_date": "not-a-date"}]
    path = write_jsonl(tmp_path / "c.jsonl", rows)
    report = CorpusStore(tmp_path / "store").ingest(path)
    assert report.stats.doc_count == 0
    assert len(report.invalid_lines) == 1


def test_missing_date_flagged_not_rejected(tmp_path):
    rows = [{"doc_id": "d1", "summary": "text"}]
    path = write_jsonl(tmp_path / "c.jsonl", rows)
    report = CorpusStore(tmp_path / "store").ingest(path)
    assert report.stats.doc_count == 1
    assert report.docs_missing_date == ["d1"]


# -- policy corpus ---------------------------------------------------------------


def test_policy_corpus_loads_with_origin(tmp_path):
    rows = [
        {"doc_id": "pol-1", "event_name": "Lockout Policy", "body": "isolate energy", "origin": "sbms"},
        {"doc_id": "pol-2", "event_name": "PPE Policy", "body": "wear gloves", "origin": "external"},
    ]
    path = write_jsonl(tmp_path / "p.jsonl", rows)
    policies = load_policy_corpus(path)
    assert [p.policy_id for p in policies] == ["pol-1", "pol-2"]
    assert policies[0].origin == "sbms"


def test_policy_duplicate_id_rejected(tmp_path):
    rows = [
        {"doc_id": "pol-1", "summary": "x", "origin": "sbms"},
        {"doc_id": "pol-1", "summary": "y", "origin": "sbms"},
    ]
    path = write_jsonl(tmp_path / "p.jsonl", rows)
    with pytest.raises(CorpusError):
        load_policy_corpus(path)
