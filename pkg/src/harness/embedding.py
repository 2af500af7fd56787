"""Embedding backends and the exact cosine top-K vector index.

The index is deliberately brute force: every similarity a test asserts can
be recomputed by an independent oracle. Vectors persist as a flat binary
file of little-endian float32 plus a JSON sidecar carrying chunk ids and
the backend descriptor, so an index round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .corpus import normalize, tokenize
from .errors import TransportError

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


class EmbeddingError(Exception):
    """Non-retryable embedding failure (bad input, dimension mismatch)."""


@dataclass(frozen=True)
class EmbeddingBackendDescriptor:
    backend_id: str
    dim: int
    kind: str  # "remote" | "mock"


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    dim: int

    def __post_init__(self):
        if len(self.values) != self.dim:
            raise EmbeddingError(
                f"vector length {len(self.values)} does not match dim {self.dim}"
            )
        if not np.all(np.isfinite(self.values)):
            raise EmbeddingError("vector contains non-finite values")

    @classmethod
    def of(cls, values: Iterable[float]) -> "EmbeddingVector":
        arr = np.asarray(list(values), dtype=np.float64)
        return cls(values=arr, dim=len(arr))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values.astype(np.float64)))


@dataclass(frozen=True)
class SearchHit:
    chunk_id: str
    score: float


def cosine(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """Exact cosine similarity dot(u,v) / (|u||v|), computed in float64."""
    if u.dim != v.dim:
        raise EmbeddingError(f"dimension mismatch: {u.dim} vs {v.dim}")
    a = u.values.astype(np.float64)
    b = v.values.astype(np.float64)
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise EmbeddingError("cosine undefined for zero-norm vector")
    return float(np.dot(a, b) / (norm_a * norm_b))


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a; the documented bucket hash of the mock backend."""
    value = FNV64_OFFSET
    for byte in data:
        value ^= byte
        value = (value * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return value


def mock_embed(text: str, dim: int) -> EmbeddingVector:
    """Token-hash bag of words: FNV-1a(lowercased token) mod dim, counts
    L2-normalized. Identical token multisets give identical vectors.
    """
    if dim < 8:
        raise EmbeddingError("mock embedding dim must be >= 8")
    counts = np.zeros(dim, dtype=np.float64)
    for token in tokenize(normalize(text)):
        counts[fnv1a_64(token.lower().encode("utf-8")) % dim] += 1.0
    norm = np.linalg.norm(counts)
    if norm > 0:
        counts /= norm
    return EmbeddingVector(values=counts, dim=dim)


class EmbeddingBackend(Protocol):
    descriptor: EmbeddingBackendDescriptor

    def embed(self, text: str) -> EmbeddingVector: ...

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]: ...


class MockEmbeddingBackend:
    """Deterministic offline backend used throughout the test suite."""

    def __init__(self, dim: int = 64, backend_id: str = "mock-fnv1a"):
        self.descriptor = EmbeddingBackendDescriptor(
            backend_id=backend_id, dim=dim, kind="mock"
        )

    def embed(self, text: str) -> EmbeddingVector:
        if not normalize(text):
            raise EmbeddingError("cannot embed empty text")
        return mock_embed(text, self.descriptor.dim)

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self.embed(t) for t in texts]


class RemoteEmbeddingBackend:
    """HTTP embedding service: POST {"texts": [...]} -> {"vectors": [[...]]}."""

    def __init__(self, url: str, backend_id: str, dim: int, client=None, batch_size: int = 32):
        import httpx

        self.url = url
        self.batch_size = batch_size
        self._client = client or httpx.Client(timeout=30.0)
        self.descriptor = EmbeddingBackendDescriptor(
            backend_id=backend_id, dim=dim, kind="remote"
        )

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        import httpx

        for text in texts:
            if not normalize(text):
                raise EmbeddingError("cannot embed empty text")
        vectors: list[EmbeddingVector] = []
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start : start + self.batch_size]
            try:
                response = self._client.post(self.url, json={"texts": batch})
            except httpx.HTTPError as exc:
                raise TransportError(f"embedding backend unreachable: {exc}") from exc
            if response.status_code >= 500:
                raise TransportError(f"embedding backend error {response.status_code}")
            if response.status_code != 200:
                raise EmbeddingError(f"embedding backend rejected request: {response.text}")
            for row in response.json()["vectors"]:
                vec = EmbeddingVector.of(row)
                if vec.dim != self.descriptor.dim:
                    raise EmbeddingError(
                        f"backend returned dim {vec.dim}, descriptor says {self.descriptor.dim}"
                    )
                vectors.append(vec)
        return vectors


class VectorIndex:
    """Immutable exact cosine top-K index over chunk embeddings.

    Entries are quantized to float32 at build time (the persistence
    format), so a saved and reloaded index scores bit-identically.
    Similarities are always computed in float64 over those values.
    """

    def __init__(self, backend: EmbeddingBackendDescriptor):
        self.backend = backend
        self._ids: list[str] = []
        self._matrix: np.ndarray = np.zeros((0, backend.dim), dtype=np.float32)
        self._id_set: set[str] = set()

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def chunk_ids(self) -> list[str]:
        return list(self._ids)

    def add(self, chunk_id: str, vector: EmbeddingVector) -> None:
        if chunk_id in self._id_set:
            raise EmbeddingError(f"duplicate chunk_id {chunk_id!r} in index")
        if vector.dim != self.backend.dim:
            raise EmbeddingError(
                f"vector dim {vector.dim} does not match index dim {self.backend.dim}"
            )
        self._ids.append(chunk_id)
        self._id_set.add(chunk_id)
        row = vector.values.astype(np.float32)[None, :]
        self._matrix = np.vstack([self._matrix, row])

    @classmethod
    def build(
        cls,
        entries: list[tuple[str, EmbeddingVector]],
        backend: EmbeddingBackendDescriptor,
    ) -> "VectorIndex":
        index = cls(backend)
        ids = [cid for cid, _ in entries]
        if len(set(ids)) != len(ids):
            raise EmbeddingError("duplicate chunk_ids in index build")
        for cid, vec in entries:
            if vec.dim != backend.dim:
                raise EmbeddingError(
                    f"vector dim {vec.dim} does not match index dim {backend.dim}"
                )
        index._ids = ids
        index._id_set = set(ids)
        if entries:
            index._matrix = np.stack([vec.values for _, vec in entries]).astype(np.float32)
        return index

    def vector_of(self, chunk_id: str) -> EmbeddingVector:
        try:
            row = self._ids.index(chunk_id)
        except ValueError:
            raise EmbeddingError(f"chunk_id {chunk_id!r} not in index") from None
        return EmbeddingVector(values=self._matrix[row].astype(np.float64), dim=self.backend.dim)

    def scores(self, query: EmbeddingVector) -> dict[str, float]:
        """Cosine of the query against every entry (exact, float64)."""
        if query.dim != self.backend.dim:
            raise EmbeddingError(
                f"query dim {query.dim} does not match index dim {self.backend.dim}"
            )
        if not self._ids:
            return {}
        matrix = self._matrix.astype(np.float64)
        q = query.values.astype(np.float64)
        qnorm = np.linalg.norm(q)
        if qnorm == 0.0:
            raise EmbeddingError("cosine undefined for zero-norm query")
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(norms == 0.0):
            raise EmbeddingError("index contains a zero-norm vector")
        sims = (matrix @ q) / (norms * qnorm)
        return {cid: float(s) for cid, s in zip(self._ids, sims)}

    def top_k(self, query: EmbeddingVector, k: int) -> list[SearchHit]:
        """The K highest-cosine entries, score descending, ties by chunk_id."""
        if k < 1:
            raise EmbeddingError("k must be >= 1")
        scored = self.scores(query)
        ranked = sorted(scored.items(), key=lambda item: (-item[1], item[0]))
        return [SearchHit(chunk_id=cid, score=score) for cid, score in ranked[:k]]

    # -- persistence: .vecs (little-endian f32) + .meta.json sidecar -------

    def save(self, path_base: str | Path) -> None:
        base = Path(path_base)
        base.parent.mkdir(parents=True, exist_ok=True)
        flat = self._matrix.astype("<f4").tobytes(order="C")
        (base.with_suffix(".vecs")).write_bytes(flat)
        meta = {
            "backend": asdict(self.backend),
            "chunk_ids": self._ids,
            "count": len(self._ids),
        }
        (base.with_suffix(".meta.json")).write_text(json.dumps(meta, indent=2))

    @classmethod
    def load(cls, path_base: str | Path) -> "VectorIndex":
        base = Path(path_base)
        meta = json.loads(base.with_suffix(".meta.json").read_text())
        backend = EmbeddingBackendDescriptor(**meta["backend"])
        raw = base.with_suffix(".vecs").read_bytes()
        count = meta["count"]
        expected = count * backend.dim * struct.calcsize("<f")
        if len(raw) != expected:
            raise EmbeddingError(
                f"index file size {len(raw)} != expected {expected} bytes"
            )
        index = cls(backend)
        index._ids = list(meta["chunk_ids"])
        index._id_set = set(index._ids)
        index._matrix = np.frombuffer(raw, dtype="<f4").reshape(count, backend.dim).copy()
        return index


def build_index(
    chunks: list[tuple[str, str]], backend: EmbeddingBackend
) -> VectorIndex:
    """Embed (chunk_id, text) pairs and assemble the index."""
    texts = [text for _, text in chunks]
    vectors = backend.embed_batch(texts) if texts else []
    return VectorIndex.build(
        list(zip((cid for cid, _ in chunks), vectors)), backend.descriptor
    )
