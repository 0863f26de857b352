"""Per-app flat vector store with exact cosine search and metadata filters."""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx
import numpy as np

from .errors import (
    CorruptStore,
    DimMismatch,
    EmptyStore,
    EmptyText,
    NoFilterFields,
    ProviderError,
    StoreWriteError,
)

MOCK_DIM = 256
FORMAT_VERSION = 1
# Scores are compared at this many decimals so that mathematically equal
# similarities tie exactly and fall through to the record_id tie-break.
SCORE_DECIMALS = 12

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise ValueError("embedding has no components")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding has non-finite components")
        if not np.any(arr):
            raise ValueError("zero embedding vector")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def tolist(self) -> list[float]:
        return [float(v) for v in self.values]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, EmbeddingVector) and np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def mock_embed(text: str, dim: int = MOCK_DIM) -> EmbeddingVector:
    """Bag-of-tokens hashing embedding: deterministic and offline."""
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    counts = np.zeros(dim, dtype=np.float64)
    for tok in _TOKEN_SPLIT.split(text.lower()):
        if tok:
            counts[fnv1a_64(tok.encode("utf-8")) % dim] += 1.0
    norm = np.linalg.norm(counts)
    if norm == 0:
        raise EmptyText("text has no alphanumeric tokens")
    return EmbeddingVector(counts / norm)


class Embedder(Protocol):
    dim: int | None

    def embed(self, text: str) -> EmbeddingVector: ...


class MockEmbedder:
    name = "mock"

    def __init__(self, dim: int = MOCK_DIM):
        self.dim = dim

    def embed(self, text: str) -> EmbeddingVector:
        return mock_embed(text, self.dim)


class RemoteEmbedder:
    """OpenAI-compatible ``/embeddings`` client; vectors are returned as-is."""

    name = "remote"

    def __init__(self, base_url: str, api_key: str | None, model: str = "text-embedding-ada-002",
                 timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self._api_key = api_key
        self.model = model
        self.timeout = timeout
        self.dim = None

    def __repr__(self) -> str:
        return f"RemoteEmbedder(base_url={self.base_url!r}, model={self.model!r})"

    def embed(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        headers = {"Authorization": f"Bearer {self._api_key}"} if self._api_key else {}
        try:
            resp = httpx.post(f"{self.base_url}/embeddings", json={"model": self.model, "input": text},
                              headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise ProviderError(None, str(exc)) from exc
        if resp.status_code != 200:
            raise ProviderError(resp.status_code, resp.text[:500])
        try:
            vec = EmbeddingVector(resp.json()["data"][0]["embedding"])
        except (ValueError, KeyError, IndexError) as exc:
            raise ProviderError(resp.status_code, f"unexpected embedding response: {exc}") from exc
        self.dim = vec.dim
        return vec


def embed(text: str, provider: Embedder | None = None) -> EmbeddingVector:
    return (provider or MockEmbedder()).embed(text)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dim != b.dim:
        raise DimMismatch(f"{a.dim} != {b.dim}")
    value = float(np.dot(a.values, b.values) / (np.linalg.norm(a.values) * np.linalg.norm(b.values)))
    return min(1.0, max(-1.0, value))


@dataclass(frozen=True)
class IndexedRecord:
    record_id: str
    code_text: str
    description: str
    method_name: str
    class_name: str
    param_count: int
    embedding: EmbeddingVector
    param_types: tuple[str, ...] = ()
    source_path: str = ""
    provenance: dict = field(default_factory=dict, compare=False, hash=False)

    @property
    def code_path(self) -> str:
        if self.param_types or self.param_count == 0:
            return f"{self.class_name}.{self.method_name}({', '.join(self.param_types)})"
        return f"{self.class_name}.{self.method_name}"

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "code_text": self.code_text,
            "description": self.description,
            "method_name": self.method_name,
            "class_name": self.class_name,
            "param_count": self.param_count,
            "param_types": list(self.param_types),
            "source_path": self.source_path,
            "embedding": self.embedding.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IndexedRecord":
        return cls(
            record_id=d["record_id"],
            code_text=d["code_text"],
            description=d["description"],
            method_name=d["method_name"],
            class_name=d["class_name"],
            param_count=int(d["param_count"]),
            embedding=EmbeddingVector(d["embedding"]),
            param_types=tuple(d.get("param_types", ())),
            source_path=d.get("source_path", ""),
            provenance=d.get("provenance", {}),
        )


def compose_index_text(class_name: str, method_name: str, body: str) -> str:
    lines = [f"class: {class_name}", f"method: {method_name}"]
    if body:
        lines.append(body)
    return "\n".join(lines)


def index_text_for(record: IndexedRecord, use_descriptions: bool = True) -> str:
    """Text that gets embedded: class and method lines, then the description.

    When descriptions are disabled the code itself takes the description's
    place.
    """
    body = record.description if use_descriptions else record.code_text
    return compose_index_text(record.class_name, record.method_name, body)


@dataclass(frozen=True)
class RetrievalResult:
    record_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class MetadataFilter:
    method_name: str | None = None
    class_name: str | None = None
    param_count: int | None = None

    def is_empty(self) -> bool:
        return self.method_name is None and self.class_name is None and self.param_count is None

    def matches(self, record: IndexedRecord) -> bool:
        return (
            (self.method_name is None or record.method_name == self.method_name)
            and (self.class_name is None or record.class_name == self.class_name)
            and (self.param_count is None or record.param_count == self.param_count)
        )


class VectorStore:
    """Exact-scan store of one app's records.

    Reads may run concurrently; writes hold an exclusive lock.
    """

    def __init__(self, app_id: str, dim: int, meta: dict | None = None, index_mode: str = "description"):
        self.app_id = app_id
        self.dim = dim
        self.meta = dict(meta or {})
        self.index_mode = index_mode
        self._records: dict[str, IndexedRecord] = {}
        self._lock = threading.RLock()
        self._matrix: np.ndarray | None = None
        self._ids: list[str] = []

    def __len__(self) -> int:
        return len(self._records)

    def count(self) -> int:
        return len(self._records)

    def upsert(self, record: IndexedRecord) -> str:
        if record.embedding.dim != self.dim:
            raise DimMismatch(f"record {record.record_id} has dim {record.embedding.dim}, store has {self.dim}")
        with self._lock:
            self._records[record.record_id] = record
            self._matrix = None
        return record.record_id

    def get(self, record_id: str) -> IndexedRecord | None:
        return self._records.get(record_id)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._records

    def records(self) -> list[IndexedRecord]:
        """All records ordered by record_id."""
        return [self._records[k] for k in sorted(self._records)]

    def _snapshot(self) -> tuple[list[str], np.ndarray]:
        with self._lock:
            if self._matrix is None:
                self._ids = sorted(self._records)
                if self._ids:
                    mat = np.vstack([self._records[i].embedding.values for i in self._ids])
                    mat = mat / np.linalg.norm(mat, axis=1, keepdims=True)
                else:
                    mat = np.zeros((0, self.dim))
                self._matrix = mat
            return self._ids, self._matrix

    def search(self, query_vec: EmbeddingVector, k: int = 5,
               filter: MetadataFilter | None = None) -> list[RetrievalResult]:
        if k < 1:
            raise ValueError("k must be positive")
        if query_vec.dim != self.dim:
            raise DimMismatch(f"query dim {query_vec.dim} != store dim {self.dim}")
        ids, mat = self._snapshot()
        if filter is None or filter.is_empty():
            if not ids:
                raise EmptyStore(f"store {self.app_id!r} is empty")
            rows = np.arange(len(ids))
        else:
            rows = np.array([i for i, rid in enumerate(ids) if filter.matches(self._records[rid])], dtype=int)
            if rows.size == 0:
                return []
        q = query_vec.values / np.linalg.norm(query_vec.values)
        scores = np.clip(mat[rows] @ q, -1.0, 1.0).round(SCORE_DECIMALS)
        # ids are sorted, so a stable sort on -score keeps ascending record_id within ties
        order = np.argsort(-scores, kind="stable")[:k]
        return [
            RetrievalResult(ids[rows[j]], float(scores[j]), rank)
            for rank, j in enumerate(order, start=1)
        ]

    def filter_candidates(self, method_name: str | None = None, class_name: str | None = None,
                          param_count: int | None = None) -> set[str]:
        flt = MetadataFilter(method_name, class_name, param_count)
        if flt.is_empty():
            raise NoFilterFields("at least one of method_name, class_name, param_count is required")
        with self._lock:
            return {rid for rid, rec in self._records.items() if flt.matches(rec)}

    def class_names(self) -> set[str]:
        return {r.class_name for r in self._records.values()}

    # --- persistence -------------------------------------------------------

    def _record_lines(self) -> list[str]:
        return [json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) for r in self.records()]

    def save(self, path: str | Path) -> None:
        lines = self._record_lines()
        header = {
            "format": "droidtrace-store",
            "version": FORMAT_VERSION,
            "app_id": self.app_id,
            "dim": self.dim,
            "count": len(lines),
            "checksum": _checksum(lines),
            "index_mode": self.index_mode,
            "meta": self.meta,
        }
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(json.dumps(header, sort_keys=True, ensure_ascii=False) + "\n")
                for line in lines:
                    fh.write(line + "\n")
            tmp.replace(path)
        except OSError as exc:
            raise StoreWriteError(f"cannot write store {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        try:
            raw = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise CorruptStore(f"cannot read store {path}: {exc}") from exc
        lines = raw.split("\n")
        if not raw.endswith("\n") or not lines[0]:
            raise CorruptStore(f"{path}: truncated store file")
        lines = lines[:-1]
        try:
            header = json.loads(lines[0])
            app_id, dim, count, checksum = header["app_id"], int(header["dim"]), int(header["count"]), header["checksum"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptStore(f"{path}: bad header: {exc}") from exc
        body = lines[1:]
        if len(body) != count:
            raise CorruptStore(f"{path}: header says {count} records, found {len(body)}")
        if _checksum(body) != checksum:
            raise CorruptStore(f"{path}: checksum mismatch")
        store = cls(app_id, dim, header.get("meta"), header.get("index_mode", "description"))
        for n, line in enumerate(body, 2):
            try:
                rec = IndexedRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptStore(f"{path}:{n}: bad record: {exc}") from exc
            if rec.embedding.dim != dim:
                raise CorruptStore(f"{path}:{n}: record dim {rec.embedding.dim} != header dim {dim}")
            if rec.record_id in store._records:
                raise CorruptStore(f"{path}:{n}: duplicate record id {rec.record_id}")
            store._records[rec.record_id] = rec
        return store


def _checksum(lines: list[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()

