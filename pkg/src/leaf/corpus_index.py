"""Okapi BM25 over an in-memory inverted index.

The index is the evidence source for fact-checking and FC-RAG. Anything
with a ``retrieve(query, k)`` method returning ``RetrievedDoc`` lists can
stand in for it (see ``Retriever``).
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Protocol, Sequence

INDEX_FORMAT = "leaf-bm25-index"
INDEX_VERSION = 1

_WORD = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercased runs of Unicode letters/digits."""
    return _WORD.findall(text.lower())


class CorpusError(ValueError):
    """Raised for invalid corpora, parameters or index files."""


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    text: str

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("document id must be non-empty")
        if not self.text:
            raise CorpusError(f"document {self.id!r} has empty text")


@dataclass(frozen=True)
class RetrievedDoc:
    doc_id: str
    score: float
    snippet: str

    def to_dict(self) -> dict:
        return {"doc_id": self.doc_id, "score": self.score, "snippet": self.snippet}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RetrievedDoc":
        return cls(str(d["doc_id"]), float(d["score"]), str(d["snippet"]))


@dataclass(frozen=True)
class IndexStats:
    doc_count: int
    avg_doc_len: float
    vocab_size: int


@dataclass(frozen=True)
class BM25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self) -> None:
        if not self.k1 > 0:
            raise CorpusError(f"k1 must be > 0, got {self.k1}")
        if not 0 <= self.b <= 1:
            raise CorpusError(f"b must be in [0, 1], got {self.b}")


class Retriever(Protocol):
    def retrieve(self, query: str, k: int = 3) -> list[RetrievedDoc]: ...


class BM25Index:
    """Immutable BM25 index. Safe to share across threads once built."""

    def __init__(self, docs: Sequence[Document], params: BM25Params | None = None):
        params = params or BM25Params()
        if not docs:
            raise CorpusError("corpus is empty")
        seen: set[str] = set()
        for d in docs:
            if d.id in seen:
                raise CorpusError(f"duplicate document id: {d.id}")
            seen.add(d.id)

        self._params = params
        self._docs = tuple(docs)
        self._ids = frozenset(seen)
        lengths = []
        postings: dict[str, list[tuple[int, int]]] = {}
        for i, doc in enumerate(self._docs):
            counts = Counter(tokenize(doc.text))
            lengths.append(sum(counts.values()))
            for term, tf in counts.items():
                postings.setdefault(term, []).append((i, tf))
        self._doc_len = tuple(lengths)
        self._postings = MappingProxyType({t: tuple(p) for t, p in postings.items()})
        total = sum(lengths)
        # an all-punctuation corpus has zero tokens; keep avgdl positive
        self._avgdl = total / len(lengths) if total else 1.0
        n = len(self._docs)
        self._idf = MappingProxyType(
            {t: math.log(1.0 + (n - len(p) + 0.5) / (len(p) + 0.5)) for t, p in self._postings.items()}
        )

    @property
    def params(self) -> BM25Params:
        return self._params

    @property
    def documents(self) -> tuple[Document, ...]:
        return self._docs

    @property
    def stats(self) -> IndexStats:
        return IndexStats(len(self._docs), self._avgdl, len(self._postings))

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self._ids

    def idf(self, term: str) -> float:
        return self._idf.get(term, 0.0)

    def retrieve(self, query: str, k: int = 3) -> list[RetrievedDoc]:
        """Top-k documents by BM25 score.

        Each query token contributes once per occurrence. Only documents
        sharing at least one term with the query are returned; ties are
        ordered by ascending doc id.
        """
        if k < 1:
            raise CorpusError(f"k must be >= 1, got {k}")
        k1, b = self._params.k1, self._params.b
        scores: dict[int, float] = {}
        for term in tokenize(query):
            plist = self._postings.get(term)
            if not plist:
                continue
            idf = self._idf[term]
            for i, tf in plist:
                norm = k1 * (1.0 - b + b * self._doc_len[i] / self._avgdl)
                scores[i] = scores.get(i, 0.0) + idf * tf * (k1 + 1.0) / (tf + norm)
        ranked = sorted(scores.items(), key=lambda kv: (-kv[1], self._docs[kv[0]].id))
        return [RetrievedDoc(self._docs[i].id, s, self._docs[i].text) for i, s in ranked[:k]]

    # ---------------------------------------------------------- persistence

    def to_json(self) -> str:
        payload = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "params": {"k1": self._params.k1, "b": self._params.b},
            "stats": {
                "doc_count": self.stats.doc_count,
                "avg_doc_len": self.stats.avg_doc_len,
                "vocab_size": self.stats.vocab_size,
            },
            "documents": [{"id": d.id, "title": d.title, "text": d.text} for d in self._docs],
        }
        return json.dumps(payload, ensure_ascii=False)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, data: str) -> "BM25Index":
        try:
            payload = json.loads(data)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"index file is not JSON: {exc}") from None
        if payload.get("format") != INDEX_FORMAT:
            raise CorpusError(f"not a {INDEX_FORMAT} file")
        if payload.get("version") != INDEX_VERSION:
            raise CorpusError(f"unsupported index version {payload.get('version')}")
        docs = [Document(d["id"], d.get("title", ""), d["text"]) for d in payload["documents"]]
        index = cls(docs, BM25Params(**payload["params"]))
        stored = payload.get("stats")
        if stored and stored != {
            "doc_count": index.stats.doc_count,
            "avg_doc_len": index.stats.avg_doc_len,
            "vocab_size": index.stats.vocab_size,
        }:
            raise CorpusError("index stats do not match its documents; file is corrupt")
        return index

    @classmethod
    def load(cls, path: str | Path) -> "BM25Index":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_index(docs: Iterable[Document], k1: float = 1.2, b: float = 0.75) -> BM25Index:
    return BM25Index(list(docs), BM25Params(k1, b))


def retrieve(index: Retriever, query: str, k: int = 3) -> list[RetrievedDoc]:
    return index.retrieve(query, k)


def load_corpus(path: str | Path) -> list[Document]:
    """Read a JSONL corpus of {"id", "title", "text"} objects."""
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docs.append(Document(str(obj["id"]), str(obj.get("title", "")), str(obj["text"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad corpus line ({exc})") from None
    return docs
