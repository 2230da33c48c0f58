"""Retrieval-backend contract: an HTTP client and an in-memory lexical index.

The in-memory index is intentionally simple (token overlap damped by
document frequency); it exists for deterministic tests and demos, not
recall.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Protocol

import requests

from .errors import ArrError, IoFailure

DEFAULT_TOP_K = 3

_WORD_RE = re.compile(r"[a-z0-9]+")


class RetrievalError(ArrError):
    """Base class for retrieval failures."""


class ServiceUnreachable(RetrievalError):
    """The retrieval service could not be reached or replied garbage."""


class EmptyQuery(RetrievalError):
    """The query is empty after trimming."""


class DuplicateDocId(RetrievalError):
    """The corpus contains the same document id twice."""


@dataclass
class Document:
    doc_id: str
    title: str
    text: str
    rank: int
    source_query: str


@dataclass
class RetrievalEvent:
    turn: int
    query: str
    documents: list[Document]


class Retriever(Protocol):
    def retrieve(self, query: str, top_k: int = DEFAULT_TOP_K) -> list[Document]: ...


def _tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


class InMemoryIndex:
    """Immutable lexical index over (id, title, text) documents.

    Score = sum over matched query terms of 1 / (1 + df(term)), ties broken
    by ascending doc id. Zero-score documents are never returned.
    """

    def __init__(self, docs: Iterable[tuple[str, str, str]]):
        self._docs: list[tuple[str, str, str]] = []
        seen: set[str] = set()
        for doc_id, title, text in docs:
            if doc_id in seen:
                raise DuplicateDocId(f"duplicate doc id {doc_id!r}")
            seen.add(doc_id)
            self._docs.append((doc_id, title, text))
        self._terms = [set(_tokenize(f"{title} {text}")) for _, title, text in self._docs]
        self._df = Counter(term for terms in self._terms for term in terms)

    def __len__(self) -> int:
        return len(self._docs)

    def score(self, query: str, doc_index: int) -> float:
        query_terms = set(_tokenize(query))
        doc_terms = self._terms[doc_index]
        return sum(1.0 / (1.0 + self._df[t]) for t in query_terms if t in doc_terms)

    def retrieve(self, query: str, top_k: int = DEFAULT_TOP_K) -> list[Document]:
        if not query.strip():
            raise EmptyQuery("query is empty")
        scored = []
        for idx, (doc_id, _, _) in enumerate(self._docs):
            score = self.score(query, idx)
            if score > 0.0:
                scored.append((-score, doc_id, idx))
        scored.sort()
        out = []
        for rank, (_, doc_id, idx) in enumerate(scored[:top_k], start=1):
            _, title, text = self._docs[idx]
            out.append(Document(doc_id, title, text, rank, query))
        return out


def index_corpus(docs: Iterable[tuple[str, str, str]]) -> InMemoryIndex:
    """Build an immutable index handle from (id, title, text) triples."""
    return InMemoryIndex(docs)


def load_corpus(path: str) -> list[tuple[str, str, str]]:
    """Read a JSONL corpus with fields id, title, text."""
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot open corpus {path}: {exc}") from exc
    docs = []
    with handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                docs.append((str(record["id"]), str(record["title"]), str(record["text"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise RetrievalError(f"bad corpus line {line_no}: {exc}") from exc
    return docs


@dataclass
class HttpRetrieverConfig:
    url: str
    timeout: float = 30.0
    retry_count: int = 2


class HttpRetriever:
    """POSTs {query, top_k} to a search service returning {documents: [...]}."""

    def __init__(self, config: HttpRetrieverConfig):
        self.config = config

    def retrieve(self, query: str, top_k: int = DEFAULT_TOP_K) -> list[Document]:
        if not query.strip():
            raise EmptyQuery("query is empty")
        last_error: Exception | None = None
        for _ in range(self.config.retry_count + 1):
            try:
                response = requests.post(
                    self.config.url,
                    json={"query": query, "top_k": top_k},
                    timeout=self.config.timeout,
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code >= 500:
                last_error = ServiceUnreachable(f"server error {response.status_code}")
                continue
            if response.status_code != 200:
                raise ServiceUnreachable(f"retrieval service returned {response.status_code}")
            return self._parse(response, query, top_k)
        raise ServiceUnreachable(f"retrieval service unreachable: {last_error}")

    def _parse(self, response: requests.Response, query: str, top_k: int) -> list[Document]:
        try:
            items = response.json()["documents"]
            return [
                Document(str(d["id"]), str(d["title"]), str(d["text"]), rank, query)
                for rank, d in enumerate(items[:top_k], start=1)
            ]
        except (ValueError, KeyError, TypeError) as exc:
            raise ServiceUnreachable(f"malformed retrieval response: {exc}") from exc
