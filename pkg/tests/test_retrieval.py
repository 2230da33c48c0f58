from __future__ import annotations

import json
import re
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from arr.retrieval import (
    DuplicateDocId,
    EmptyQuery,
    HttpRetriever,
    HttpRetrieverConfig,
    InMemoryIndex,
    ServiceUnreachable,
    index_corpus,
    load_corpus,
)

CORPUS = [
    ("a1", "France", "Paris is the capital of France and a major city."),
    ("a2", "Germany", "Berlin is the capital of Germany."),
    ("a3", "Rivers", "The Seine flows through Paris toward the sea."),
    ("a4", "Cooking", "A recipe for bread with flour and water."),
]


def oracle_ranking(docs, query, top_k):
    """Independent ranking: recompute overlap/df scores from scratch."""
    tok = lambda s: re.findall(r"[a-z0-9]+", s.lower())
    term_sets = [set(tok(f"{title} {text}")) for _, title, text in docs]
    df = Counter(t for terms in term_sets for t in terms)
    q = set(tok(query))
    scored = []
    for (doc_id, _, _), terms in zip(docs, term_sets):
        score = sum(1.0 / (1.0 + df[t]) for t in q if t in terms)
        if score > 0:
            scored.append((-score, doc_id))
    scored.sort()
    return [doc_id for _, doc_id in scored[:top_k]]


class TestInMemoryIndex:
    def test_best_match_ranks_first(self):
        index = index_corpus(CORPUS)
        docs = index.retrieve("capital of France", top_k=3)
        assert docs[0].doc_id == "a1"
        assert [d.rank for d in docs] == list(range(1, len(docs) + 1))

    def test_matches_exhaustive_oracle(self):
        index = index_corpus(CORPUS)
        for query in ("paris", "capital", "bread recipe", "the seine in paris", "germany berlin"):
            for top_k in (1, 2, 3, 10):
                got = [d.doc_id for d in index.retrieve(query, top_k)]
                assert got == oracle_ranking(CORPUS, query, top_k), query

    def test_empty_query(self):
        index = index_corpus(CORPUS)
        with pytest.raises(EmptyQuery):
            index.retrieve("   ")

    def test_no_hits_is_valid(self):
        index = index_corpus(CORPUS)
        assert index.retrieve("zzzqqq") == []

    def test_top_k_cannot_exceed_corpus(self):
        index = index_corpus(CORPUS[:2])
        assert len(index.retrieve("capital", top_k=3)) <= 2

    def test_duplicate_doc_id(self):
        with pytest.raises(DuplicateDocId):
            index_corpus([("x", "t", "a"), ("x", "t", "b")])

    def test_tie_broken_by_doc_id(self):
        docs = [("b9", "t", "same words here"), ("b1", "t", "same words here")]
        index = index_corpus(docs)
        got = index.retrieve("same words", top_k=2)
        assert [d.doc_id for d in got] == ["b1", "b9"]

    def test_single_doc_corpus(self):
        index = index_corpus([("only", "t", "lonely document text")])
        assert index.retrieve("lonely text")[0].doc_id == "only"

    def test_deterministic(self):
        first = index_corpus(CORPUS).retrieve("paris capital", 3)
        second = index_corpus(CORPUS).retrieve("paris capital", 3)
        assert [(d.doc_id, d.rank) for d in first] == [(d.doc_id, d.rank) for d in second]

    def test_scores_nonincreasing_with_rank(self):
        index = index_corpus(CORPUS)
        ids = {doc_id: i for i, (doc_id, _, _) in enumerate(CORPUS)}
        docs = index.retrieve("paris capital france", top_k=4)
        scores = [index.score(d.source_query, ids[d.doc_id]) for d in docs]
        assert scores == sorted(scores, reverse=True)

    def test_source_query_recorded(self):
        docs = index_corpus(CORPUS).retrieve("paris", 1)
        assert docs[0].source_query == "paris"


class TestCorpusFile:
    def test_load(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        with open(path, "w") as handle:
            for doc_id, title, text in CORPUS:
                handle.write(json.dumps({"id": doc_id, "title": title, "text": text}) + "\n")
        assert load_corpus(str(path)) == CORPUS

    def test_missing_file(self):
        from arr.errors import IoFailure

        with pytest.raises(IoFailure):
            load_corpus("/nonexistent/corpus.jsonl")


class _SearchHandler(BaseHTTPRequestHandler):
    documents = [{"id": "a1", "title": "France", "text": "Paris"}]
    status = 200

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        _ = self.rfile.read(length)
        if type(self).status != 200:
            self.send_response(type(self).status)
            self.end_headers()
            return
        data = json.dumps({"documents": type(self).documents}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def search_server():
    server = HTTPServer(("127.0.0.1", 0), _SearchHandler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    _SearchHandler.status = 200
    yield f"http://127.0.0.1:{server.server_port}/retrieve"
    server.shutdown()


class TestHttpRetriever:
    def test_documents_get_ranks(self, search_server):
        retriever = HttpRetriever(HttpRetrieverConfig(url=search_server, timeout=5.0))
        docs = retriever.retrieve("paris", top_k=3)
        assert [(d.doc_id, d.rank) for d in docs] == [("a1", 1)]
        assert docs[0].source_query == "paris"

    def test_unreachable(self):
        retriever = HttpRetriever(
            HttpRetrieverConfig(url="http://127.0.0.1:9/retrieve", timeout=1.0, retry_count=0)
        )
        with pytest.raises(ServiceUnreachable):
            retriever.retrieve("paris")

    def test_empty_query(self, search_server):
        retriever = HttpRetriever(HttpRetrieverConfig(url=search_server))
        with pytest.raises(EmptyQuery):
            retriever.retrieve("")
