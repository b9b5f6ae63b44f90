from __future__ import annotations

import json
import math
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leaf.corpus_index import (
    BM25Index,
    BM25Params,
    CorpusError,
    Document,
    RetrievedDoc,
    build_index,
    load_corpus,
    retrieve,
    tokenize,
)
from oracles import brute_bm25

SCFE_QUERY = "13-year-old boy knee hip groin pain unable to bear weight best management"


def docs(*texts: str) -> list[Document]:
    return [Document(f"d{i}", "", t) for i, t in enumerate(texts)]


def test_tokenize():
    assert tokenize("13-year-old Boy's KNEE_pain!") == ["13", "year", "old", "boy", "s", "knee", "pain"]


def test_scfe_passages_are_top_three(scfe_index):
    hits = scfe_index.retrieve(SCFE_QUERY, 3)
    assert {h.doc_id for h in hits} == {"scfe-1", "scfe-2", "scfe-3"}
    assert hits[0].score >= hits[1].score >= hits[2].score


def test_no_overlap_gives_empty(scfe_index):
    assert scfe_index.retrieve("zzzz qqqq", 3) == []
    assert scfe_index.retrieve("", 3) == []


def test_k_larger_than_corpus():
    ix = build_index(docs("apple pie", "apple tart", "banana"))
    assert [h.doc_id for h in ix.retrieve("apple", 10)] == ["d0", "d1"]


def test_ties_break_by_doc_id():
    ix = BM25Index([Document("b", "", "same words"), Document("a", "", "same words")])
    assert [h.doc_id for h in ix.retrieve("same", 2)] == ["a", "b"]


def test_k_must_be_positive():
    with pytest.raises(CorpusError):
        build_index(docs("a")).retrieve("a", 0)


def test_idf_always_positive():
    ix = build_index(docs("x y", "x", "x z"))
    # term in every document still has positive idf
    assert ix.idf("x") == pytest.approx(math.log(1 + 0.5 / 3.5))
    assert ix.idf("x") > 0
    assert ix.idf("y") == pytest.approx(math.log(1 + 2.5 / 1.5))
    # unseen terms contribute nothing
    assert ix.idf("missing") == 0.0


def test_title_not_indexed():
    ix = BM25Index([Document("a", "hip", "knee"), Document("b", "", "hip")])
    assert [h.doc_id for h in ix.retrieve("hip")] == ["b"]


def test_snippet_is_text(scfe_index):
    hit = scfe_index.retrieve("Legg Calve Perthes", 1)[0]
    assert hit.doc_id == "scfe-3"
    assert hit.snippet.startswith("and pelvic osteoto-mies")


@pytest.mark.parametrize(
    "bad",
    [dict(id="", title="", text="x"), dict(id="a", title="", text=None)],
)
def test_document_validation(bad):
    with pytest.raises((CorpusError, TypeError, ValueError)):
        Document(**bad)


def test_empty_and_duplicate_corpus():
    with pytest.raises(CorpusError):
        BM25Index([])
    with pytest.raises(CorpusError):
        BM25Index([Document("a", "", "x"), Document("a", "", "y")])


@pytest.mark.parametrize("k1,b", [(-0.1, 0.5), (0.0, 0.5), (1.2, 1.5), (1.2, -0.1)])
def test_param_validation(k1, b):
    with pytest.raises(CorpusError):
        BM25Params(k1, b)


def test_zero_token_corpus():
    ix = build_index(docs("...", "!!"))
    assert ix.stats.vocab_size == 0
    assert ix.retrieve("anything") == []


def test_empty_text_rejected():
    with pytest.raises(CorpusError):
        Document("a", "t", "")


def test_stats(scfe_index):
    s = scfe_index.stats
    assert s.doc_count == 10
    assert s.vocab_size == len({t for d in scfe_index.documents for t in tokenize(d.text)})
    assert s.avg_doc_len == pytest.approx(sum(len(tokenize(d.text)) for d in scfe_index.documents) / 10)


def test_contains(scfe_index):
    assert "scfe-1" in scfe_index and "nope" not in scfe_index


def test_save_load_roundtrip(tmp_path, scfe_index):
    p = tmp_path / "ix.json"
    scfe_index.save(p)
    header = json.loads(p.read_text())
    assert header["format"] == "leaf-bm25-index" and header["version"] == 1
    again = BM25Index.load(p)
    assert again.stats == scfe_index.stats
    assert again.retrieve(SCFE_QUERY, 5) == scfe_index.retrieve(SCFE_QUERY, 5)
    # persistence is deterministic
    again.save(tmp_path / "ix2.json")
    assert (tmp_path / "ix2.json").read_bytes() == p.read_bytes()


def test_load_rejects_wrong_version(tmp_path, scfe_index):
    doc = json.loads(scfe_index.to_json())
    doc["version"] = 99
    with pytest.raises(CorpusError):
        BM25Index.from_json(json.dumps(doc))
    doc["version"] = 1
    doc["format"] = "something-else"
    with pytest.raises(CorpusError):
        BM25Index.from_json(json.dumps(doc))


def test_load_corpus_reports_line(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"id": "a", "title": "", "text": "x"}\n{"id": "b"}\n')
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(p)


def test_retrieved_doc_roundtrip():
    d = RetrievedDoc("a", 1.5, "text")
    assert RetrievedDoc.from_dict(d.to_dict()) == d


def test_module_level_retrieve(scfe_index):
    assert retrieve(scfe_index, SCFE_QUERY, 2) == scfe_index.retrieve(SCFE_QUERY, 2)


def test_concurrent_retrieval_is_consistent(scfe_index):
    expected = scfe_index.retrieve(SCFE_QUERY, 5)
    results = []

    def work():
        for _ in range(50):
            results.append(scfe_index.retrieve(SCFE_QUERY, 5) == expected)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(results) and len(results) == 400


_words = st.sampled_from("alpha beta gamma delta eps zeta eta theta iota kappa".split())
_doc_text = st.lists(_words, min_size=1, max_size=12).map(" ".join)


@settings(max_examples=150, deadline=None)
@given(
    texts=st.lists(_doc_text, min_size=1, max_size=8),
    query=st.lists(_words, min_size=1, max_size=5).map(" ".join),
    k=st.integers(1, 10),
    k1=st.floats(0.01, 3.0),
    b=st.floats(0.0, 1.0),
)
def test_matches_brute_force(texts, query, k, k1, b):
    corpus = docs(*texts)
    got = BM25Index(corpus, BM25Params(k1, b)).retrieve(query, k)
    want = brute_bm25([(d.id, d.text) for d in corpus], query, k1, b)[:k]
    assert [g.doc_id for g in got] == [w[0] for w in want]
    for g, (_, s) in zip(got, want):
        assert abs(g.score - s) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(texts=st.lists(_doc_text, min_size=1, max_size=8), query=st.lists(_words, min_size=1, max_size=4).map(" ".join))
def test_retrieval_invariants(texts, query):
    ix = build_index(docs(*texts))
    hits = ix.retrieve(query, 5)
    scores = [h.score for h in hits]
    assert scores == sorted(scores, reverse=True)
    assert len({h.doc_id for h in hits}) == len(hits)
    qset = set(tokenize(query))
    for h in hits:
        assert h.score > 0
        assert h.doc_id in ix
        assert qset & set(tokenize(h.snippet))
