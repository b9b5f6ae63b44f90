"""Acceptance criteria, one test each.

A summary line per criterion (PASS/FAIL plus wall time) is printed at the
end of the pytest run by the hook in conftest.py.
"""

from __future__ import annotations

import itertools
import random
import time
from fractions import Fraction

import mpmath
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SCFE
from leaf.corpus_index import BM25Index, Document, build_index
from leaf.eval_harness import McqItem, score_run
from leaf.fact_check import FactCheckConfig, check_response, check_sentence
from leaf.fc_rag import FcRagConfig, StopReason, compare_runs, run_fc_rag
from leaf.llm_gateway import GenResponse, ScriptedBackend
from leaf.prompt_kit import VerdictLabel, parse_mcq_answer
from leaf.self_training import ScoredResponse, build_pairs
from leaf.simpo import SimpoBatch, check_gradients, loss
from oracles import brute_bm25, count_supported
from pipeline import ARTIFACTS, run_pipeline


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


class VerdictRater:
    """Rater that returns a fixed verdict per statement; query generation
    always yields the same query."""

    backend_id = "verdict-rater"

    def __init__(self, verdicts: dict[str, str]):
        self.verdicts = verdicts

    def generate(self, req):
        prompt = req.prompt
        if "Google Search query" in prompt:
            return GenResponse(("```\nalpha\n```",), self.backend_id)
        statement = prompt.rsplit("STATEMENT:\n", 1)[1]
        return GenResponse((f"reasoning\n[{self.verdicts[statement]}]",), self.backend_id)


TINY = build_index([Document("a", "", "alpha beta"), Document("b", "", "alpha gamma")])


def test_criterion_1_leaf_score_formula():
    """LEAF score equals supported/total for every verdict vector up to length 8"""
    cfg = FactCheckConfig(max_queries=1, top_k=2)
    sentences = [f"Statement number {i} holds." for i in range(8)]
    checked = 0
    with Stopwatch() as sw:
        for n in range(1, 9):
            for flags in itertools.product((True, False), repeat=n):
                verdicts = {s: ("Supported" if f else "Not Supported") for s, f in zip(sentences, flags)}
                report = check_response(" ".join(sentences[:n]), "ctx", TINY, VerdictRater(verdicts), cfg)
                assert report.total == n
                assert report.score_fraction == count_supported(flags)
                assert report.leaf_score == float(count_supported(flags))
                assert report.passed == all(flags)
                checked += 1
    assert checked == 510
    assert sw.elapsed < 1.0, f"took {sw.elapsed:.2f}s"


def test_criterion_2_scfe_walkthrough(scfe_item, scfe_index, scfe_responses):
    """SCFE replay: option-D statement NotSupported, response 1 scores 0.75, FC-RAG round 2 answers E"""
    with Stopwatch() as sw:
        rater = ScriptedBackend.from_jsonl(SCFE / "rater.jsonl")
        generator = ScriptedBackend.from_jsonl(SCFE / "generator.jsonl")
        statement = "Given the high likelihood of septic arthritis, the best management for this patient is surgical drainage of the hip (option D)."
        v = check_sentence(statement, scfe_item.context(), scfe_index, rater)
        assert v.label is VerdictLabel.NOT_SUPPORTED
        assert v.queries[0] == "13-year-old boy knee hip groin pain unable to bear weight best management"
        assert {d.doc_id for d in v.evidence} == {"scfe-1", "scfe-2", "scfe-3"}

        report = check_response(scfe_responses[0]["response"], scfe_item.context(), scfe_index, rater)
        assert report.score_fraction == Fraction(3, 4)
        assert report.leaf_score == 0.75

        trace = run_fc_rag(scfe_item, generator, scfe_index, rater, FcRagConfig(max_rounds=3))
        assert len(trace.rounds) == 2
        assert trace.rounds[0].answer == "D"
        assert trace.rounds[1].answer == "E" and trace.final_answer == "E"
        assert trace.rounds[1].report.leaf_score == 1.0
        assert trace.stop_reason is StopReason.PASSED
        assert "in extreme cases and in older children" in trace.rounds[1].prompt
    assert sw.elapsed < 5.0, f"took {sw.elapsed:.2f}s"


def test_criterion_3_bm25_oracle():
    """BM25 ranking matches brute force on 100 random corpora x 20 queries within 1e-9"""
    rng = random.Random(20240607)
    vocab = [f"w{i}" for i in range(40)]
    compared = 0
    with Stopwatch() as sw:
        for _ in range(100):
            n_docs = rng.randint(1, 50)
            texts = [" ".join(rng.choice(vocab) for _ in range(rng.randint(1, 30))) for _ in range(n_docs)]
            docs = [Document(f"d{i:02d}", "", t) for i, t in enumerate(texts)]
            index = BM25Index(docs)
            for _ in range(20):
                query = " ".join(rng.choice(vocab) for _ in range(rng.randint(1, 6)))
                want = brute_bm25([(d.id, d.text) for d in docs], query)
                got = index.retrieve(query, k=n_docs)
                assert [g.doc_id for g in got] == [w[0] for w in want]
                assert all(abs(g.score - w[1]) <= 1e-9 for g, w in zip(got, want))
                compared += 1
    assert compared == 2000
    assert sw.elapsed < 10.0, f"took {sw.elapsed:.2f}s"


def test_criterion_4_simpo_numerics():
    """SimPO loss at equal rewards matches -log sigmoid(-1.4); gradients pass finite differences on 1000 batches"""
    with Stopwatch() as sw:
        batch = SimpoBatch.from_lists([([-0.4, -0.6], [-0.5]), ([-2.0], [-1.0, -3.0])], beta=2.5, gamma=1.4)
        with mpmath.workdps(60):
            oracle = -mpmath.log(1 / (1 + mpmath.exp(-(mpmath.mpf("-1.4")))))
        assert abs(loss(batch) - float(oracle)) <= 1e-10

        rng = random.Random(1234)
        worst = 0.0
        for _ in range(1000):
            pairs = [
                (
                    [-rng.expovariate(1.0) for _ in range(rng.randint(1, 16))],
                    [-rng.expovariate(1.0) for _ in range(rng.randint(1, 16))],
                )
                for _ in range(rng.randint(1, 8))
            ]
            gc = check_gradients(SimpoBatch.from_lists(pairs, beta=2.5, gamma=1.4), h=1e-5)
            worst = max(worst, gc.max_rel_error)
        assert worst <= 1e-6, worst
    assert sw.elapsed < 10.0, f"took {sw.elapsed:.2f}s"


_scores = st.sampled_from([0.0, 0.5, 0.64, 0.73, 0.75, 1.0])


@settings(max_examples=150, deadline=None, derandomize=True)
@given(st.dictionaries(st.sampled_from("abcdefgh"), st.lists(_scores, min_size=1, max_size=6), min_size=1, max_size=8))
def _pair_property(groups):
    scored = [ScoredResponse(pid, f"{pid}{i}", s, i) for pid, ss in groups.items() for i, s in enumerate(ss)]
    result = build_pairs(scored, {pid: pid for pid in groups})
    chosen = {p.prompt_id: p for p in result.pairs}
    for pid, ss in groups.items():
        if len(ss) < 2 or len(set(ss)) == 1:
            assert pid not in chosen
            continue
        pair = chosen[pid]
        assert pair.chosen.leaf_score > pair.rejected.leaf_score
        assert pair.chosen.sample_index == ss.index(max(ss))
        assert pair.rejected.sample_index == ss.index(min(ss))
    assert [p.to_dict() for p in build_pairs(list(reversed(scored)), {pid: pid for pid in groups}).pairs] == [
        p.to_dict() for p in result.pairs
    ]


def test_criterion_5_preference_pairs():
    """Pairs on {0.75, 0.5, 1.0, 0.64, 0.73}: chosen 1.0, rejected 0.5; strictness, tie skipping, determinism"""
    with Stopwatch() as sw:
        scored = [ScoredResponse("scfe", f"r{i}", s, i) for i, s in enumerate([0.75, 0.5, 1.0, 0.64, 0.73])]
        (pair,) = build_pairs(scored, {"scfe": "prompt"}).pairs
        assert (pair.chosen.leaf_score, pair.chosen.response) == (1.0, "r2")
        assert (pair.rejected.leaf_score, pair.rejected.response) == (0.5, "r1")
        tied = build_pairs([ScoredResponse("t", "x", 0.5, 0), ScoredResponse("t", "y", 0.5, 1)], {"t": ""})
        assert tied.pairs == [] and tied.skipped_tied == 1
        _pair_property()
    assert sw.elapsed < 1.0, f"took {sw.elapsed:.2f}s"


def test_criterion_6_filtered_accuracy_direction():
    """Synthetic cohort with correctness and support correlated: filtered accuracy > accuracy, both exact"""
    rng = random.Random(99)
    letters = "ABCD"
    with Stopwatch() as sw:
        items, responses, verdicts, truth = [], {}, {}, []
        for i in range(60):
            item = McqItem(f"s{i}", f"Synthetic question {i}", {k: f"opt {k}" for k in letters}, "A")
            correct = rng.random() < 0.6
            # correct answers are usually fully supported, wrong ones rarely
            supported = rng.random() < (0.85 if correct else 0.15)
            pick = "A" if correct else rng.choice("BCD")
            claim = f"Item {i} evidence claim."
            answer = f"The answer is ({pick}) for item {i}."
            responses[item.id] = f"{answer} {claim}"
            verdicts[answer] = verdicts[claim] = "Supported" if supported else "Not Supported"
            items.append(item)
            truth.append((correct, supported))

        rater = VerdictRater(verdicts)
        cfg = FactCheckConfig(max_queries=1, top_k=1)
        preds = {it.id: parse_mcq_answer(responses[it.id], it.letters) for it in items}
        reports = {it.id: check_response(responses[it.id], it.context(), TINY, rater, cfg) for it in items}
        m = score_run(items, preds, reports)

        n_correct = sum(c for c, _ in truth)
        f_total = sum(s for _, s in truth)
        f_correct = sum(c and s for c, s in truth)
        assert (m.total, m.correct) == (60, n_correct)
        assert (m.filtered_total, m.filtered_correct) == (f_total, f_correct)
        assert m.accuracy == n_correct / 60
        assert m.filtered_accuracy == f_correct / f_total
        assert m.filtered_accuracy > m.accuracy
    assert sw.elapsed < 1.0, f"took {sw.elapsed:.2f}s"


def _fcrag_world(n: int, initially_right: int, flips: set[int]):
    """Items whose round-2 knowledge flips the answers of ``flips``."""
    items = [McqItem(f"q{i}", f"Question {i}", {"A": "right", "B": "wrong"}, "A") for i in range(n)]
    rules = []
    for i in range(n):
        first = "A" if i < initially_right else "B"
        later = "A" if (i < initially_right or i in flips) else "B"
        rules.append((r"KNOWLEDGE:\nN/A\n(?s:.*)QUESTION:\nQuestion " + str(i) + r"\n", f"The answer is ({first}) for item {i}."))
        rules.append((r"QUESTION:\nQuestion " + str(i) + r"\n", f"The answer is ({later}) for item {i}."))
    generator = ScriptedBackend.from_pairs(rules)
    rater = ScriptedBackend.from_pairs(
        [
            ("Google Search query", "```\nevidence\n```"),
            (r"square brackets(?s:.*)STATEMENT:\nThe answer is \(A\)", "[Supported]"),
            ("square brackets", "[Not Supported]"),
        ]
    )
    corpus = build_index([Document("e1", "", "evidence for the right option"), Document("e2", "", "more evidence")])
    return items, generator, rater, corpus


def test_criterion_7_fc_rag_delta_and_termination():
    """compare_runs delta equals k/n when round-2 knowledge flips k answers; always-fail runs stop at max_rounds"""
    n, right = 10, 3
    cfg = FcRagConfig(max_rounds=3, fact_check=FactCheckConfig(max_queries=1, top_k=2))
    with Stopwatch() as sw:
        for k in range(0, n - right + 1):
            flips = set(range(right, right + k))
            items, gen, rater, corpus = _fcrag_world(n, right, flips)
            gold = {it.id: it.gold for it in items}
            baseline = [run_fc_rag(it, gen, corpus, rater, FcRagConfig(max_rounds=1, fact_check=cfg.fact_check)) for it in items]
            fcrag = [run_fc_rag(it, gen, corpus, rater, cfg) for it in items]
            d = compare_runs(baseline, fcrag, gold)
            assert Fraction(d.fcrag_correct - d.baseline_correct, d.total) == Fraction(k, n)
            assert d.delta == k / n
            for t in fcrag:
                assert len(t.rounds) <= cfg.max_rounds

        # adversarial: nothing ever passes
        always_fail = ScriptedBackend.from_pairs([("Google Search query", "```\nevidence\n```"), ("square brackets", "[Not Supported]")])
        items, gen, _, corpus = _fcrag_world(4, 0, set())
        for max_rounds in range(1, 6):
            c = FcRagConfig(max_rounds=max_rounds, fact_check=cfg.fact_check)
            for it in items:
                t = run_fc_rag(it, gen, corpus, always_fail, c)
                assert len(t.rounds) == max_rounds
                assert t.stop_reason is StopReason.BUDGET_EXHAUSTED
    assert sw.elapsed < 2.0, f"took {sw.elapsed:.2f}s"


def test_criterion_8_end_to_end_determinism(tmp_path):
    """Two full mock CLI pipeline runs produce byte-identical artifacts"""
    with Stopwatch() as sw:
        first = run_pipeline(tmp_path / "run1")
        second = run_pipeline(tmp_path / "run2")
        for name in ARTIFACTS:
            a, b = first[name].read_bytes(), second[name].read_bytes()
            assert a, f"{name} is empty"
            assert a == b, f"{name} differs between runs"
    assert sw.elapsed < 30.0, f"took {sw.elapsed:.2f}s"
