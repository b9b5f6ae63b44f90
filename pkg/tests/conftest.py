from __future__ import annotations

import json
from pathlib import Path

import pytest

from leaf.corpus_index import BM25Index, build_index, load_corpus
from leaf.eval_harness import McqItem, load_dataset
from leaf.llm_gateway import ScriptedBackend

FIXTURES = Path(__file__).parent / "fixtures"
SCFE = FIXTURES / "scfe"


@pytest.fixture(scope="session")
def scfe_item() -> McqItem:
    return load_dataset(SCFE / "dataset.jsonl")[0]


@pytest.fixture(scope="session")
def scfe_index() -> BM25Index:
    return build_index(load_corpus(SCFE / "corpus.jsonl"))


@pytest.fixture(scope="session")
def scfe_responses() -> list[dict]:
    return json.loads((SCFE / "responses.json").read_text(encoding="utf-8"))


@pytest.fixture
def scfe_rater() -> ScriptedBackend:
    return ScriptedBackend.from_jsonl(SCFE / "rater.jsonl")


@pytest.fixture
def scfe_generator() -> ScriptedBackend:
    return ScriptedBackend.from_jsonl(SCFE / "generator.jsonl")


_ACCEPTANCE: list[tuple[str, str, float]] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.module.__name__ != "test_acceptance":
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        number = item.name.split("_")[2]
        _ACCEPTANCE.append((number, title, "PASS" if rep.passed else "FAIL", rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, verdict, duration in sorted(_ACCEPTANCE, key=lambda r: int(r[0])):
        terminalreporter.write_line(f"criterion {number}: {verdict} ({duration:.2f}s) {title}")
