"""Fact-Check-Then-RAG.

Answer the question, fact-check the answer, and when any sentence fails,
regenerate with the evidence retrieved for the failing sentences as the
knowledge block. Repeats until a response passes or the round budget is
spent.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .corpus_index import RetrievedDoc, Retriever
from .eval_harness import McqItem
from .fact_check import EmptyResponse, FactCheckConfig, FactCheckReport, check_response, failed_evidence
from .llm_gateway import Backend, GenRequest, generate
from .prompt_kit import (
    DEFAULT_TEMPLATES,
    NoAnswer,
    PromptTemplate,
    TemplateKind,
    format_knowledge,
    parse_mcq_answer,
)

logger = logging.getLogger(__name__)


class StopReason(str, enum.Enum):
    PASSED = "Passed"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    NO_ANSWER = "NoAnswer"


@dataclass(frozen=True)
class FcRagConfig:
    max_rounds: int = 3
    model: str = "generator"
    first_temperature: float = 0.0
    regen_temperature: float = 0.0
    max_tokens: int = 1024
    fact_check: FactCheckConfig = field(default_factory=FactCheckConfig)
    template: PromptTemplate = DEFAULT_TEMPLATES[TemplateKind.FC_RAG]

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


@dataclass
class Round:
    prompt: str
    response: str
    report: FactCheckReport | None
    answer: str | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt": self.prompt,
            "response": self.response,
            "answer": self.answer,
            "report": None if self.report is None else self.report.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Round":
        rep = d.get("report")
        return cls(d["prompt"], d["response"], None if rep is None else FactCheckReport.from_dict(rep), d.get("answer"))


@dataclass
class FcRagTrace:
    question: McqItem
    rounds: list[Round]
    stop_reason: StopReason

    @property
    def final_answer(self) -> str | None:
        return self.rounds[-1].answer

    @property
    def first_answer(self) -> str | None:
        return self.rounds[0].answer

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.question.id,
            "question": self.question.to_dict(),
            "rounds": [r.to_dict() for r in self.rounds],
            "final_answer": self.final_answer,
            "stop_reason": self.stop_reason.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FcRagTrace":
        q = d["question"]
        item = McqItem(q["id"], q["question"], q["options"], q["gold"])
        return cls(item, [Round.from_dict(r) for r in d["rounds"]], StopReason(d["stop_reason"]))


def qa_prompt(item: McqItem, knowledge: Sequence[RetrievedDoc] = (), template: PromptTemplate | None = None) -> str:
    template = template or DEFAULT_TEMPLATES[TemplateKind.FC_RAG]
    return template.render(
        {
            "KNOWLEDGE": format_knowledge(d.snippet for d in knowledge),
            "QUESTION": item.question,
            "OPTIONS": item.options_block(),
        }
    )


def _answer(item: McqItem, prompt: str, generator: Backend, cfg: FcRagConfig, temperature: float) -> tuple[str, str | None]:
    req = GenRequest.user(cfg.model, prompt, temperature=temperature, max_tokens=cfg.max_tokens)
    response = generate(generator, req).texts[0]
    try:
        answer = parse_mcq_answer(response, item.letters)
    except NoAnswer:
        logger.info("item %s: no option letter in response", item.id)
        answer = None
    return response, answer


def run_fc_rag(
    item: McqItem,
    generator: Backend,
    retriever: Retriever,
    rater: Backend,
    cfg: FcRagConfig | None = None,
) -> FcRagTrace:
    cfg = cfg or FcRagConfig()
    rounds: list[Round] = []
    knowledge: list[RetrievedDoc] = []
    for r in range(cfg.max_rounds):
        prompt = qa_prompt(item, knowledge, cfg.template)
        temperature = cfg.first_temperature if r == 0 else cfg.regen_temperature
        response, answer = _answer(item, prompt, generator, cfg, temperature)
        try:
            report: FactCheckReport | None = check_response(response, item.context(), retriever, rater, cfg.fact_check)
        except EmptyResponse:
            report = None
        rounds.append(Round(prompt, response, report, answer))
        if report is not None and report.passed:
            return FcRagTrace(item, rounds, StopReason.PASSED)
        knowledge = failed_evidence(report) if report is not None else []

    if all(rd.answer is None for rd in rounds):
        return FcRagTrace(item, rounds, StopReason.NO_ANSWER)
    return FcRagTrace(item, rounds, StopReason.BUDGET_EXHAUSTED)


def run_medrag_baseline(
    item: McqItem,
    generator: Backend,
    retriever: Retriever,
    cfg: FcRagConfig | None = None,
    top_k: int | None = None,
) -> FcRagTrace:
    """Plain RAG: retrieve with the question text, answer once, no fact-check."""
    cfg = cfg or FcRagConfig()
    docs = retriever.retrieve(item.question, top_k or cfg.fact_check.top_k)
    prompt = qa_prompt(item, docs, cfg.template)
    response, answer = _answer(item, prompt, generator, cfg, cfg.first_temperature)
    reason = StopReason.NO_ANSWER if answer is None else StopReason.BUDGET_EXHAUSTED
    return FcRagTrace(item, [Round(prompt, response, None, answer)], reason)


@dataclass(frozen=True)
class DeltaReport:
    total: int
    baseline_correct: int
    fcrag_correct: int
    baseline_accuracy: float
    fcrag_accuracy: float
    delta: float

    @property
    def delta_points(self) -> float:
        return 100.0 * self.delta


def compare_runs(
    baseline: Sequence[FcRagTrace],
    fcrag: Sequence[FcRagTrace],
    gold: Mapping[str, str],
) -> DeltaReport:
    """First-round answers of ``baseline`` against final answers of ``fcrag``."""
    if not baseline or not fcrag:
        raise ValueError("compare_runs needs non-empty runs")
    base = {t.question.id: t.first_answer for t in baseline}
    final = {t.question.id: t.final_answer for t in fcrag}
    if len(base) != len(baseline) or len(final) != len(fcrag):
        raise ValueError("duplicate question ids in a run")
    if set(base) != set(final) or not set(base) <= set(gold):
        missing = sorted(set(base) ^ set(final) | (set(base) - set(gold)))
        raise ValueError(f"runs are not aligned by question id: {missing[:5]}")
    n = len(base)
    b = sum(base[q] == gold[q] for q in base)
    f = sum(final[q] == gold[q] for q in final)
    return DeltaReport(n, b, f, b / n, f / n, (f - b) / n)
