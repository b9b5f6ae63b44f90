"""Sentence-level fact-checking against a retriever, and the LEAF score.

For every sentence of a response the rater model is asked, up to
``max_queries`` times, for a search query; each query's top hits are
accumulated as knowledge, and the rater then labels the sentence
Supported or Not Supported given that knowledge and the question context.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping, Sequence

from .corpus_index import RetrievedDoc, Retriever
from .llm_gateway import Backend, GatewayError, GenRequest, generate
from .prompt_kit import (
    DEFAULT_TEMPLATES,
    EmptyOutput,
    PromptTemplate,
    TemplateKind,
    UnparseableVerdict,
    VerdictLabel,
    format_knowledge,
    parse_query,
    parse_verdict,
    split_sentences,
)

logger = logging.getLogger(__name__)


class EmptyResponse(ValueError):
    pass


@dataclass(frozen=True)
class FactCheckConfig:
    max_queries: int = 3
    top_k: int = 3
    model: str = "rater"
    temperature: float = 0.0
    max_tokens: int = 1024
    workers: int = 1
    query_template: PromptTemplate = DEFAULT_TEMPLATES[TemplateKind.QUERY_GEN]
    rating_template: PromptTemplate = DEFAULT_TEMPLATES[TemplateKind.FACT_CHECK]

    def __post_init__(self) -> None:
        if self.max_queries < 1:
            raise ValueError("max_queries must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class SentenceVerdict:
    sentence: str
    label: VerdictLabel
    queries: list[str] = field(default_factory=list)
    evidence: list[RetrievedDoc] = field(default_factory=list)
    rater_raw: str = ""
    error: str | None = None

    @property
    def supported(self) -> bool:
        return self.label is VerdictLabel.SUPPORTED

    def to_dict(self) -> dict[str, Any]:
        return {
            "sentence": self.sentence,
            "label": self.label.value,
            "queries": list(self.queries),
            "evidence": [d.to_dict() for d in self.evidence],
            "rater_raw": self.rater_raw,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SentenceVerdict":
        return cls(
            sentence=d["sentence"],
            label=VerdictLabel(d["label"]),
            queries=list(d.get("queries", [])),
            evidence=[RetrievedDoc.from_dict(e) for e in d.get("evidence", [])],
            rater_raw=d.get("rater_raw", ""),
            error=d.get("error"),
        )


@dataclass
class FactCheckReport:
    context: str
    response: str
    verdicts: list[SentenceVerdict]

    def __post_init__(self) -> None:
        if not self.verdicts:
            raise EmptyResponse("a report needs at least one sentence verdict")

    @property
    def supported(self) -> int:
        return sum(v.supported for v in self.verdicts)

    @property
    def total(self) -> int:
        return len(self.verdicts)

    @property
    def score_fraction(self) -> Fraction:
        return Fraction(self.supported, self.total)

    @property
    def leaf_score(self) -> float:
        # Unparseable verdicts count against the response
        return self.supported / self.total

    @property
    def passed(self) -> bool:
        return self.supported == self.total

    def to_dict(self) -> dict[str, Any]:
        return {
            "context": self.context,
            "response": self.response,
            "leaf_score": self.leaf_score,
            "supported": self.supported,
            "total": self.total,
            "verdicts": [v.to_dict() for v in self.verdicts],
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FactCheckReport":
        return cls(d["context"], d["response"], [SentenceVerdict.from_dict(v) for v in d["verdicts"]])


def _ask(rater: Backend, prompt: str, cfg: FactCheckConfig) -> str:
    req = GenRequest.user(cfg.model, prompt, temperature=cfg.temperature, max_tokens=cfg.max_tokens)
    return generate(rater, req).texts[0]


def check_sentence(
    sentence: str,
    context: str,
    retriever: Retriever,
    rater: Backend,
    cfg: FactCheckConfig | None = None,
) -> SentenceVerdict:
    cfg = cfg or FactCheckConfig()
    if not sentence.strip():
        raise ValueError("sentence must be non-empty")
    verdict = SentenceVerdict(sentence, VerdictLabel.UNPARSEABLE)
    seen: set[str] = set()
    try:
        for _ in range(cfg.max_queries):
            prompt = cfg.query_template.render(
                {
                    "KNOWLEDGE": format_knowledge(d.snippet for d in verdict.evidence),
                    "CONTEXT": context,
                    "STATEMENT": sentence,
                }
            )
            try:
                query = parse_query(_ask(rater, prompt, cfg))
            except EmptyOutput:
                continue
            verdict.queries.append(query)
            for doc in retriever.retrieve(query, cfg.top_k):
                if doc.doc_id not in seen:
                    seen.add(doc.doc_id)
                    verdict.evidence.append(doc)

        prompt = cfg.rating_template.render(
            {
                "KNOWLEDGE": format_knowledge(d.snippet for d in verdict.evidence),
                "CONTEXT": context,
                "STATEMENT": sentence,
            }
        )
        verdict.rater_raw = _ask(rater, prompt, cfg)
    except GatewayError as exc:
        logger.warning("rater failed on %r: %s", sentence[:60], exc)
        verdict.error = f"{type(exc).__name__}: {exc}"
        return verdict

    try:
        verdict.label = parse_verdict(verdict.rater_raw).label
    except UnparseableVerdict as exc:
        verdict.error = f"unparseable verdict: {exc.tail!r}"
    return verdict


def check_response(
    response: str,
    context: str,
    retriever: Retriever,
    rater: Backend,
    cfg: FactCheckConfig | None = None,
) -> FactCheckReport:
    cfg = cfg or FactCheckConfig()
    sentences = split_sentences(response)
    if not sentences:
        raise EmptyResponse("response contains no sentences")
    if cfg.workers == 1:
        verdicts = [check_sentence(s, context, retriever, rater, cfg) for s in sentences]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            verdicts = list(pool.map(lambda s: check_sentence(s, context, retriever, rater, cfg), sentences))
    return FactCheckReport(context, response, verdicts)


def failed_evidence(report: FactCheckReport) -> list[RetrievedDoc]:
    """Evidence gathered for every sentence that did not pass, deduplicated
    by doc id in first-seen order."""
    out: list[RetrievedDoc] = []
    seen: set[str] = set()
    for v in report.verdicts:
        if v.supported:
            continue
        for doc in v.evidence:
            if doc.doc_id not in seen:
                seen.add(doc.doc_id)
                out.append(doc)
    return out


def leaf_score(verdicts: Sequence[SentenceVerdict]) -> float:
    if not verdicts:
        raise EmptyResponse("no verdicts to score")
    return sum(v.supported for v in verdicts) / len(verdicts)
