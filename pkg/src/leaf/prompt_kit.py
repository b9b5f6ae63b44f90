"""Prompt templates for query generation, rating and answering, plus the
parsers that turn raw model text back into structured values."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

SUPPORTED_LABEL = "Supported"
NOT_SUPPORTED_LABEL = "Not Supported"
EMPTY_KNOWLEDGE = "N/A"


class TemplateKind(str, enum.Enum):
    QUERY_GEN = "QueryGen"
    FACT_CHECK = "FactCheck"
    FC_RAG = "FcRag"


REQUIRED_PLACEHOLDERS: dict[TemplateKind, tuple[str, ...]] = {
    TemplateKind.QUERY_GEN: ("KNOWLEDGE", "CONTEXT", "STATEMENT"),
    TemplateKind.FACT_CHECK: ("KNOWLEDGE", "CONTEXT", "STATEMENT"),
    TemplateKind.FC_RAG: ("KNOWLEDGE", "QUESTION", "OPTIONS"),
}

# Accepts both the long form {_KNOWLEDGE_PLACEHOLDER} and the short form {_KNOWLEDGE_}.
_PLACEHOLDER = re.compile(r"\{_([A-Z]+)_(?:PLACEHOLDER)?\}")

QUERY_GEN_BODY = """Instructions:
1. You have been given a STATEMENT, a CONTEXT and some KNOWLEDGE points.
2. Your goal is to try to find evidence that either supports or does not support the factual accuracy of the given STATEMENT in the given CONTEXT.
3. To do this, you are allowed to issue ONE Google Search query that you think will allow you to find additional useful evidence.
4. Your query should aim to obtain new information that does not appear in the KNOWLEDGE. This new information should be useful for determining the factual accuracy of the given STATEMENT.
5. Format your final query by putting it in a markdown code block.

KNOWLEDGE:
{_KNOWLEDGE_PLACEHOLDER}

CONTEXT:
{_CONTEXT_PLACEHOLDER}

STATEMENT:
{_STATEMENT_PLACEHOLDER}"""

FACT_CHECK_BODY = """Instructions:
1. You have been given a STATEMENT, a CONTEXT and some KNOWLEDGE points.
2. Determine whether the given STATEMENT is supported by the given CONTEXT, you can use the given KNOWLEDGE to support your decision if necessary. The STATEMENT is supported if it is a proper action or reasoning given the CONTEXT.
3. Before showing your answer, think step-by-step and show your specific reasoning.
4. If the STATEMENT is supported by the CONTEXT, be sure to show the supporting evidence.
5. After stating your reasoning, restate the STATEMENT and then determine your final answer based on your reasoning and the STATEMENT.
6. Your final answer should be either "{SUPPORTED_LABEL}" or
"{NOT_SUPPORTED_LABEL}". Wrap your final answer in square brackets.

KNOWLEDGE:
{_KNOWLEDGE_PLACEHOLDER}

CONTEXT:
{_CONTEXT_PLACEHOLDER}

STATEMENT:
{_STATEMENT_PLACEHOLDER}"""

FC_RAG_BODY = """Given a multiple choice question, please select the correct answer and also provide a detailed reasoning for your choice. You can using the information provided in the knowledge section if necessary.

KNOWLEDGE:
{_KNOWLEDGE_PLACEHOLDER}

QUESTION:
{_QUESTION_PLACEHOLDER}

OPTIONS:
{_OPTIONS_PLACEHOLDER}

ANSWER:"""


class TemplateError(ValueError):
    pass


class MissingPlaceholder(TemplateError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


@dataclass(frozen=True)
class PromptTemplate:
    kind: TemplateKind
    body: str

    def __post_init__(self) -> None:
        # the rater labels are fixed constants, not per-call bindings
        body = self.body.replace("{SUPPORTED_LABEL}", SUPPORTED_LABEL).replace(
            "{NOT_SUPPORTED_LABEL}", NOT_SUPPORTED_LABEL
        )
        object.__setattr__(self, "body", body)
        object.__setattr__(self, "kind", TemplateKind(self.kind))

    @property
    def placeholders(self) -> list[str]:
        return [m.group(1) for m in _PLACEHOLDER.finditer(self.body)]

    @classmethod
    def from_file(cls, kind: TemplateKind | str, path: str | Path) -> "PromptTemplate":
        return cls(TemplateKind(kind), Path(path).read_text(encoding="utf-8"))

    def render(self, bindings: Mapping[str, str]) -> str:
        return render(self, bindings)


DEFAULT_TEMPLATES: dict[TemplateKind, PromptTemplate] = {
    TemplateKind.QUERY_GEN: PromptTemplate(TemplateKind.QUERY_GEN, QUERY_GEN_BODY),
    TemplateKind.FACT_CHECK: PromptTemplate(TemplateKind.FACT_CHECK, FACT_CHECK_BODY),
    TemplateKind.FC_RAG: PromptTemplate(TemplateKind.FC_RAG, FC_RAG_BODY),
}


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Substitute placeholders in a single pass.

    Values are inserted verbatim; placeholder-like text inside a value is
    never expanded. Raises MissingPlaceholder naming the first unbound name.
    """
    needed = list(REQUIRED_PLACEHOLDERS[template.kind])
    needed += [p for p in template.placeholders if p not in needed]
    for name in needed:
        if name not in bindings or bindings[name] is None:
            raise MissingPlaceholder(name)
    return _PLACEHOLDER.sub(lambda m: bindings[m.group(1)], template.body)


def format_knowledge(snippets: Iterable[str]) -> str:
    """Numbered evidence block; "N/A" when there is nothing to show."""
    lines = [f"({i}). {s}" for i, s in enumerate(snippets, start=1)]
    return "\n".join(lines) if lines else EMPTY_KNOWLEDGE


# ---------------------------------------------------------------- parsers


class ParseError(ValueError):
    pass


class EmptyOutput(ParseError):
    pass


class UnparseableVerdict(ParseError):
    def __init__(self, tail: str):
        super().__init__(f"no verdict label in {tail!r}")
        self.tail = tail


class NoAnswer(ParseError):
    pass


_FENCE = re.compile(r"```(.*?)```", re.S)


def parse_query(model_output: str) -> str:
    """Search query from a query-generation reply.

    Uses the last fenced code block; falls back to the last non-empty line
    when the model ignored the formatting instruction.
    """
    if not model_output or not model_output.strip():
        raise EmptyOutput("model output is empty")
    for block in reversed(_FENCE.findall(model_output)):
        if "\n" in block:
            first, rest = block.split("\n", 1)
            # a bare word on the opening line is a language tag
            if not first.strip() or re.fullmatch(r"[\w+-]+", first.strip()):
                block = rest
        block = block.strip()
        if block:
            return block
    for line in reversed(model_output.splitlines()):
        line = line.strip().strip("`").strip()
        if line:
            return line
    raise EmptyOutput("model output has no query text")


class VerdictLabel(str, enum.Enum):
    SUPPORTED = "Supported"
    NOT_SUPPORTED = "NotSupported"
    UNPARSEABLE = "Unparseable"


@dataclass(frozen=True)
class Verdict:
    label: VerdictLabel
    raw: str


_BRACKETED = re.compile(r"\[([^\[\]]*)\]")


def parse_verdict(model_output: str) -> Verdict:
    """Read the rater's label from the last square-bracketed token."""
    tokens = _BRACKETED.findall(model_output or "")
    tail = (model_output or "")[-200:]
    if not tokens:
        raise UnparseableVerdict(tail)
    norm = re.sub(r"[\s_\-]+", " ", tokens[-1]).strip().lower()
    if norm == "supported":
        return Verdict(VerdictLabel.SUPPORTED, model_output)
    if norm in ("not supported", "notsupported"):
        return Verdict(VerdictLabel.NOT_SUPPORTED, model_output)
    raise UnparseableVerdict(tail)


def parse_mcq_answer(model_output: str, valid_options: Iterable[str]) -> str:
    """Pick the chosen option letter out of a free-text answer.

    Explicit statements ("the correct answer is (E)", "**Answer**: B") win
    over everything else, and the last of them wins among themselves since
    answers tend to close with a restatement. Without one, an option the
    response opens with is used, then the last "option X" mention, then the
    last bare "(X)".
    """
    letters = sorted({o.strip() for o in valid_options})
    if not letters or any(len(x) != 1 or not x.isupper() for x in letters):
        raise ValueError(f"valid_options must be single uppercase letters, got {letters}")
    text = model_output or ""
    cls = "[" + "".join(re.escape(x) for x in letters) + "]"

    explicit = re.compile(
        r"answer(?:\*\*)?\s*(?:is|:)(?:\*\*)?\s*(?:option\s*)?\(?\**(" + cls + r")\b(?!')",
        re.I,
    )
    hits = [m for m in explicit.finditer(text) if m.group(1) in letters]
    if hits:
        return hits[-1].group(1)

    leading = re.match(r"\s*(?:[*_#>\s]*)\(?(" + cls + r")[).:]\s", text)
    if leading:
        return leading.group(1)

    for pattern in (r"\boption\s*\(?(" + cls + r")\b\)?", r"\((" + cls + r")\)"):
        found = re.findall(pattern, text, flags=re.I if pattern.startswith(r"\boption") else 0)
        found = [f for f in found if f in letters]
        if found:
            return found[-1]
    raise NoAnswer("no option letter found")


# ------------------------------------------------------ sentence splitting

_ABBREVIATIONS = frozenset(
    "dr mr mrs ms prof vs e.g i.e approx fig figs eq st jr sr al cf ca resp mt inc ltd".split()
)
_TERMINAL = re.compile(r"[.!?]+(?:[\"'”’)\]]|\*\*)*(?=\s|$)")
_INLINE_BULLET = re.compile(r"(?<=[.!?:])[ \t]+(?=[*•-][ \t])")
_BOLD_LABEL = re.compile(r"[ \t]+(?=\*\*[^*\n]+?(?:\*\*:|:\*\*))")
_LEADING_BOLD = re.compile(r"(\*\*[^*\n]+\*\*)[ \t]+(?=[^\s:])")
_LIST_NUMBER = re.compile(r"(?:^|\n)[ \t]*\d+$")


def _is_protected(text: str, punct_start: int) -> bool:
    before = text[:punct_start]
    if _LIST_NUMBER.search(before):
        return True
    m = re.search(r"(\S+)$", before)
    if not m:
        return False
    word = m.group(1).lstrip("(\"'*").lower()
    return word in _ABBREVIATIONS


def split_sentences(text: str) -> list[str]:
    """Rule-based sentence segmentation.

    Boundaries: '.', '!' or '?' followed by whitespace, line breaks, inline
    markdown bullets and bold headers/labels. Abbreviations and decimals are
    never split. Segments are whitespace-trimmed slices of the input, so no
    non-whitespace character is lost.
    """
    if not text or not text.strip():
        return []
    cuts = {0, len(text)}
    for i, ch in enumerate(text):
        if ch == "\n":
            cuts.add(i)
    for m in _INLINE_BULLET.finditer(text):
        cuts.add(m.start())
    for m in _BOLD_LABEL.finditer(text):
        cuts.add(m.start())
    for m in _TERMINAL.finditer(text):
        if m.group(0)[0] == "." and _is_protected(text, m.start()):
            continue
        cuts.add(m.end())

    pieces = []
    bounds = sorted(cuts)
    for lo, hi in zip(bounds, bounds[1:]):
        seg = text[lo:hi].strip()
        while seg:
            head = _LEADING_BOLD.match(seg)
            if head is None:
                break
            pieces.append(head.group(1))
            seg = seg[head.end():].strip()
        if seg:
            pieces.append(seg)
    return pieces
