"""Training data from fact-checked samples: an SFT set of fully supported
responses and one chosen/rejected pair per prompt for preference tuning."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredResponse:
    prompt_id: str
    response: str
    leaf_score: float
    sample_index: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.leaf_score <= 1.0:
            raise ValueError(f"leaf_score must be in [0, 1], got {self.leaf_score}")
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")


@dataclass(frozen=True)
class PreferencePair:
    prompt_id: str
    prompt: str
    chosen: ScoredResponse
    rejected: ScoredResponse

    @property
    def gap(self) -> float:
        return self.chosen.leaf_score - self.rejected.leaf_score

    def to_dict(self) -> dict[str, Any]:
        return {
            "prompt": self.prompt,
            "chosen": self.chosen.response,
            "rejected": self.rejected.response,
            "chosen_score": self.chosen.leaf_score,
            "rejected_score": self.rejected.leaf_score,
        }


def _group(scored: Iterable[ScoredResponse]) -> dict[str, list[ScoredResponse]]:
    groups: dict[str, list[ScoredResponse]] = defaultdict(list)
    for s in scored:
        groups[s.prompt_id].append(s)
    for pid, items in groups.items():
        idx = [s.sample_index for s in items]
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate sample_index for prompt {pid}")
        items.sort(key=lambda s: s.sample_index)
    return dict(sorted(groups.items()))


def _prompt_for(prompts: Mapping[str, str], pid: str) -> str:
    try:
        return prompts[pid]
    except KeyError:
        raise KeyError(f"prompt_id {pid!r} missing from prompts") from None


def build_sft(scored: Iterable[ScoredResponse], prompts: Mapping[str, str]) -> list[dict[str, str]]:
    """Keep responses whose LEAF score is exactly 1.0."""
    out = []
    for pid, items in _group(scored).items():
        prompt = _prompt_for(prompts, pid)
        out.extend({"prompt": prompt, "response": s.response} for s in items if s.leaf_score == 1.0)
    return out


@dataclass
class PairBuild:
    pairs: list[PreferencePair] = field(default_factory=list)
    skipped_too_few: int = 0
    skipped_tied: int = 0
    skipped_gap: int = 0


def select_pair(items: Sequence[ScoredResponse]) -> tuple[ScoredResponse, ScoredResponse]:
    """Highest and lowest scored samples; ties go to the lower sample index."""
    chosen = min(items, key=lambda s: (-s.leaf_score, s.sample_index))
    rejected = min(items, key=lambda s: (s.leaf_score, s.sample_index))
    return chosen, rejected


def build_pairs(
    scored: Iterable[ScoredResponse],
    prompts: Mapping[str, str],
    min_gap: float = 0.0,
) -> PairBuild:
    """One top-vs-bottom pair per prompt, ordered by prompt id.

    Prompts with fewer than two samples, with all scores equal, or with a
    score spread below ``min_gap`` are skipped and counted.
    """
    result = PairBuild()
    for pid, items in _group(scored).items():
        if len(items) < 2:
            result.skipped_too_few += 1
            continue
        chosen, rejected = select_pair(items)
        if chosen.leaf_score == rejected.leaf_score:
            result.skipped_tied += 1
            continue
        if chosen.leaf_score - rejected.leaf_score < min_gap:
            result.skipped_gap += 1
            continue
        result.pairs.append(PreferencePair(pid, _prompt_for(prompts, pid), chosen, rejected))
    if result.skipped_too_few:
        logger.warning("%d prompts skipped: fewer than 2 samples", result.skipped_too_few)
    return result
