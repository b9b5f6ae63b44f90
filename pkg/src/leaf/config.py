"""Experiment configuration (TOML).

Every key is optional; see README.md for the full schema. Relative paths
(fixtures, templates) resolve against the config file's directory.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fact_check import FactCheckConfig
from .fc_rag import FcRagConfig
from .llm_gateway import Backend, backend_from_config
from .prompt_kit import DEFAULT_TEMPLATES, PromptTemplate, TemplateKind


@dataclass
class SamplingConfig:
    # multi-sample fact-check runs vs. ranking / preference cohorts
    fact_check_temperature: float = 1.2
    fact_check_samples: int = 10
    ranking_temperature: float = 0.8
    ranking_samples: int = 5
    max_tokens: int = 1024


@dataclass
class LeafConfig:
    generator: dict[str, Any] = field(default_factory=dict)
    rater: dict[str, Any] = field(default_factory=dict)
    fact_check: dict[str, Any] = field(default_factory=dict)
    fc_rag: dict[str, Any] = field(default_factory=dict)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    index: dict[str, Any] = field(default_factory=dict)
    templates: dict[str, str] = field(default_factory=dict)
    workers: int = 1
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path | None) -> "LeafConfig":
        if path is None:
            return cls()
        path = Path(path)
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        known = {"generator", "rater", "fact_check", "fc_rag", "sampling", "index", "templates", "workers"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            generator=raw.get("generator", {}),
            rater=raw.get("rater", {}),
            fact_check=raw.get("fact_check", {}),
            fc_rag=raw.get("fc_rag", {}),
            sampling=SamplingConfig(**raw.get("sampling", {})),
            index=raw.get("index", {}),
            templates=raw.get("templates", {}),
            workers=int(raw.get("workers", 1)),
            base_dir=path.parent.resolve(),
        )

    def _template(self, kind: TemplateKind, key: str) -> PromptTemplate:
        p = self.templates.get(key)
        if not p:
            return DEFAULT_TEMPLATES[kind]
        path = Path(p) if Path(p).is_absolute() else self.base_dir / p
        return PromptTemplate.from_file(kind, path)

    def fact_check_config(self) -> FactCheckConfig:
        fc = self.fact_check
        return FactCheckConfig(
            max_queries=int(fc.get("max_queries", 3)),
            top_k=int(fc.get("top_k", 3)),
            model=str(self.rater.get("model", "rater")),
            temperature=float(fc.get("temperature", 0.0)),
            max_tokens=int(fc.get("max_tokens", 1024)),
            workers=int(fc.get("workers", 1)),
            query_template=self._template(TemplateKind.QUERY_GEN, "query_gen"),
            rating_template=self._template(TemplateKind.FACT_CHECK, "fact_check"),
        )

    def fc_rag_config(self) -> FcRagConfig:
        fr = self.fc_rag
        return FcRagConfig(
            max_rounds=int(fr.get("max_rounds", 3)),
            model=str(self.generator.get("model", "generator")),
            first_temperature=float(fr.get("first_temperature", 0.0)),
            regen_temperature=float(fr.get("regen_temperature", 0.0)),
            max_tokens=int(fr.get("max_tokens", self.sampling.max_tokens)),
            fact_check=self.fact_check_config(),
            template=self._template(TemplateKind.FC_RAG, "fc_rag"),
        )

    def generator_backend(self) -> Backend:
        return backend_from_config(self.generator, self.base_dir)

    def rater_backend(self) -> Backend:
        return backend_from_config(self.rater, self.base_dir)
