"""Sentence-level fact-checking, fact-check-driven RAG and self-training data."""

from __future__ import annotations

from .corpus_index import BM25Index, BM25Params, Document, RetrievedDoc, build_index, load_corpus, retrieve
from .eval_harness import EvalMetrics, McqItem, emit_report, load_dataset, score_run
from .fact_check import FactCheckConfig, FactCheckReport, SentenceVerdict, check_response, check_sentence
from .fc_rag import FcRagConfig, FcRagTrace, StopReason, compare_runs, run_fc_rag, run_medrag_baseline
from .llm_gateway import GenRequest, GenResponse, HttpBackend, ScriptedBackend, generate
from .prompt_kit import PromptTemplate, TemplateKind, VerdictLabel, render, split_sentences
from .self_training import PreferencePair, ScoredResponse, build_pairs, build_sft
from .simpo import SimpoBatch, SimpoParams, check_gradients, loss, loss_grad

__version__ = "0.1.0"

__all__ = [
    "BM25Index", "BM25Params", "Document", "RetrievedDoc", "build_index", "load_corpus", "retrieve",
    "EvalMetrics", "McqItem", "emit_report", "load_dataset", "score_run",
    "FactCheckConfig", "FactCheckReport", "SentenceVerdict", "check_response", "check_sentence",
    "FcRagConfig", "FcRagTrace", "StopReason", "compare_runs", "run_fc_rag", "run_medrag_baseline",
    "GenRequest", "GenResponse", "HttpBackend", "ScriptedBackend", "generate",
    "PromptTemplate", "TemplateKind", "VerdictLabel", "render", "split_sentences",
    "PreferencePair", "ScoredResponse", "build_pairs", "build_sft",
    "SimpoBatch", "SimpoParams", "check_gradients", "loss", "loss_grad",
]
