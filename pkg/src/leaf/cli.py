"""``leaf`` command line.

Subcommands: index, generate, fact-check, fc-rag, build-sft, build-pairs,
simpo-loss, eval, report. On failure a JSON error object is written to
stderr and the exit status is 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Callable, Iterable, NoReturn, Sequence, TypeVar

from .config import LeafConfig
from .corpus_index import BM25Index, build_index, load_corpus
from .eval_harness import (
    EvalMetrics,
    McqItem,
    emit_report,
    iter_jsonl,
    load_dataset,
    read_metrics,
    score_run,
    write_jsonl,
)
from .fact_check import check_response
from .fc_rag import FcRagTrace, compare_runs, qa_prompt, run_fc_rag, run_medrag_baseline
from .llm_gateway import GenRequest, generate
from .prompt_kit import NoAnswer, parse_mcq_answer
from .self_training import ScoredResponse, build_pairs, build_sft
from .simpo import SimpoParams, check_gradients, load_pairs, loss

log = logging.getLogger("leaf")
T = TypeVar("T")
R = TypeVar("R")


def _pmap(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _dump(obj: Any) -> None:
    print(json.dumps(obj, indent=2))


def _items_by_id(path: str) -> dict[str, McqItem]:
    return {it.id: it for it in load_dataset(path)}


def _scored_rows(path: str) -> list[dict[str, Any]]:
    return list(iter_jsonl(path))


# ------------------------------------------------------------------ commands


def cmd_index(args: argparse.Namespace) -> int:
    cfg = LeafConfig.load(args.config)
    k1 = args.k1 if args.k1 is not None else float(cfg.index.get("k1", 1.2))
    b = args.b if args.b is not None else float(cfg.index.get("b", 0.75))
    index = build_index(load_corpus(args.corpus), k1=k1, b=b)
    index.save(args.out)
    _dump(asdict(index.stats))
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = LeafConfig.load(args.config)
    items = load_dataset(args.dataset)
    gen = cfg.generator_backend()
    s = cfg.sampling
    n = args.n or (s.ranking_samples if args.purpose == "ranking" else s.fact_check_samples)
    temp = args.temperature
    if temp is None:
        temp = s.ranking_temperature if args.purpose == "ranking" else s.fact_check_temperature
    model = str(cfg.generator.get("model", "generator"))

    def one(item: McqItem) -> list[dict[str, Any]]:
        req = GenRequest.user(model, qa_prompt(item), temperature=temp, n=n, max_tokens=s.max_tokens)
        rows = []
        for i, text in enumerate(generate(gen, req).texts):
            try:
                answer: str | None = parse_mcq_answer(text, item.letters)
            except NoAnswer:
                answer = None
            rows.append({"id": item.id, "sample_index": i, "response": text, "answer": answer})
        return rows

    rows = [r for group in _pmap(one, items, cfg.workers) for r in group]
    _dump({"responses": write_jsonl(rows, args.out)})
    return 0


def cmd_fact_check(args: argparse.Namespace) -> int:
    cfg = LeafConfig.load(args.config)
    items = _items_by_id(args.dataset)
    index = BM25Index.load(args.corpus_index)
    rater = cfg.rater_backend()
    fc_cfg = cfg.fact_check_config()
    rows = _scored_rows(args.responses)
    for r in rows:
        if r["id"] not in items:
            raise ValueError(f"response for unknown id {r['id']}")

    def one(row: dict[str, Any]) -> dict[str, Any]:
        report = check_response(row["response"], items[row["id"]].context(), index, rater, fc_cfg)
        out = {"id": row["id"], "sample_index": row.get("sample_index", 0), "answer": row.get("answer")}
        out.update(report.to_dict())
        return out

    reports = _pmap(one, rows, cfg.workers)
    _dump({"reports": write_jsonl(reports, args.out), "passed": sum(r["supported"] == r["total"] for r in reports)})
    return 0


def cmd_fc_rag(args: argparse.Namespace) -> int:
    cfg = LeafConfig.load(args.config)
    items = load_dataset(args.dataset)
    index = BM25Index.load(args.corpus_index)
    gen = cfg.generator_backend()
    fr_cfg = cfg.fc_rag_config()
    if args.max_rounds is not None:
        fr_cfg = replace(fr_cfg, max_rounds=args.max_rounds)
    if args.baseline == "medrag":
        traces = _pmap(lambda it: run_medrag_baseline(it, gen, index, fr_cfg), items, cfg.workers)
    else:
        rater = cfg.rater_backend()
        traces = _pmap(lambda it: run_fc_rag(it, gen, index, rater, fr_cfg), items, cfg.workers)
    write_jsonl((t.to_dict() for t in traces), args.out)
    delta = compare_runs(traces, traces, {it.id: it.gold for it in items})
    _dump({"traces": len(traces), **asdict(delta)})
    return 0


def _scored_from_reports(path: str) -> list[ScoredResponse]:
    return [
        ScoredResponse(str(r["id"]), r["response"], float(r["leaf_score"]), int(r.get("sample_index", 0)))
        for r in iter_jsonl(path)
    ]


def _prompts(items: Iterable[McqItem]) -> dict[str, str]:
    return {it.id: qa_prompt(it) for it in items}


def cmd_build_sft(args: argparse.Namespace) -> int:
    items = load_dataset(args.dataset)
    records = build_sft(_scored_from_reports(args.reports), _prompts(items))
    _dump({"records": write_jsonl(records, args.out)})
    return 0


def cmd_build_pairs(args: argparse.Namespace) -> int:
    items = load_dataset(args.dataset)
    result = build_pairs(_scored_from_reports(args.reports), _prompts(items), min_gap=args.min_gap)
    n = write_jsonl((p.to_dict() for p in result.pairs), args.out)
    _dump({
        "pairs": n,
        "skipped_too_few": result.skipped_too_few,
        "skipped_tied": result.skipped_tied,
        "skipped_gap": result.skipped_gap,
    })
    return 0


def cmd_simpo_loss(args: argparse.Namespace) -> int:
    _, batch = load_pairs(args.pairs, SimpoParams(args.beta, args.gamma))
    out: dict[str, Any] = {"pairs": len(batch.pairs), "beta": args.beta, "gamma": args.gamma, "loss": loss(batch)}
    if args.grad_check:
        gc = check_gradients(batch, h=args.h)
        out["grad_check"] = {**asdict(gc), "rtol": args.rtol, "ok": gc.ok(args.rtol)}
    _dump(out)
    return 0 if not args.grad_check or out["grad_check"]["ok"] else 1


def cmd_eval(args: argparse.Namespace) -> int:
    items = load_dataset(args.dataset)
    rows = list(iter_jsonl(args.predictions))
    traces: list[FcRagTrace] = []
    if rows and "rounds" in rows[0]:
        traces = [FcRagTrace.from_dict(r) for r in rows]
        predictions = {t.question.id: t.final_answer for t in traces}
        reports = {t.question.id: t.rounds[-1].report for t in traces if t.rounds[-1].report is not None}
    else:
        predictions = {r["id"]: r.get("answer") for r in rows if int(r.get("sample_index", 0)) == args.sample_index}
        reports = None
    if args.reports:
        reports = {
            r["id"]: float(r["leaf_score"])
            for r in iter_jsonl(args.reports)
            if int(r.get("sample_index", 0)) == args.sample_index
        }
    metrics = score_run(items, predictions, reports)
    doc: dict[str, Any] = {"metrics": asdict(metrics)}
    if traces:
        doc["fc_rag"] = asdict(compare_runs(traces, traces, {it.id: it.gold for it in items}))
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    metrics: dict[str, EvalMetrics] = {}
    for spec in args.metrics:
        name, sep, path = spec.partition("=")
        if not sep:
            raise ValueError(f"--metrics expects NAME=PATH, got {spec!r}")
        metrics[name] = read_metrics(path)
    data = emit_report(metrics, args.format)
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    return 0


# -------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    """Usage errors are reported in the same JSON shape as runtime errors."""

    def error(self, message: str) -> NoReturn:
        sys.stderr.write(json.dumps({"error": "UsageError", "message": message, "command": self.prog}) + "\n")
        sys.exit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leaf", description="Fact-check-driven evaluation, RAG and self-training data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("index", help="build a BM25 index from a JSONL corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k1", type=float)
    s.add_argument("--b", type=float)
    s.add_argument("--config")
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("generate", help="sample answers for every dataset item")
    s.add_argument("--dataset", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--purpose", choices=("ranking", "fact-check"), default="ranking")
    s.add_argument("--n", type=int)
    s.add_argument("--temperature", type=float)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("fact-check", help="score responses sentence by sentence")
    s.add_argument("--dataset", required=True)
    s.add_argument("--responses", required=True)
    s.add_argument("--corpus-index", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fact_check)

    s = sub.add_parser("fc-rag", help="run Fact-Check-Then-RAG over a dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--corpus-index", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-rounds", type=int)
    s.add_argument("--baseline", choices=("medrag",))
    s.set_defaults(func=cmd_fc_rag)

    s = sub.add_parser("build-sft", help="export responses with LEAF score 1.0")
    s.add_argument("--dataset", required=True)
    s.add_argument("--reports", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_sft)

    s = sub.add_parser("build-pairs", help="export chosen/rejected preference pairs")
    s.add_argument("--dataset", required=True)
    s.add_argument("--reports", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--min-gap", type=float, default=0.0)
    s.set_defaults(func=cmd_build_pairs)

    s = sub.add_parser("simpo-loss", help="SimPO loss over log-prob pairs")
    s.add_argument("--pairs", required=True)
    s.add_argument("--beta", type=float, default=2.5)
    s.add_argument("--gamma", type=float, default=1.4)
    s.add_argument("--grad-check", action="store_true")
    s.add_argument("--h", type=float, default=1e-5)
    s.add_argument("--rtol", type=float, default=1e-6)
    s.set_defaults(func=cmd_simpo_loss)

    s = sub.add_parser("eval", help="accuracy and filtered accuracy for one dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--predictions", required=True, help="responses.jsonl from generate or traces.jsonl from fc-rag")
    s.add_argument("--reports", help="fact-check reports; enables filtered accuracy")
    s.add_argument("--sample-index", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", help="tabulate metrics across datasets")
    s.add_argument("--metrics", action="append", required=True, metavar="NAME=PATH")
    s.add_argument("--format", choices=("text", "json", "csv"), default="text")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - surfaced as a machine-readable error
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
