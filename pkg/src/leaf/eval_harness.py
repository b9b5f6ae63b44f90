"""Multiple-choice datasets, accuracy / filtered-accuracy metrics and
report serialization."""

from __future__ import annotations

import csv
import io
import json
import string
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .fact_check import FactCheckReport


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class McqItem:
    id: str
    question: str
    options: dict[str, str]
    gold: str

    def __post_init__(self) -> None:
        if not self.id:
            raise DatasetError("item id must be non-empty")
        letters = sorted(self.options)
        if not 2 <= len(letters) <= 5:
            raise DatasetError(f"item {self.id}: expected 2-5 options, got {len(letters)}")
        if letters != list(string.ascii_uppercase[: len(letters)]):
            raise DatasetError(f"item {self.id}: option letters must run A, B, ... without gaps")
        if self.gold not in self.options:
            raise DatasetError(f"item {self.id}: gold {self.gold!r} is not an option")
        object.__setattr__(self, "options", {k: self.options[k] for k in letters})

    @property
    def letters(self) -> list[str]:
        return list(self.options)

    def options_block(self) -> str:
        return "\n".join(f"({k}) {v}" for k, v in self.options.items())

    def context(self) -> str:
        """Question plus options, as handed to the rater."""
        return f"{self.question}\n{self.options_block()}"

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "question": self.question, "options": dict(self.options), "gold": self.gold}


_YES_NO = {"yes": "A", "no": "B", "maybe": "C"}


def item_from_dict(obj: Mapping[str, Any]) -> McqItem:
    question = obj["question"]
    gold = obj["gold"]
    options = obj.get("options")
    if not options:
        # PubMedQA*/BioASQ style: no options, gold is the literal answer
        key = str(gold).strip().lower()
        if key not in _YES_NO:
            raise KeyError("options")
        options = {"A": "yes", "B": "no"}
        if key == "maybe":
            options["C"] = "maybe"
        gold = _YES_NO[key]
    return McqItem(str(obj["id"]), str(question), {str(k): str(v) for k, v in options.items()}, str(gold))


def load_dataset(path: str | Path) -> list[McqItem]:
    items: list[McqItem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                item = item_from_dict(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            except KeyError as exc:
                raise DatasetError(f"{path}:{lineno}: missing field {exc}") from None
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if item.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {item.id}")
            seen.add(item.id)
            items.append(item)
    return items


@dataclass(frozen=True)
class EvalMetrics:
    total: int
    correct: int
    accuracy: float
    filtered_total: int = 0
    filtered_correct: int = 0
    filtered_accuracy: float | None = None


def score_run(
    items: Sequence[McqItem],
    predictions: Mapping[str, str | None],
    reports: Mapping[str, FactCheckReport | float] | None = None,
) -> EvalMetrics:
    """Accuracy over all items; filtered accuracy over items whose
    fact-check report scored exactly 1.0.

    Items without a prediction count as wrong. ``reports`` values may be
    full reports or bare LEAF scores.
    """
    if not items:
        raise DatasetError("no items to score")
    ids = {it.id for it in items}
    unknown = sorted(set(predictions) - ids)
    if unknown:
        raise DatasetError(f"predictions for unknown ids: {unknown[:5]}")
    if reports is not None:
        unknown = sorted(set(reports) - ids)
        if unknown:
            raise DatasetError(f"reports for unknown ids: {unknown[:5]}")

    correct = sum(predictions.get(it.id) == it.gold for it in items)
    f_total = f_correct = 0
    if reports is not None:
        for it in items:
            rep = reports.get(it.id)
            if rep is None:
                continue
            score = rep.leaf_score if isinstance(rep, FactCheckReport) else float(rep)
            if score == 1.0:
                f_total += 1
                f_correct += predictions.get(it.id) == it.gold
    return EvalMetrics(
        total=len(items),
        correct=correct,
        accuracy=correct / len(items),
        filtered_total=f_total,
        filtered_correct=f_correct,
        filtered_accuracy=f_correct / f_total if f_total else None,
    )


REPORT_FORMATS = ("text", "json", "csv")
CSV_HEADER = ["dataset", "total", "correct", "accuracy", "filtered_total", "filtered_correct", "filtered_accuracy"]


def _average(metrics: Mapping[str, EvalMetrics]) -> dict[str, float | None]:
    accs = [m.accuracy for m in metrics.values()]
    faccs = [m.filtered_accuracy for m in metrics.values() if m.filtered_accuracy is not None]
    return {
        "accuracy": sum(accs) / len(accs),
        "filtered_accuracy": sum(faccs) / len(faccs) if faccs else None,
    }


def emit_report(metrics: Mapping[str, EvalMetrics], fmt: str = "text") -> bytes:
    """Serialize per-dataset metrics plus an unweighted average row.

    The average filtered accuracy is taken over datasets where it is defined.
    """
    if not metrics:
        raise DatasetError("report needs at least one dataset")
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")
    avg = _average(metrics)

    if fmt == "json":
        doc = {"datasets": {k: asdict(m) for k, m in metrics.items()}, "average": avg}
        return (json.dumps(doc, indent=2) + "\n").encode("utf-8")

    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for name, m in metrics.items():
            w.writerow([name, m.total, m.correct, f"{m.accuracy:.6f}", m.filtered_total,
                        m.filtered_correct, "" if m.filtered_accuracy is None else f"{m.filtered_accuracy:.6f}"])
        fa = avg["filtered_accuracy"]
        w.writerow(["Average", "", "", f"{avg['accuracy']:.6f}", "", "", "" if fa is None else f"{fa:.6f}"])
        return buf.getvalue().encode("utf-8")

    def pct(x: float | None) -> str:
        return "-" if x is None else f"{100 * x:.2f}"

    names = list(metrics) + ["Average"]
    width = max(len(n) for n in names + ["Dataset"])
    lines = [f"{'Dataset':<{width}}  {'N':>6}  {'Accuracy':>8}  {'Filt. N':>7}  {'Filt. Acc':>9}"]
    for name, m in metrics.items():
        lines.append(f"{name:<{width}}  {m.total:>6}  {pct(m.accuracy):>8}  {m.filtered_total:>7}  "
                     f"{pct(m.filtered_accuracy):>9}")
    lines.append(f"{'Average':<{width}}  {'':>6}  {pct(avg['accuracy']):>8}  {'':>7}  "
                 f"{pct(avg['filtered_accuracy']):>9}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def metrics_from_json(data: bytes | str) -> dict[str, EvalMetrics]:
    doc = json.loads(data)
    return {k: EvalMetrics(**v) for k, v in doc["datasets"].items()}


def read_metrics(path: str | Path) -> EvalMetrics:
    """Bare metrics object, or the ``{"metrics": ...}`` document ``leaf eval`` writes."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return EvalMetrics(**doc.get("metrics", doc))


def write_metrics(metrics: EvalMetrics, path: str | Path) -> None:
    Path(path).write_text(json.dumps(asdict(metrics), indent=2) + "\n", encoding="utf-8")


def iter_jsonl(path: str | Path) -> Iterable[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def write_jsonl(rows: Iterable[Mapping[str, Any]], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            n += 1
    return n
