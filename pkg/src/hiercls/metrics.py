"""Per-level accuracy and macro/micro F1 over hierarchical predictions."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .taxonomy import LabelPath, Taxonomy, UnknownCode, normalize_code
from .trace import parse_final_only, parse_trace


class MetricsError(ValueError):
    pass


class EmptyInput(MetricsError):
    pass


class LengthMismatch(MetricsError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    doc_id: str
    gold: LabelPath
    # one (possibly None) code per gold level; None means unparseable/absent
    predicted: Optional[tuple]
    parse_violations: tuple = ()


@dataclass(frozen=True)
class LevelMetrics:
    accuracy: float
    macro_f1: float
    micro_f1: float
    n: int
    class_count: int


@dataclass(frozen=True)
class EvalReport:
    level_names: tuple
    per_level: tuple  # of LevelMetrics
    unparsed_count: int

    def to_dict(self) -> dict:
        return {
            "levels": [
                {"name": name, "accuracy": m.accuracy, "macro_f1": m.macro_f1,
                 "micro_f1": m.micro_f1, "n": m.n, "class_count": m.class_count}
                for name, m in zip(self.level_names, self.per_level)
            ],
            "unparsed_count": self.unparsed_count,
        }

    def render_table(self) -> str:
        header = f"{'Level':<16}{'Acc':>10}{'Macro F1':>12}{'Micro F1':>12}{'Classes':>10}{'N':>8}"
        lines = [header, "-" * len(header)]
        for name, m in zip(self.level_names, self.per_level):
            lines.append(f"{name:<16}{m.accuracy:>10.4f}{m.macro_f1:>12.4f}"
                         f"{m.micro_f1:>12.4f}{m.class_count:>10}{m.n:>8}")
        lines.append(f"unparsed: {self.unparsed_count}")
        return "\n".join(lines)


def macro_f1(golds: Sequence, preds: Sequence, class_set: Iterable) -> float:
    """Unweighted mean of per-class F1; a class with no support on either side
    contributes 0."""
    if len(golds) != len(preds):
        raise LengthMismatch(f"{len(golds)} golds vs {len(preds)} preds")
    classes = sorted(set(class_set))
    if not classes:
        raise EmptyInput("empty class set")
    scores = []
    for c in classes:
        tp = sum(1 for g, p in zip(golds, preds) if g == c and p == c)
        fp = sum(1 for g, p in zip(golds, preds) if g != c and p == c)
        fn = sum(1 for g, p in zip(golds, preds) if g == c and p != c)
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return sum(scores) / len(scores)


def micro_f1(golds: Sequence, preds: Sequence) -> float:
    """Global-counts F1; identical to accuracy in the single-label setting."""
    if len(golds) != len(preds):
        raise LengthMismatch(f"{len(golds)} golds vs {len(preds)} preds")
    if not golds:
        raise EmptyInput("no records")
    tp = sum(1 for g, p in zip(golds, preds) if g == p)
    return tp / len(golds)


def evaluate(records: Sequence[EvalRecord], taxonomy: Taxonomy) -> EvalReport:
    """Per-level accuracy and F1; absent predictions count as wrong everywhere.

    Macro F1 averages over the classes present in gold at each level, so toy
    inputs are not diluted by never-occurring taxonomy classes.
    """
    if not records:
        raise EmptyInput("no records")
    depth = max(len(r.gold) for r in records)
    per_level = []
    for i in range(depth):
        golds, preds = [], []
        for r in records:
            if len(r.gold) <= i:
                continue
            g = normalize_code(r.gold.codes[i])
            p = r.predicted[i] if r.predicted is not None and i < len(r.predicted) else None
            golds.append(g)
            preds.append(normalize_code(p) if p is not None else None)
        acc = micro_f1(golds, preds)
        mf1 = macro_f1(golds, preds, set(golds))
        per_level.append(LevelMetrics(acc, mf1, acc, len(golds), len(set(golds))))
    unparsed = sum(1 for r in records if r.predicted is None)
    return EvalReport(taxonomy.level_names[:depth], tuple(per_level), unparsed)


def _prefix_codes(taxonomy: Taxonomy, raw_output: str, depth: int):
    """Predicted per-level codes from the deepest boxed code's ancestor chain."""
    leaf = parse_final_only(raw_output)
    if leaf is None:
        return None
    try:
        path = taxonomy.parse_label(leaf)
    except (UnknownCode, ValueError):
        return None
    codes = list(path.codes) + [None] * (depth - len(path))
    return tuple(codes[:depth])


def _per_step_codes(taxonomy: Taxonomy, raw_output: str, depth: int):
    report = parse_trace(raw_output, taxonomy.level_names, mode="lenient")
    codes = tuple(
        report.trace.decision_at(i + 1) if report.trace is not None else None
        for i in range(depth)
    )
    if all(c is None for c in codes):
        return None, report.violations
    return codes, report.violations


def build_records(outputs: Iterable[dict], taxonomy: Taxonomy,
                  level_source: str = "deepest_prefix"):
    """Turn {doc_id, gold_code, raw_output} rows into EvalRecords.

    level_source="deepest_prefix" derives shallow levels from the final code's
    ancestor chain (how flat outputs must be scored); "per_step" uses each
    step's own boxed decision.
    """
    if level_source not in ("deepest_prefix", "per_step"):
        raise ValueError(f"unknown level_source {level_source!r}")
    records = []
    for row in outputs:
        gold = taxonomy.parse_label(row["gold_code"])
        raw = row.get("raw_output", "") or ""
        if level_source == "deepest_prefix":
            predicted = _prefix_codes(taxonomy, raw, len(gold))
            violations = ()
        else:
            predicted, violations = _per_step_codes(taxonomy, raw, len(gold))
        records.append(EvalRecord(str(row["doc_id"]), gold, predicted, tuple(violations)))
    return records


def evaluate_file(path, taxonomy: Taxonomy, level_source: str = "deepest_prefix") -> EvalReport:
    """Evaluate a line-delimited predictions file of {doc_id, gold_code, raw_output}."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return evaluate(build_records(rows, taxonomy, level_source), taxonomy)
