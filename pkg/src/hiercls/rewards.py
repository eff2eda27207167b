"""Verifiable reward stack: per-level step credit, final-label credit,
length shaping, and their weighted combination."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .taxonomy import (LabelPath, Taxonomy, level_weights, normalize_code,
                       weights_from_counts)
from .trace import (ParseReport, ReasoningTrace, TokenCounter, parse_final_only,
                    parse_trace, whitespace_tokens)


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    """Shaping parameters.

    Defaults follow the reference setting: omega=1, beta=0, length band
    [128, 384] with a hard cap at 512 tokens, and lambda=0.1 so the format
    term cannot dominate the main term.
    """

    main_mode: str = "step"          # "step" | "final"
    lam: float = 0.1
    omega: float = 1.0
    beta: float = 0.0
    l0: int = 128
    h0: int = 384
    h_max: int = 512
    weight_scope: str = "dataset"    # "taxonomy" | "dataset"

    def __post_init__(self):
        if self.main_mode not in ("step", "final"):
            raise ValueError(f"main_mode must be 'step' or 'final', got {self.main_mode!r}")
        if self.weight_scope not in ("taxonomy", "dataset"):
            raise ValueError(f"weight_scope must be 'taxonomy' or 'dataset'")
        if not (0 < self.l0 <= self.h0 < self.h_max):
            raise ValueError(f"need 0 < l0 <= h0 < h_max, got {self.l0}, {self.h0}, {self.h_max}")
        if self.omega < 0 or self.lam < 0:
            raise ValueError("omega and lambda must be non-negative")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RewardConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def replace(self, **changes) -> "RewardConfig":
        if "lambda" in changes:
            changes["lam"] = changes.pop("lambda")
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class RewardBreakdown:
    per_level_correct: tuple
    main: float
    format: float
    total: float
    violations: tuple = ()

    def to_dict(self) -> dict:
        return {
            "per_level_correct": list(self.per_level_correct),
            "main": self.main,
            "format": self.format,
            "total": self.total,
            "violations": [str(v) for v in self.violations],
        }


def _per_level_flags(trace: Optional[ReasoningTrace], gold: LabelPath) -> list:
    flags = []
    for i, gold_code in enumerate(gold.codes, start=1):
        decision = trace.decision_at(i) if trace is not None else None
        flags.append(decision is not None and normalize_code(decision) == normalize_code(gold_code))
    return flags


def step_reward(trace: Optional[ReasoningTrace], gold: LabelPath,
                weights: Sequence[float]):
    """Weighted per-level credit in [0, 1]; missing or malformed levels score 0."""
    if len(weights) != len(gold):
        raise LengthMismatch(f"{len(weights)} weights for a {len(gold)}-level gold path")
    flags = _per_level_flags(trace, gold)
    return sum(w for w, ok in zip(weights, flags) if ok), flags


def final_reward(trace: Optional[ReasoningTrace], gold: LabelPath,
                 raw_text: Optional[str] = None) -> float:
    """Binary credit on the deepest level only.

    If the trace has no step at the deepest level, the last boxed code in the
    raw text is used as a fallback before scoring 0.
    """
    gold_leaf = normalize_code(gold.leaf)
    decision = trace.decision_at(len(gold)) if trace is not None else None
    if decision is None:
        text = raw_text if raw_text is not None else (trace.raw_text if trace else None)
        if text is not None:
            decision = parse_final_only(text)
    if decision is None:
        return 0.0
    return 1.0 if normalize_code(decision) == gold_leaf else 0.0


def format_reward(token_length: int, cfg: RewardConfig) -> float:
    """Piecewise length shaping: penalize short and long outputs, neutral in band."""
    if token_length < 0:
        raise ValueError("token_length must be non-negative")
    t = token_length
    if t < cfg.l0:
        return -cfg.omega * (cfg.l0 - t) / cfg.l0
    if t <= cfg.h0:
        return cfg.beta
    return -cfg.omega * (min(t, cfg.h_max) - cfg.h0) / (cfg.h_max - cfg.h0)


def total_reward(trace: Optional[ReasoningTrace], gold: LabelPath, cfg: RewardConfig,
                 weights: Sequence[float], violations: Sequence = (),
                 raw_text: Optional[str] = None,
                 counter: TokenCounter = whitespace_tokens) -> RewardBreakdown:
    """Main + lambda * format, with the full per-component breakdown."""
    if cfg.main_mode == "step":
        main, flags = step_reward(trace, gold, weights)
    else:
        _, flags = step_reward(trace, gold, weights)
        main = final_reward(trace, gold, raw_text=raw_text)
    if trace is not None:
        token_length = trace.token_length
    else:
        token_length = counter(raw_text) if raw_text is not None else 0
    fmt = format_reward(token_length, cfg)
    return RewardBreakdown(
        per_level_correct=tuple(flags),
        main=main,
        format=fmt,
        total=main + cfg.lam * fmt,
        violations=tuple(violations),
    )


class Scorer:
    """Scores raw model outputs against gold codes for one taxonomy.

    With weight_scope="dataset" and dataset-restricted level counts provided,
    the per-level weights use those counts; otherwise they come from the
    loaded taxonomy.
    """

    def __init__(self, taxonomy: Taxonomy, cfg: RewardConfig = RewardConfig(),
                 dataset_counts: Optional[Sequence[int]] = None,
                 counter: TokenCounter = whitespace_tokens):
        self.taxonomy = taxonomy
        self.cfg = cfg
        self.counter = counter
        if cfg.weight_scope == "dataset" and dataset_counts is not None:
            self.weights = weights_from_counts(dataset_counts)
        else:
            self.weights = level_weights(taxonomy)

    def parse(self, raw_output: str) -> ParseReport:
        return parse_trace(raw_output, self.taxonomy.level_names, mode="lenient",
                           counter=self.counter)

    def score(self, raw_output: str, gold_code: str) -> RewardBreakdown:
        gold = self.taxonomy.parse_label(gold_code)
        report = self.parse(raw_output)
        weights = self.weights[: len(gold)]
        if len(gold) < len(self.weights):
            # shorter gold paths re-normalize over the levels actually scored
            total = sum(weights)
            weights = [w / total for w in weights]
        return total_reward(report.trace, gold, self.cfg, weights,
                            violations=report.violations, raw_text=raw_output,
                            counter=self.counter)
