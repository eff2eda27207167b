"""Parsing and rendering of structured step-by-step classification outputs.

The wire format is one block per hierarchy level:

    Step 1 — Section
    Brief Justification: <free text>
    Decision: \\box{H}

Both ``\\box{...}`` and ``\\boxed{...}`` are accepted as decision markers.
Parsing never raises on bad input; every problem becomes a violation tag.
"""
from __future__ import annotations

import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .taxonomy import Taxonomy, normalize_code

MISSING_STEP = "missing_step"
DUPLICATE_STEP = "duplicate_step"
UNBOXED_DECISION = "unboxed_decision"
OUT_OF_ORDER = "out_of_order"
EMPTY_JUSTIFICATION = "empty_justification"


class MissingPlaceholder(KeyError):
    pass


@dataclass(frozen=True)
class FormatViolation:
    tag: str
    level_index: Optional[int] = None

    def __str__(self):
        return self.tag if self.level_index is None else f"{self.tag}@{self.level_index}"


@dataclass(frozen=True)
class TraceStep:
    level_index: int
    level_name: str
    justification: str
    decision: str


@dataclass(frozen=True)
class ReasoningTrace:
    steps: tuple
    raw_text: str
    token_length: int

    def decision_at(self, level_index: int) -> Optional[str]:
        for step in self.steps:
            if step.level_index == level_index:
                return step.decision
        return None


@dataclass(frozen=True)
class ParseReport:
    trace: Optional[ReasoningTrace]
    violations: tuple


TokenCounter = Callable[[str], int]


def whitespace_tokens(raw: str) -> int:
    return len(raw.split())


def count_tokens(raw: str, counter: TokenCounter = whitespace_tokens) -> int:
    return counter(raw)


_STEP_HEADER = re.compile(r"^[ \t]*Step[ \t]+(\d+)[ \t]*(?:[-\u2013\u2014]+[ \t]*(.*?))?[ \t]*$",
                          re.MULTILINE | re.IGNORECASE)
_BOX = re.compile(r"\\box(?:ed)?\{([^{}]*)\}")
_DECISION_LINE = re.compile(r"^[ \t]*Decision[ \t]*:(.*)$", re.MULTILINE | re.IGNORECASE)
_JUSTIFICATION_PREFIX = re.compile(r"^[ \t]*Brief[ \t]+Justification[ \t]*:?[ \t]*",
                                   re.IGNORECASE)


def parse_final_only(raw: str) -> Optional[str]:
    """Content of the last box marker in the text, or None."""
    matches = _BOX.findall(raw)
    for content in reversed(matches):
        content = content.strip()
        if content:
            return normalize_code(content)
    return None


def _parse_block(block: str, mode: str):
    """Extract (justification, decision, violated_unboxed) from one step block."""
    decision = None
    unboxed = False
    m = _DECISION_LINE.search(block)
    if m is not None:
        rest = m.group(1)
        boxed = _BOX.search(rest)
        if boxed is None:
            boxed = _BOX.search(block)
        if boxed is not None and boxed.group(1).strip():
            decision = normalize_code(boxed.group(1))
        elif mode == "lenient":
            bare = rest.strip().strip(string.punctuation + " ")
            if bare:
                decision = normalize_code(bare.split()[0].strip(string.punctuation))
                unboxed = True
    elif mode == "lenient":
        boxed = _BOX.search(block)
        if boxed is not None and boxed.group(1).strip():
            decision = normalize_code(boxed.group(1))
    just_text = block[: m.start()] if m is not None else block
    lines = []
    for line in just_text.splitlines():
        line = _JUSTIFICATION_PREFIX.sub("", line).strip()
        if line:
            lines.append(line)
    return " ".join(lines), decision, unboxed


def parse_trace(raw: str, expected_levels: Sequence[str], mode: str = "strict",
                counter: TokenCounter = whitespace_tokens) -> ParseReport:
    """Parse a structured output into a trace, or report why it cannot be one.

    Strict mode requires every expected step exactly once, in order, each with
    a boxed decision and a non-empty justification. Lenient mode keeps the
    longest gap-free prefix of usable steps (first occurrence wins) and records
    everything else as violations.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be 'strict' or 'lenient', got {mode!r}")
    if not expected_levels:
        raise ValueError("expected_levels must be non-empty")
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    n_levels = len(expected_levels)

    headers = list(_STEP_HEADER.finditer(text))
    violations = []
    seen: dict = {}
    last_index = 0
    for pos, m in enumerate(headers):
        idx = int(m.group(1))
        if idx < 1 or idx > n_levels:
            violations.append(FormatViolation(OUT_OF_ORDER, idx))
            continue
        end = headers[pos + 1].start() if pos + 1 < len(headers) else len(text)
        block = text[m.end():end]
        if idx in seen:
            violations.append(FormatViolation(DUPLICATE_STEP, idx))
            continue  # first occurrence wins
        if idx < last_index:
            violations.append(FormatViolation(OUT_OF_ORDER, idx))
        last_index = max(last_index, idx)
        justification, decision, unboxed = _parse_block(block, mode)
        if decision is None:
            violations.append(FormatViolation(UNBOXED_DECISION, idx))
            continue
        if unboxed:
            violations.append(FormatViolation(UNBOXED_DECISION, idx))
        if not justification:
            violations.append(FormatViolation(EMPTY_JUSTIFICATION, idx))
        seen[idx] = TraceStep(idx, str(expected_levels[idx - 1]), justification, decision)

    for idx in range(1, n_levels + 1):
        if idx not in seen:
            violations.append(FormatViolation(MISSING_STEP, idx))

    steps = []
    for idx in range(1, n_levels + 1):
        if idx not in seen:
            break
        steps.append(seen[idx])

    if mode == "strict":
        ok = len(steps) == n_levels and not violations
    else:
        ok = bool(steps)
    trace = ReasoningTrace(tuple(steps), raw, count_tokens(raw, counter)) if ok else None
    return ParseReport(trace, tuple(violations))


def render_trace(decisions: Sequence[str], level_names: Sequence[str],
                 justifications: Optional[Sequence[str]] = None) -> str:
    """Render decisions with the canonical step template; inverse of parse_trace."""
    if len(decisions) != len(level_names):
        raise ValueError("decisions and level_names must have equal length")
    blocks = []
    for i, (code, name) in enumerate(zip(decisions, level_names)):
        just = justifications[i] if justifications is not None else f"Assigned to {code}."
        blocks.append(
            f"Step {i + 1} \u2014 {name}\n"
            f"Brief Justification: {just}\n"
            f"Decision: \\box{{{code}}}"
        )
    return "\n\n".join(blocks)


@dataclass(frozen=True)
class PromptTemplate:
    """UTF-8 text with {document}, {level_names}, {output_skeleton} placeholders."""

    text: str

    @classmethod
    def from_file(cls, path) -> "PromptTemplate":
        return cls(Path(path).read_text(encoding="utf-8"))

    def render(self, **fields) -> str:
        try:
            return self.text.format(**fields)
        except (KeyError, IndexError) as exc:
            raise MissingPlaceholder(f"unresolvable placeholder in template: {exc}") from exc


COT_TEMPLATE = PromptTemplate(
    "You are an expert classification specialist. Predict the document's label "
    "step by step through the hierarchy: {level_names}.\n"
    "\n"
    "- Output exactly one decision per level.\n"
    "- Wrap the code of each level in \\box{{}}.\n"
    "- Provide a brief justification before predicting the code at each step.\n"
    "\n"
    "Expected Output Format:\n"
    "{output_skeleton}\n"
    "\n"
    "Document:\n"
    "{document}\n"
)

FINAL_ONLY_TEMPLATE = PromptTemplate(
    "You are an expert classification specialist. Reason through each "
    "hierarchical level ({level_names}) and output only the final answer "
    "in the format \\box{{}}.\n"
    "\n"
    "Document:\n"
    "{document}\n"
)


def output_skeleton(level_names: Sequence[str]) -> str:
    blocks = []
    for i, name in enumerate(level_names):
        blocks.append(
            f"Step {i + 1} \u2014 {name}\n"
            f"Brief Justification:\n"
            f"Decision: \\box{{}}"
        )
    return "\n\n".join(blocks)


def render_cot_prompt(doc_text: str, taxonomy: Taxonomy,
                      template: PromptTemplate = COT_TEMPLATE) -> str:
    names = taxonomy.level_names
    return template.render(
        document=doc_text,
        level_names=" \u2192 ".join(names),
        output_skeleton=output_skeleton(names),
    )
