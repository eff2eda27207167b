"""Verifiable-reward machinery for hierarchical classification: taxonomies,
structured trace parsing, reward shaping, GRPO training on a desk-scale
policy, evaluation metrics, dataset construction, and a scoring service."""

__version__ = "0.1.0"

from .rewards import RewardBreakdown, RewardConfig, Scorer
from .taxonomy import LabelPath, Taxonomy, level_weights, parse_ipc_code
from .trace import ParseReport, ReasoningTrace, parse_final_only, parse_trace

__all__ = [
    "LabelPath",
    "ParseReport",
    "ReasoningTrace",
    "RewardBreakdown",
    "RewardConfig",
    "Scorer",
    "Taxonomy",
    "level_weights",
    "parse_final_only",
    "parse_ipc_code",
    "parse_trace",
    "__version__",
]
