"""Balanced dataset construction: subclass filtering, per-class sampling,
train/test split, OOD set, and gold-consistency filtering of synthetic traces."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .taxonomy import LabelPath, Taxonomy, TaxonomyError
from .trace import parse_trace

SAMPLER_ALGORITHM = "numpy-pcg64-permutation-v1"


class DatasetError(ValueError):
    pass


class InsufficientCorpus(DatasetError):
    pass


class NonIntegralTestCount(DatasetError):
    pass


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    main_label: str
    source: str = ""
    year: int = 0
    status: str = ""


def read_corpus(path) -> list:
    """Line-delimited JSON records with doc_id/text/main_label/source/year/status."""
    docs = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            doc = Document(
                doc_id=str(row["doc_id"]),
                text=row.get("text", ""),
                main_label=str(row["main_label"]),
                source=str(row.get("source", "")),
                year=int(row.get("year", 0)),
                status=str(row.get("status", "")),
            )
            if doc.doc_id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            docs.append(doc)
    return docs


@dataclass
class SplitManifest:
    seed: int
    algorithm: str
    params: dict
    # doc_id -> ("train"|"test", subclass code)
    assignments: dict

    @property
    def train_ids(self) -> set:
        return {d for d, (s, _) in self.assignments.items() if s == "train"}

    @property
    def test_ids(self) -> set:
        return {d for d, (s, _) in self.assignments.items() if s == "test"}

    def per_subclass_counts(self) -> dict:
        counts: dict = {}
        for _, (split, sub) in self.assignments.items():
            entry = counts.setdefault(sub, {"train": 0, "test": 0})
            entry[split] += 1
        return counts

    @property
    def subclasses(self) -> set:
        return {sub for _, sub in self.assignments.values()}

    def to_file(self, path) -> None:
        lines = [
            f"# seed={self.seed}",
            f"# algorithm={self.algorithm}",
            f"# params={json.dumps(self.params, sort_keys=True)}",
        ]
        for doc_id in sorted(self.assignments):
            split, sub = self.assignments[doc_id]
            lines.append(f"{doc_id}\t{split}\t{sub}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path) -> "SplitManifest":
        seed, algorithm, params = 0, "", {}
        assignments = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("# seed="):
                seed = int(line.split("=", 1)[1])
            elif line.startswith("# algorithm="):
                algorithm = line.split("=", 1)[1]
            elif line.startswith("# params="):
                params = json.loads(line.split("=", 1)[1])
            elif line.strip():
                doc_id, split, sub = line.split("\t")
                assignments[doc_id] = (split, sub)
        return cls(seed, algorithm, params, assignments)


def _subclass_of(taxonomy: Taxonomy, label: str) -> Optional[str]:
    try:
        path = taxonomy.parse_label(label)
    except TaxonomyError:
        return None
    if len(path) != taxonomy.depth:
        return None
    return path.leaf


def _accepted(doc: Document, status: Optional[str]) -> bool:
    return status is None or doc.status == status


def group_by_subclass(corpus: Iterable[Document], taxonomy: Taxonomy,
                      accept_status: Optional[str] = "Accepted"):
    """Bucket accepted documents by deepest-level code; unparseable labels are
    skipped and counted, not fatal."""
    groups: dict = {}
    skipped = 0
    for doc in corpus:
        if not _accepted(doc, accept_status):
            continue
        sub = _subclass_of(taxonomy, doc.main_label)
        if sub is None:
            skipped += 1
            continue
        groups.setdefault(sub, []).append(doc.doc_id)
    return groups, skipped


def build_balanced_split(corpus: Sequence[Document], taxonomy: Taxonomy,
                         min_instances: int = 50, per_class: int = 50,
                         test_fraction: float = 0.1, seed: int = 0,
                         accept_status: Optional[str] = "Accepted") -> SplitManifest:
    """Keep subclasses with >= min_instances accepted docs, sample per_class of
    each without replacement, and carve out a per-class test share.

    Deterministic under seed: subclasses are processed in sorted code order
    with a per-subclass child generator, so corpus file order is irrelevant.
    """
    if min_instances < per_class:
        raise DatasetError("min_instances must be >= per_class")
    if not 0 < test_fraction < 1:
        raise DatasetError("test_fraction must be in (0, 1)")
    n_test_f = per_class * test_fraction
    n_test = round(n_test_f)
    if abs(n_test_f - n_test) > 1e-9:
        raise NonIntegralTestCount(
            f"per_class * test_fraction = {n_test_f} is not an integer")

    groups, _ = group_by_subclass(corpus, taxonomy, accept_status)
    kept = sorted(sub for sub, ids in groups.items() if len(ids) >= min_instances)
    if not kept:
        raise InsufficientCorpus(
            f"no subclass has >= {min_instances} accepted documents")

    root = np.random.SeedSequence(seed)
    children = root.spawn(len(kept))
    assignments = {}
    for sub, child in zip(kept, children):
        rng = np.random.default_rng(child)
        ids = sorted(groups[sub])
        chosen = rng.permutation(len(ids))[:per_class]
        for rank, idx in enumerate(chosen):
            split = "test" if rank < n_test else "train"
            assignments[ids[idx]] = (split, sub)

    return SplitManifest(
        seed=seed,
        algorithm=SAMPLER_ALGORITHM,
        params={
            "min_instances": min_instances,
            "per_class": per_class,
            "test_fraction": test_fraction,
            "accept_status": accept_status,
        },
        assignments=assignments,
    )


def build_ood_set(corpus: Sequence[Document], taxonomy: Taxonomy,
                  train_label_set: Iterable[str], cap_per_class: int = 10,
                  seed: int = 0, accept_status: Optional[str] = None) -> list:
    """Up to cap_per_class docs per subclass that overlaps the training label
    set; non-overlapping labels are dropped entirely."""
    if cap_per_class < 1:
        raise DatasetError("cap_per_class must be >= 1")
    train_labels = set(train_label_set)
    groups, _ = group_by_subclass(corpus, taxonomy, accept_status)
    kept = sorted(sub for sub in groups if sub in train_labels)
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(kept)) if kept else []
    out = []
    for sub, child in zip(kept, children):
        rng = np.random.default_rng(child)
        ids = sorted(groups[sub])
        if len(ids) <= cap_per_class:
            out.extend(ids)
        else:
            chosen = rng.permutation(len(ids))[:cap_per_class]
            out.extend(ids[i] for i in sorted(chosen))
    return out


@dataclass(frozen=True)
class RejectedTrace:
    index: int
    reason: str


def filter_synthetic_traces(traces: Sequence[dict], taxonomy: Taxonomy):
    """Keep traces that parse strictly and whose every step matches gold.

    Each input is {"raw": str, "gold": LabelPath-or-code}; returns (kept
    indices, rejections with reasons).
    """
    kept, rejected = [], []
    for i, item in enumerate(traces):
        gold = item["gold"]
        if not isinstance(gold, LabelPath):
            gold = taxonomy.parse_label(str(gold))
        report = parse_trace(item["raw"], taxonomy.level_names, mode="strict")
        if report.trace is None:
            tags = sorted({str(v) for v in report.violations})
            rejected.append(RejectedTrace(i, tags[0] if tags else "unparseable"))
            continue
        mismatch = None
        for level, gold_code in enumerate(gold.codes, start=1):
            decision = report.trace.decision_at(level)
            if decision != gold_code:
                mismatch = level
                break
        if mismatch is not None:
            rejected.append(RejectedTrace(i, f"label_mismatch@{mismatch}"))
        else:
            kept.append(i)
    return kept, rejected
