"""Label hierarchies, path validation, and information-based level weights."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


class TaxonomyError(ValueError):
    pass


class MalformedCode(TaxonomyError):
    pass


class UnknownCode(TaxonomyError):
    pass


class DegenerateLevel(TaxonomyError):
    pass


class DepthOutOfRange(TaxonomyError):
    pass


class InvalidPath(TaxonomyError):
    pass


def normalize_code(raw: str) -> str:
    return raw.strip().upper()


@dataclass(frozen=True)
class LevelSpec:
    """One level of the hierarchy: its name, code set, and parent links."""

    name: str
    codes: frozenset
    parent_of: dict = field(default_factory=dict)  # code -> parent code; empty at level 1


@dataclass(frozen=True)
class LabelPath:
    """A per-level chain of codes, shallowest first."""

    codes: tuple

    def __len__(self):
        return len(self.codes)

    def __getitem__(self, i):
        return self.codes[i]

    @property
    def leaf(self) -> str:
        return self.codes[-1]

    def render(self) -> str:
        return self.codes[-1]


def truncate(path: LabelPath, depth: int) -> LabelPath:
    if not 1 <= depth <= len(path):
        raise DepthOutOfRange(f"depth {depth} outside [1, {len(path)}]")
    return LabelPath(path.codes[:depth])


class Taxonomy:
    """An immutable L-level label hierarchy.

    Every code at level i > 1 has exactly one parent at level i-1, codes are
    unique within a level, and every level has at least two codes so the
    log-count weights are well defined.
    """

    def __init__(self, name: str, levels: Sequence[LevelSpec]):
        if not levels:
            raise TaxonomyError("taxonomy needs at least one level")
        for i, lvl in enumerate(levels):
            if len(lvl.codes) < 2:
                raise DegenerateLevel(
                    f"level {i + 1} ({lvl.name!r}) has {len(lvl.codes)} codes; need >= 2"
                )
            if i == 0:
                if lvl.parent_of:
                    raise TaxonomyError("level 1 cannot have parent links")
                continue
            parents = levels[i - 1].codes
            for code in lvl.codes:
                parent = lvl.parent_of.get(code)
                if parent is None:
                    raise TaxonomyError(f"code {code!r} at level {i + 1} has no parent")
                if parent not in parents:
                    raise TaxonomyError(
                        f"code {code!r} at level {i + 1} names unknown parent {parent!r}"
                    )
        self.name = name
        self.levels = tuple(levels)
        self._children = []
        for i, lvl in enumerate(self.levels):
            if i == 0:
                continue
            kids: dict = {}
            for code, parent in lvl.parent_of.items():
                kids.setdefault(parent, []).append(code)
            for parent in kids:
                kids[parent].sort()
            self._children.append(kids)

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def level_counts(self) -> tuple:
        return tuple(len(lvl.codes) for lvl in self.levels)

    @property
    def level_names(self) -> tuple:
        return tuple(lvl.name for lvl in self.levels)

    def has_code(self, level_index: int, code: str) -> bool:
        """level_index is 1-based."""
        return code in self.levels[level_index - 1].codes

    def parent(self, level_index: int, code: str) -> str:
        if level_index < 2:
            raise TaxonomyError("level 1 codes have no parent")
        return self.levels[level_index - 1].parent_of[code]

    def children(self, level_index: int, code: str) -> list:
        """Sorted children (at level_index + 1) of a code at level_index."""
        if level_index >= self.depth:
            return []
        return list(self._children[level_index - 1].get(code, []))

    def validate_path(self, codes: Iterable[str]) -> LabelPath:
        chain = tuple(normalize_code(c) for c in codes)
        if not chain:
            raise InvalidPath("empty path")
        if len(chain) > self.depth:
            raise InvalidPath(f"path of length {len(chain)} exceeds depth {self.depth}")
        for i, code in enumerate(chain):
            if not self.has_code(i + 1, code):
                raise UnknownCode(f"{code!r} is not a level-{i + 1} code")
            if i > 0 and self.parent(i + 1, code) != chain[i - 1]:
                raise InvalidPath(
                    f"{code!r} at level {i + 1} is not a child of {chain[i - 1]!r}"
                )
        return LabelPath(chain)

    def path_to(self, level_index: int, code: str) -> LabelPath:
        """Full ancestor chain ending at `code` (a level_index code)."""
        code = normalize_code(code)
        if not self.has_code(level_index, code):
            raise UnknownCode(f"{code!r} is not a level-{level_index} code")
        chain = [code]
        for i in range(level_index, 1, -1):
            chain.append(self.parent(i, chain[-1]))
        return LabelPath(tuple(reversed(chain)))

    def parse_label(self, raw: str) -> LabelPath:
        """Resolve a bare code to its full ancestor chain.

        IPC-shaped codes are decomposed positionally; otherwise the code is
        located by exact match at its (unique) level.
        """
        code = normalize_code(raw)
        if not code:
            raise MalformedCode("empty code")
        if _IPC_ANY.fullmatch(code):
            try:
                return parse_ipc_code(code, self)
            except (UnknownCode, MalformedCode):
                pass  # fall through: a non-IPC taxonomy may reuse the shape
        for i in range(self.depth, 0, -1):
            if self.has_code(i, code):
                return self.path_to(i, code)
        raise UnknownCode(f"{code!r} not found at any level of {self.name!r}")

    @classmethod
    def from_file(cls, path, name: str | None = None) -> "Taxonomy":
        """Load the tab-separated `code<TAB>level<TAB>parent-or-dash<TAB>description` format."""
        path = Path(path)
        records = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 3:
                raise TaxonomyError(f"{path}:{lineno}: expected at least 3 tab-separated fields")
            code = normalize_code(parts[0])
            try:
                level = int(parts[1])
            except ValueError:
                raise TaxonomyError(f"{path}:{lineno}: bad level index {parts[1]!r}") from None
            parent = normalize_code(parts[2]) if parts[2].strip() not in ("-", "") else None
            records.append((level, code, parent))
        if not records:
            raise TaxonomyError(f"{path}: no records")
        depth = max(r[0] for r in records)
        names = _default_level_names(depth)
        specs = []
        for i in range(1, depth + 1):
            codes = set()
            parent_of = {}
            for level, code, parent in records:
                if level != i:
                    continue
                if code in codes:
                    raise TaxonomyError(f"duplicate code {code!r} at level {i}")
                codes.add(code)
                if i > 1:
                    if parent is None:
                        raise TaxonomyError(f"code {code!r} at level {i} missing parent")
                    parent_of[code] = parent
            specs.append(LevelSpec(names[i - 1], frozenset(codes), parent_of))
        return cls(name or path.stem, specs)

    def to_file(self, path) -> None:
        lines = []
        for i, lvl in enumerate(self.levels):
            for code in sorted(lvl.codes):
                parent = lvl.parent_of.get(code, "-") if i > 0 else "-"
                lines.append(f"{code}\t{i + 1}\t{parent}\t")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _default_level_names(depth: int) -> list:
    if depth == 3:
        return ["Section", "Class", "Subclass"]
    return [f"Level {i}" for i in range(1, depth + 1)]


_IPC_ANY = re.compile(r"[A-H](\d{2}[A-Z]?)?")


def parse_ipc_code(raw: str, taxonomy: Taxonomy) -> LabelPath:
    """Expand an IPC-style code into its prefix chain, e.g. H03L -> [H, H03, H03L].

    Shape: one section letter, two class digits, one subclass letter; shorter
    codes stop at the implied level.
    """
    code = normalize_code(raw)
    if not code:
        raise MalformedCode("empty code")
    if not re.fullmatch(r"[A-Z](\d{2}[A-Z]?)?", code):
        raise MalformedCode(f"{raw!r} is not section / class / subclass shaped")
    prefixes = [code[:n] for n in (1, 3, 4) if len(code) >= n]
    if len(prefixes) > taxonomy.depth:
        raise MalformedCode(
            f"{raw!r} implies {len(prefixes)} levels; taxonomy has {taxonomy.depth}"
        )
    try:
        return taxonomy.validate_path(prefixes)
    except InvalidPath as exc:  # prefix-coded levels can only fail by absence
        raise UnknownCode(str(exc)) from None


def weights_from_counts(counts: Sequence[int]) -> list:
    """w_i = log K_i / sum_j log K_j, natural log (the ratio is base-invariant)."""
    if any(k < 2 for k in counts):
        raise DegenerateLevel(f"all level counts must be >= 2, got {tuple(counts)}")
    logs = [math.log(k) for k in counts]
    total = sum(logs)
    return [x / total for x in logs]


def level_weights(taxonomy: Taxonomy) -> list:
    return weights_from_counts(taxonomy.level_counts)
