"""Marked partitions of {1, ..., n}.

A marked partition is a set partition where every block carries a
nonnegative mark; a mark of 0 means the block is frozen. Blocks are
labelled canonically: block 1 contains the integer 1 and block ``k + 1``
starts at the smallest integer not covered by blocks ``1..k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence


def _canonical(labels: Sequence, marks: Mapping) -> tuple[tuple[int, ...], tuple[float, ...]]:
    relabel: dict = {}
    new_marks: list[float] = []
    assignment = []
    for lab in labels:
        if lab not in relabel:
            relabel[lab] = len(relabel) + 1
            new_marks.append(float(marks[lab]))
        assignment.append(relabel[lab])
    return tuple(assignment), tuple(new_marks)


@dataclass(frozen=True)
class MarkedPartition:
    """Partition of ``{1..n}`` with one mark per block.

    ``assignment[i - 1]`` is the label of the block containing ``i`` and
    ``marks[k - 1]`` is the mark of block ``k``. Construct through
    :meth:`from_labels` or :meth:`from_blocks` when labels are not yet
    canonical.
    """

    assignment: tuple[int, ...]
    marks: tuple[float, ...]

    def __post_init__(self):
        if len(self.assignment) == 0:
            raise ValueError("a marked partition needs level n >= 1")
        expected = 1
        for lab in self.assignment:
            if lab > expected or lab < 1:
                raise ValueError(f"labels are not canonical: {self.assignment}")
            if lab == expected:
                expected += 1
        if len(self.marks) != expected - 1:
            raise ValueError(
                f"{expected - 1} blocks but {len(self.marks)} marks given"
            )
        for v in self.marks:
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"marks must be finite and >= 0, got {v!r}")

    @classmethod
    def from_labels(cls, labels: Sequence, marks: Mapping | Sequence) -> "MarkedPartition":
        """Build from arbitrary hashable labels, relabelling canonically.

        ``marks`` maps each label to its mark; a sequence is read as
        ``marks[label - 1]`` for integer labels starting at 1.
        """
        if not isinstance(marks, Mapping):
            marks = {k + 1: v for k, v in enumerate(marks)}
        return cls(*_canonical(labels, marks))

    @classmethod
    def from_blocks(cls, blocks: Iterable[Iterable[int]], marks: Sequence[float]) -> "MarkedPartition":
        blocks = [sorted(b) for b in blocks]
        n = sum(len(b) for b in blocks)
        labels = [0] * n
        for k, block in enumerate(blocks):
            for i in block:
                if not 1 <= i <= n or labels[i - 1]:
                    raise ValueError(f"blocks do not partition {{1..{n}}}")
                labels[i - 1] = k + 1
        return cls.from_labels(labels, {k + 1: m for k, m in enumerate(marks)})

    @classmethod
    def trivial(cls, n: int, mark: float = 1.0) -> "MarkedPartition":
        """The one-block partition (1_n, mark)."""
        return cls((1,) * n, (float(mark),))

    @classmethod
    def singletons(cls, n: int, mark: float = 0.0) -> "MarkedPartition":
        return cls(tuple(range(1, n + 1)), (float(mark),) * n)

    @property
    def level(self) -> int:
        return len(self.assignment)

    @property
    def n_blocks(self) -> int:
        return len(self.marks)

    def blocks(self) -> list[tuple[int, ...]]:
        out: list[list[int]] = [[] for _ in self.marks]
        for i, lab in enumerate(self.assignment, start=1):
            out[lab - 1].append(i)
        return [tuple(b) for b in out]

    def mark_of(self, i: int) -> float:
        """Mark carried by the block containing integer ``i``."""
        return self.marks[self.assignment[i - 1] - 1]

    def integer_marks(self) -> tuple[float, ...]:
        return tuple(self.marks[lab - 1] for lab in self.assignment)

    def same_block(self, i: int, j: int) -> bool:
        return self.assignment[i - 1] == self.assignment[j - 1]

    def is_trivial(self) -> bool:
        return self.n_blocks == 1

    def is_finer_than(self, other: "MarkedPartition") -> bool:
        """True when every block of ``self`` sits inside a block of ``other``."""
        if other.level != self.level:
            raise ValueError("partitions live on different levels")
        owner: dict[int, int] = {}
        for a, b in zip(self.assignment, other.assignment):
            if owner.setdefault(a, b) != b:
                return False
        return True

    def to_text(self) -> str:
        return dumps(self)


def restrict(x: MarkedPartition, n: int) -> MarkedPartition:
    """Restriction of ``x`` to ``{1..n}``."""
    if not 1 <= n <= x.level:
        raise ValueError(f"cannot restrict level {x.level} to level {n}")
    return MarkedPartition.from_labels(x.assignment[:n], x.marks)


def apply_permutation(x: MarkedPartition, sigma: Sequence[int]) -> MarkedPartition:
    """Action ``x^sigma``: ``i ~ j`` iff ``sigma(i) ~ sigma(j)`` in ``x``.

    ``sigma`` is given in one-line notation, ``sigma[i - 1] = sigma(i)``.
    """
    n = x.level
    if len(sigma) != n or sorted(sigma) != list(range(1, n + 1)):
        raise ValueError(f"not a permutation of 1..{n}: {list(sigma)}")
    labels = [x.assignment[s - 1] for s in sigma]
    return MarkedPartition.from_labels(labels, x.marks)


def frag(x: MarkedPartition, parts: Sequence[MarkedPartition]) -> MarkedPartition:
    """Fragment each block of ``x`` by the corresponding entry of ``parts``.

    Block ``k`` (members ``m_1 < ... < m_b``) is split according to the
    restriction of ``parts[k - 1]`` to ``{1..b}``: ``m_j`` and ``m_l`` stay
    together iff ``j`` and ``l`` do. Child marks are products of the
    mother mark and the part mark, so frozen blocks stay whole and frozen.
    """
    blocks = x.blocks()
    if len(parts) < len(blocks):
        raise ValueError(f"{len(blocks)} blocks but only {len(parts)} parts")
    labels: list = [None] * x.level
    marks: dict = {}
    for k, (block, part) in enumerate(zip(blocks, parts)):
        mother = x.marks[k]
        if mother == 0.0:
            for i in block:
                labels[i - 1] = (k, 0)
            marks[(k, 0)] = 0.0
            continue
        if part.level < len(block):
            raise ValueError(
                f"part {k + 1} has level {part.level} < block size {len(block)}"
            )
        for j, i in enumerate(block):
            lab = (k, part.assignment[j])
            labels[i - 1] = lab
            marks[lab] = mother * part.marks[part.assignment[j] - 1]
    return MarkedPartition.from_labels(labels, marks)


@dataclass(frozen=True)
class FrequencyEstimate:
    """Block frequencies and marks, lexicographically nonincreasing."""

    pairs: tuple[tuple[float, float], ...]

    def frequencies(self) -> tuple[float, ...]:
        return tuple(s for s, _ in self.pairs)


def empirical_frequencies(x: MarkedPartition) -> FrequencyEstimate:
    counts = [0] * x.n_blocks
    for lab in x.assignment:
        counts[lab - 1] += 1
    pairs = sorted(
        ((c / x.level, v) for c, v in zip(counts, x.marks)), reverse=True
    )
    return FrequencyEstimate(tuple(pairs))


def format_mark(v: float) -> str:
    return "0" if v == 0.0 else repr(float(v))


def dumps(x: MarkedPartition) -> str:
    """Three-line text form: level, assignment vector, marks per label."""
    return "\n".join(
        [
            f"n={x.level}",
            " ".join(str(a) for a in x.assignment),
            " ".join(format_mark(v) for v in x.marks),
        ]
    ) + "\n"


def loads(text: str) -> MarkedPartition:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    if len(lines) != 3 or not lines[0].startswith("n="):
        raise ValueError("expected three lines: 'n=<level>', labels, marks")
    n = int(lines[0][2:])
    assignment = tuple(int(tok) for tok in lines[1].split())
    marks = tuple(float(tok) for tok in lines[2].split())
    if len(assignment) != n:
        raise ValueError(f"level n={n} but {len(assignment)} labels")
    return MarkedPartition(assignment, marks)
