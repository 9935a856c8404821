"""Dislocation measures, paintbox sampling and the level-n dislocation laws.

Dislocation measures are finite atomic measures on the space of
lexicographically nonincreasing (size, mark) sequences. Everything here is
written as a sum over atoms.
"""

from __future__ import annotations

import bisect
import functools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .marked_partition import MarkedPartition

SUM_TOLERANCE = 1e-12
# jumps of log-mark at most this size are compensated in the drift
JUMP_TRUNCATION = 1.0


def as_rng(rng: Any) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _lex_geq(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] > b[0] or (a[0] == b[0] and a[1] >= b[1])


@dataclass(frozen=True)
class ZElement:
    """A finite nonincreasing sequence of (size, mark) pairs with zero tail."""

    pairs: tuple[tuple[float, float], ...]

    def __init__(self, pairs: Iterable[Sequence[float]]):
        cleaned = []
        for p in pairs:
            s, v = float(p[0]), float(p[1])
            if not (0.0 <= s <= 1.0) or not math.isfinite(v) or v < 0.0:
                raise ValueError(f"invalid pair (s={s}, v={v})")
            if s == 0.0:
                if v != 0.0:
                    raise ValueError("a pair with size 0 must have mark 0")
                continue
            cleaned.append((s, v))
        for a, b in zip(cleaned, cleaned[1:]):
            if not _lex_geq(a, b):
                raise ValueError(f"pairs not lexicographically nonincreasing: {a} then {b}")
        total = math.fsum(s for s, _ in cleaned)
        if total > 1.0 + SUM_TOLERANCE:
            raise ValueError(f"sizes sum to {total!r} > 1")
        object.__setattr__(self, "pairs", tuple(cleaned))

    @classmethod
    def unit(cls, v: float) -> "ZElement":
        """The element (1, v): one full-size interval with mark ``v``."""
        return cls([(1.0, v)])

    @property
    def sizes(self) -> tuple[float, ...]:
        return tuple(s for s, _ in self.pairs)

    @property
    def marks(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.pairs)

    @property
    def first(self) -> tuple[float, float]:
        return self.pairs[0] if self.pairs else (0.0, 0.0)

    def is_identity(self) -> bool:
        return self.pairs == ((1.0, 1.0),)

    def boundaries(self) -> list[float]:
        out, acc = [], 0.0
        for s, _ in self.pairs:
            acc += s
            out.append(acc)
        return out


@dataclass(frozen=True)
class DislocationMeasure:
    """Finite atomic measure: a tuple of ``(weight, ZElement)`` atoms."""

    atoms: tuple[tuple[float, ZElement], ...] = ()

    def __post_init__(self):
        atoms = tuple((float(w), z if isinstance(z, ZElement) else ZElement(z)) for w, z in self.atoms)
        for w, z in atoms:
            if not (math.isfinite(w) and w > 0.0):
                raise ValueError(f"atom weights must be finite and > 0, got {w!r}")
            if z.is_identity():
                raise ValueError("the measure may not charge the identity element (1, 1)")
        object.__setattr__(self, "atoms", atoms)

    @property
    def total_mass(self) -> float:
        return math.fsum(w for w, _ in self.atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    @functools.cached_property
    def _cumulative(self) -> list[float]:
        acc, out = 0.0, []
        for w, _ in self.atoms:
            acc += w
            out.append(acc)
        return out

    def pick(self, u: float) -> ZElement:
        """Atom selected by ``u`` uniform on ``[0, total_mass)``."""
        k = bisect.bisect_right(self._cumulative, u)
        return self.atoms[min(k, len(self.atoms) - 1)][1]

    def truncate(self, keep: Callable[[float, ZElement], bool]) -> tuple["DislocationMeasure", float]:
        """Drop atoms failing ``keep``; also return the dropped integrability mass.

        No error control is implied: this is a hook for approximating
        infinite measures by finite ones.
        """
        kept = tuple(a for a in self.atoms if keep(*a))
        dropped = DislocationMeasure(tuple(a for a in self.atoms if not keep(*a)))
        return DislocationMeasure(kept), integrability_value(dropped)


@dataclass(frozen=True)
class Characteristics:
    """Index ``alpha`` and the quadruple (erosion c, drift d, Gaussian beta, measure)."""

    alpha: float = 0.0
    c: float = 0.0
    d: float = 0.0
    beta: float = 0.0
    lam: DislocationMeasure = field(default_factory=DislocationMeasure)

    def __post_init__(self):
        for name in ("alpha", "c", "d", "beta"):
            val = float(getattr(self, name))
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, val)
        if self.c < 0:
            raise ValueError(f"erosion rate c must be >= 0, got {self.c}")
        if self.beta < 0:
            raise ValueError(f"Gaussian coefficient beta must be >= 0, got {self.beta}")
        if not isinstance(self.lam, DislocationMeasure):
            object.__setattr__(self, "lam", DislocationMeasure(tuple(self.lam)))
        if not math.isfinite(integrability_value(self.lam)):
            raise ValueError("dislocation measure is not integrable")

    def replace(self, **changes) -> "Characteristics":
        kw = dict(alpha=self.alpha, c=self.c, d=self.d, beta=self.beta, lam=self.lam)
        kw.update(changes)
        return Characteristics(**kw)

    def scaled_rates(self, factor: float) -> "Characteristics":
        """Same characteristics with erosion and all atom weights multiplied."""
        lam = DislocationMeasure(tuple((w * factor, z) for w, z in self.lam.atoms))
        return self.replace(c=self.c * factor, lam=lam)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "c": self.c,
            "d": self.d,
            "beta": self.beta,
            "lambda": [
                {"weight": w, "pairs": [[s, v] for s, v in z.pairs]}
                for w, z in self.lam.atoms
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Characteristics":
        unknown = set(doc) - {"alpha", "c", "d", "beta", "lambda"}
        if unknown:
            raise ValueError(f"unknown characteristics keys: {sorted(unknown)}")
        atoms = []
        for k, atom in enumerate(doc.get("lambda") or []):
            try:
                atoms.append((atom["weight"], ZElement(atom["pairs"])))
            except (KeyError, TypeError) as exc:
                raise ValueError(f"lambda[{k}] needs 'weight' and 'pairs'") from exc
        return cls(
            alpha=doc.get("alpha", 0.0),
            c=doc.get("c", 0.0),
            d=doc.get("d", 0.0),
            beta=doc.get("beta", 0.0),
            lam=DislocationMeasure(tuple(atoms)),
        )


def integrability_value(lam: DislocationMeasure) -> float:
    """Sum over atoms of ``w * (1 - s1 1{v1>0} + min((log v1)^2, 1))``.

    The indicator ``v1 > 0`` also guards the log term, so an atom whose
    first mark is 0 contributes ``w``.
    """
    total = 0.0
    for w, z in lam.atoms:
        s1, v1 = z.first
        if v1 > 0.0:
            total += w * (1.0 - s1 + min(math.log(v1) ** 2, 1.0))
        else:
            total += w
    return total


def sample_paintbox(z: ZElement, n: int, rng) -> MarkedPartition:
    """Draw from the paintbox law of ``z`` restricted to ``{1..n}``."""
    rng = as_rng(rng)
    bounds = z.boundaries()
    marks = z.marks
    labels: list = []
    label_marks: dict = {}
    for i, u in enumerate(rng.random(n)):
        k = bisect.bisect_right(bounds, u)
        if k < len(bounds):
            labels.append(k)
            label_marks[k] = marks[k]
        else:
            lab = ("dust", i)
            labels.append(lab)
            label_marks[lab] = 0.0
    return MarkedPartition.from_labels(labels, label_marks)


def erosion_atom(n: int, i: int) -> MarkedPartition:
    """Integer ``i`` detaches as a frozen singleton; the rest keeps mark 1."""
    if not 1 <= i <= n:
        raise ValueError(f"erosion index {i} outside 1..{n}")
    if n == 1:
        return MarkedPartition((1,), (0.0,))
    labels = ["rest" if j != i else "eroded" for j in range(1, n + 1)]
    return MarkedPartition.from_labels(labels, {"rest": 1.0, "eroded": 0.0})


def rate_J(ch: Characteristics, n: int) -> float:
    """Killing rate of the level-n restriction: erosion plus visible dislocations."""
    if n < 1:
        raise ValueError("level must be >= 1")
    total = n * ch.c
    for w, z in ch.lam.atoms:
        total += w * (1.0 - math.fsum(s**n for s, v in z.pairs if v > 0.0))
    return total


def _is_mark_jump(x: MarkedPartition) -> bool:
    return x.n_blocks == 1 and x.marks[0] > 0.0


def sample_dislocation(ch: Characteristics, n: int, rng) -> MarkedPartition:
    """Sample the level-n dislocation law by thinning the Poissonian intensity.

    Proposals are erosion atoms (total weight ``n c``) or paintbox draws from
    an atom picked proportionally to its weight. Paintbox draws that leave
    ``{1..n}`` in one unfrozen block are mark jumps, not dislocations, and
    are rejected.
    """
    J = rate_J(ch, n)
    if J <= 0.0:
        raise ValueError(f"J_{n} = 0: level {n} never dislocates")
    rng = as_rng(rng)
    erosion = n * ch.c
    total = erosion + ch.lam.total_mass
    while True:
        u = rng.random() * total
        if u < erosion:
            return erosion_atom(n, int(rng.integers(1, n + 1)))
        x = sample_paintbox(ch.lam.pick(u - erosion), n, rng)
        if not _is_mark_jump(x):
            return x


def jump_measure_level(ch: Characteristics, n: int) -> list[tuple[float, float]]:
    """Nonzero-jump part of the level-n Levy measure of the log-mark.

    Returns ``(rate, jump)`` pairs, aggregated by exact jump value in order
    of first appearance.
    """
    agg: dict[float, float] = {}
    for w, z in ch.lam.atoms:
        for s, v in z.pairs:
            if v > 0.0 and v != 1.0:
                y = math.log(v)
                agg[y] = agg.get(y, 0.0) + w * s**n
    return [(rate, y) for y, rate in agg.items() if rate > 0.0]


def compensation(ch: Characteristics) -> float:
    """Sum over atoms of ``w log v1 1{|log v1| <= 1, v1 > 0}``."""
    total = 0.0
    for w, z in ch.lam.atoms:
        v1 = z.first[1]
        if v1 > 0.0:
            y = math.log(v1)
            if abs(y) <= JUMP_TRUNCATION:
                total += w * y
    return total


def effective_drift(ch: Characteristics) -> float:
    """Drift of the log-mark between (uncompensated) Poisson events."""
    return ch.d - compensation(ch)


@dataclass(frozen=True)
class LevelLaw:
    """Per-level event rates used by the simulators.

    ``factors`` are the multiplicative mark jumps (``v_j``), stored
    alongside their logs so that products of marks stay exact.
    """

    level: int
    J: float
    jump_rates: tuple[float, ...]
    jump_factors: tuple[float, ...]
    jump_logs: tuple[float, ...]

    @property
    def jump_total(self) -> float:
        return math.fsum(self.jump_rates)

    @functools.cached_property
    def _jump_cumulative(self) -> list[float]:
        acc, out = 0.0, []
        for r in self.jump_rates:
            acc += r
            out.append(acc)
        return out

    def pick_jump(self, u: float) -> float:
        k = bisect.bisect_right(self._jump_cumulative, u)
        return self.jump_factors[min(k, len(self.jump_factors) - 1)]


@functools.lru_cache(maxsize=4096)
def level_law(ch: Characteristics, n: int) -> LevelLaw:
    agg: dict[float, float] = {}
    for w, z in ch.lam.atoms:
        for s, v in z.pairs:
            if v > 0.0 and v != 1.0:
                agg[v] = agg.get(v, 0.0) + w * s**n
    items = [(r, v) for v, r in agg.items() if r > 0.0]
    return LevelLaw(
        level=n,
        J=rate_J(ch, n),
        jump_rates=tuple(r for r, _ in items),
        jump_factors=tuple(v for _, v in items),
        jump_logs=tuple(math.log(v) for _, v in items),
    )


def binary_unit_measure(weight: float = 1.0) -> DislocationMeasure:
    """Split into two halves that both keep the mother's mark."""
    return DislocationMeasure(((weight, ZElement([(0.5, 1.0), (0.5, 1.0)])),))


def binary_halving_measure(weight: float = 1.0) -> DislocationMeasure:
    """Split into two halves with marks equal to their sizes."""
    return DislocationMeasure(((weight, ZElement([(0.5, 0.5), (0.5, 0.5)])),))


def freezing_measure(weight: float) -> DislocationMeasure:
    return DislocationMeasure(((weight, ZElement.unit(0.0)),))
