"""Cumulants, additive statistics and the standard presets."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize

from .dislocation import (
    JUMP_TRUNCATION,
    Characteristics,
    DislocationMeasure,
    ZElement,
    as_rng,
    rate_J,
    sample_dislocation,
)
from .levy_mark import moment_exponent
from .marked_partition import MarkedPartition
from .simulate import branching_marks, stream

ENUMERATION_CUTOFF = 6
MARTINGALE_TAG = 101


def _pow(v: float, theta: float) -> float:
    # 0 ** theta = 0 for every theta, including theta = 0
    return v**theta if v > 0.0 else 0.0


def additive_statistic(x: MarkedPartition, theta: float) -> float:
    return math.fsum(_pow(v, theta) for v in x.marks)


def _compensator(z: ZElement, theta: float) -> float:
    v1 = z.first[1]
    if v1 > 0.0:
        y = math.log(v1)
        if abs(y) <= JUMP_TRUNCATION:
            return theta * y
    return 0.0


def cumulant(ch: Characteristics, theta: float) -> float:
    total = ch.d * theta + 0.5 * ch.beta * theta * theta
    for w, z in ch.lam.atoms:
        total += w * (math.fsum(_pow(v, theta) for v in z.marks) - 1.0 - _compensator(z, theta))
    return total


def cumulant_level(ch: Characteristics, n: int, theta: float) -> float:
    """Level-n cumulant ``A + J_n B`` in closed form.

    Interval ``k`` of an atom is visible at level n with probability
    ``1 - (1 - s_k)^n``; erosion leaves ``S_theta`` unchanged and adds nothing.
    """
    if n < 1:
        raise ValueError("level must be >= 1")
    total = ch.d * theta + 0.5 * ch.beta * theta * theta
    for w, z in ch.lam.atoms:
        seen = math.fsum(_pow(v, theta) * -math.expm1(n * math.log1p(-s)) if s < 1.0 else _pow(v, theta)
                         for s, v in z.pairs)
        total += w * (seen - 1.0 - _compensator(z, theta))
    return total


def branching_term(ch: Characteristics, n: int, theta: float) -> float:
    """``J_n B`` by enumerating every assignment of n uniforms to intervals.

    Exponential in n; used as an oracle for small levels.
    """
    if n > ENUMERATION_CUTOFF:
        raise ValueError(f"enumeration is limited to n <= {ENUMERATION_CUTOFF}")
    total = 0.0
    for w, z in ch.lam.atoms:
        sizes = list(z.sizes)
        dust = max(0.0, 1.0 - math.fsum(sizes))
        probs = sizes + [dust]
        dust_idx = len(sizes)
        acc = 0.0
        for assign in itertools.product(range(len(probs)), repeat=n):
            p = math.prod(probs[k] for k in assign)
            if p == 0.0:
                continue
            used = set(assign)
            if len(used) == 1 and dust_idx not in used and z.marks[assign[0]] > 0.0:
                continue  # a mark jump, not a level-n event
            stat = sum(_pow(z.marks[k], theta) for k in used if k != dust_idx)
            acc += p * (stat - 1.0)
        total += w * acc
    return total


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float = 0.0
    method: str = "exact"


def branching_term_mc(ch: Characteristics, n: int, theta: float, replicates: int, rng) -> Estimate:
    """Monte Carlo ``J_n B`` from draws of the level-n dislocation law."""
    J = rate_J(ch, n)
    if J == 0.0:
        return Estimate(0.0, 0.0, "mc")
    rng = as_rng(rng)
    vals = np.array(
        [additive_statistic(sample_dislocation(ch, n, rng), theta) - 1.0 for _ in range(replicates)]
    )
    return Estimate(J * float(vals.mean()), J * float(vals.std(ddof=1)) / math.sqrt(replicates), "mc")


def level_cumulant_estimate(
    ch: Characteristics, n: int, theta: float, replicates: int = 20000, rng=None
) -> Estimate:
    """``A + J_n B`` with enumeration for small n and Monte Carlo above."""
    a = moment_exponent(ch, n, theta)
    if n <= ENUMERATION_CUTOFF:
        return Estimate(a + branching_term(ch, n, theta), 0.0, "enumeration")
    b = branching_term_mc(ch, n, theta, replicates, rng)
    return Estimate(a + b.value, b.se, "mc")


def sign_search(
    ch: Characteristics, interval: tuple[float, float] = (-10.0, 10.0)
) -> tuple[float, float]:
    """Minimizer and minimum of the (convex) cumulant on ``interval``."""
    lo, hi = interval
    res = optimize.minimize_scalar(
        lambda t: cumulant(ch, t), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10}
    )
    theta, value = float(res.x), float(res.fun)
    for edge in (lo, hi):
        if cumulant(ch, edge) < value:
            theta, value = edge, cumulant(ch, edge)
    return theta, value


@dataclass
class CumulantReport:
    thetas: list[float]
    kappa: list[float]
    kappa_n: dict[int, list[float]]
    theta_star: float
    kappa_min: float
    mc_mean: list[float] | None = None
    mc_se: list[float] | None = None

    @property
    def has_negative_region(self) -> bool:
        return self.kappa_min < 0.0 and self.theta_star != 0.0

    def to_csv(self, header: str | None = None) -> str:
        buf = io.StringIO()
        if header:
            buf.write(f"# {header}\n")
        levels = sorted(self.kappa_n)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["theta", "kappa", *[f"kappa_{n}" for n in levels], "mc_mean", "mc_se"])
        for k, th in enumerate(self.thetas):
            mc = ["", ""]
            if self.mc_mean is not None:
                mc = [repr(self.mc_mean[k]), repr(self.mc_se[k])]
            writer.writerow(
                [repr(th), repr(self.kappa[k]), *[repr(self.kappa_n[n][k]) for n in levels], *mc]
            )
        return buf.getvalue()


def cumulant_report(
    ch: Characteristics,
    thetas: Sequence[float],
    levels: Sequence[int] = (),
    search: tuple[float, float] = (-10.0, 10.0),
) -> CumulantReport:
    thetas = [float(t) for t in thetas]
    theta_star, kmin = sign_search(ch, search)
    return CumulantReport(
        thetas=thetas,
        kappa=[cumulant(ch, t) for t in thetas],
        kappa_n={n: [cumulant_level(ch, n, t) for t in thetas] for n in levels},
        theta_star=theta_star,
        kappa_min=kmin,
    )


@dataclass(frozen=True)
class MartingalePoint:
    t: float
    mean: float
    se: float

    @property
    def ci(self) -> tuple[float, float]:
        return self.mean - 1.959963984540054 * self.se, self.mean + 1.959963984540054 * self.se


def martingale_samples(
    ch: Characteristics,
    theta: float,
    times: Sequence[float],
    replicates: int,
    n: int | None,
    seed: int,
    kappa: float | None = None,
) -> np.ndarray:
    """Replicates x times array of ``exp(-t kappa) S_theta``.

    ``n = None`` follows every unfrozen mark of the whole process and
    normalizes by the cumulant; an integer n follows the level-n particle
    system and normalizes by the level-n cumulant. ``kappa`` overrides the
    normalizing exponent.
    """
    if kappa is None:
        kappa = cumulant(ch, theta) if n is None else cumulant_level(ch, n, theta)
    times = np.asarray(times, dtype=float)
    out = np.empty((replicates, len(times)))
    for r in range(replicates):
        marks = branching_marks(ch, times, stream(seed, MARTINGALE_TAG, r), level=n)
        out[r] = [math.fsum(_pow(v, theta) for v in ms) for ms in marks]
    return out * np.exp(-times * kappa)


def martingale_estimate(
    ch: Characteristics,
    theta: float,
    times: Sequence[float],
    replicates: int,
    n: int | None,
    seed: int,
    kappa: float | None = None,
) -> list[MartingalePoint]:
    """Monte Carlo means of the normalized additive statistic, one per time."""
    samples = martingale_samples(ch, theta, times, replicates, n, seed, kappa)
    means = samples.mean(axis=0)
    ses = samples.std(axis=0, ddof=1) / math.sqrt(replicates) if replicates > 1 else np.zeros(len(times))
    return [MartingalePoint(float(t), float(m), float(s)) for t, m, s in zip(times, means, ses)]


def classical_preset(nu: DislocationMeasure, c: float, alpha: float = 0.0) -> Characteristics:
    """Classical fragmentation: marks equal block sizes.

    The drift is chosen so the cumulant reduces to
    ``-c theta + sum w (sum s_i^theta - 1)``.
    """
    if c < 0:
        raise ValueError("erosion rate must be >= 0")
    d = -c
    for w, z in nu.atoms:
        for s, v in z.pairs:
            if v != s:
                raise ValueError(f"classical preset needs marks equal to sizes, got (s={s}, v={v})")
        s1 = z.first[0]
        if s1 > 0.0 and abs(math.log(s1)) <= JUMP_TRUNCATION:
            d += w * math.log(s1)
    return Characteristics(alpha=alpha, c=c, d=d, beta=0.0, lam=nu)


def classical_cumulant(nu: DislocationMeasure, c: float, theta: float) -> float:
    return -c * theta + math.fsum(
        w * (math.fsum(s**theta for s in z.sizes) - 1.0) for w, z in nu.atoms
    )


def bbm_preset(drift: float) -> Characteristics:
    """Binary branching Brownian motion with the given drift."""
    lam = DislocationMeasure(((1.0, ZElement([(0.5, 1.0), (0.5, 1.0)])),))
    return Characteristics(alpha=0.0, c=0.0, d=drift, beta=1.0, lam=lam)


def s1_default(y: float) -> float:
    return math.exp(y) * (1.0 - y)


def s1_gaussian(y: float) -> float:
    return math.exp(-y * y)


S1_CHOICES: dict[str, Callable[[float], float]] = {"default": s1_default, "gaussian": s1_gaussian}

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class GrowthFragmentationCell:
    """Self-similar cell process: index, drift, Gaussian part, negative jumps, killing."""

    alpha: float = 0.0
    d: float = 0.0
    beta: float = 0.0
    jumps: tuple[tuple[float, float], ...] = field(default_factory=tuple)
    k: float = 0.0

    def __post_init__(self):
        for rate, y in self.jumps:
            if not (rate > 0 and y < 0):
                raise ValueError(f"cell jumps need rate > 0 and y < 0, got ({rate}, {y})")
        if self.k < 0 or self.beta < 0:
            raise ValueError("k and beta must be >= 0")

    def phi(self, q: float) -> float:
        total = -self.k + self.d * q + 0.5 * self.beta * q * q
        for rate, y in self.jumps:
            total += rate * (math.exp(q * y) - 1.0 - (q * y if y > -1.0 else 0.0))
        return total

    def kappa(self, q: float) -> float:
        return self.phi(q) + math.fsum(rate * (-math.expm1(y)) ** q for rate, y in self.jumps)


def gf_embedding(
    cell: GrowthFragmentationCell, s1: Callable[[float], float] | str = "default"
) -> Characteristics:
    """Characteristics whose marks form the growth-fragmentation of ``cell``.

    Jumps below ``-log 2`` are first replaced by ``log(1 - e^y)``; the drift
    absorbs the change in compensation so the cumulant is preserved.
    """
    if isinstance(s1, str):
        s1 = S1_CHOICES[s1]
    d = cell.d
    atoms = []
    for rate, y in cell.jumps:
        if y < -LOG2:
            y_new = math.log1p(-math.exp(y))
            d += rate * (y_new - (y if y > -1.0 else 0.0))
            y = y_new
        size = float(s1(y))
        atoms.append((rate, ZElement([(size, math.exp(y)), (1.0 - size, -math.expm1(y))])))
    if cell.k > 0:
        atoms.append((cell.k, ZElement.unit(0.0)))
    return Characteristics(alpha=cell.alpha, c=0.0, d=d, beta=cell.beta, lam=DislocationMeasure(tuple(atoms)))


def kappa_grid(ch: Characteristics, thetas: Iterable[float]) -> list[float]:
    return [cumulant(ch, t) for t in thetas]
