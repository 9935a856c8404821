"""Log-mark Levy machinery and the Lamperti clock.

Between Poisson events a block's log-mark moves as drift plus Brownian
motion. Segments store marks on the linear scale so that products of
dyadic jumps stay exact; the log views are derived.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dislocation import (
    Characteristics,
    JUMP_TRUNCATION,
    as_rng,
    effective_drift,
    jump_measure_level,
)

SMALL_EXPONENT = 1e-8
GRID_SELF_CHECK_RTOL = 1e-4


class GridConvergenceWarning(UserWarning):
    """Trapezoid rule changed by more than the tolerance when the grid was coarsened."""


@dataclass(frozen=True)
class LevyTriplet:
    drift: float
    gaussian: float
    jumps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.gaussian < 0:
            raise ValueError("gaussian coefficient must be >= 0")
        for rate, jump in self.jumps:
            if rate <= 0 or jump == 0:
                raise ValueError(f"bad jump entry (rate={rate}, jump={jump})")


def level_triplet(ch: Characteristics, n: int) -> LevyTriplet:
    """Drift, Gaussian coefficient and jump list of the level-n log-mark."""
    return LevyTriplet(effective_drift(ch), ch.beta, tuple(jump_measure_level(ch, n)))


def moment_exponent(ch: Characteristics, n: int, theta: float) -> float:
    """Exponent ``A`` with ``E exp(theta xi_n(t)) = exp(t A)``."""
    total = ch.d * theta + 0.5 * ch.beta * theta * theta
    for w, z in ch.lam.atoms:
        inner = math.fsum(s**n * (v**theta - 1.0) for s, v in z.pairs if v > 0.0)
        v1 = z.first[1]
        if v1 > 0.0 and abs(math.log(v1)) <= JUMP_TRUNCATION:
            inner -= theta * math.log(v1)
        total += w * inner
    return total


@dataclass(frozen=True)
class MarkPathSegment:
    """Mark path of one block between two consecutive Poisson events.

    ``grid`` holds interior ``(time, log_mark)`` samples; it is empty for
    deterministic segments, which can be evaluated anywhere in closed form.
    ``h_grid`` records the grid step used (None when only query times were
    sampled).
    """

    t_start: float
    t_end: float
    mark_start: float
    mark_end: float
    drift: float
    gaussian: float
    grid: tuple[tuple[float, float], ...] = ()
    h_grid: float | None = None

    @property
    def log_mark_start(self) -> float:
        return math.log(self.mark_start)

    @property
    def log_mark_end(self) -> float:
        return math.log(self.mark_end)

    @property
    def exact(self) -> bool:
        return self.gaussian == 0.0

    def mark_at(self, t: float, interpolate: bool = False) -> float:
        """Mark at time ``t`` in ``[t_start, t_end]``.

        Deterministic segments are evaluated exactly. Gaussian segments only
        know their sampled times unless ``interpolate`` is set, in which case
        the log-mark is interpolated linearly between samples.
        """
        if not self.t_start <= t <= self.t_end:
            raise ValueError(f"time {t} outside segment [{self.t_start}, {self.t_end}]")
        if t == self.t_start:
            return self.mark_start
        if t == self.t_end:
            return self.mark_end
        if self.exact:
            return self.mark_start * math.exp(self.drift * (t - self.t_start))
        times = [g[0] for g in self.grid]
        k = np.searchsorted(times, t)
        if k < len(times) and times[k] == t:
            return math.exp(self.grid[k][1])
        if not interpolate:
            raise ValueError(f"time {t} was not sampled on this Gaussian segment")
        ts, xs = self.sample_points()
        return math.exp(float(np.interp(t, ts, xs)))

    def sample_points(self) -> tuple[np.ndarray, np.ndarray]:
        ts = [self.t_start] + [g[0] for g in self.grid] + [self.t_end]
        xs = [self.log_mark_start] + [g[1] for g in self.grid] + [self.log_mark_end]
        return np.asarray(ts), np.asarray(xs)


def _grid_times(t0: float, t1: float, query_times: Sequence[float], h_grid: float | None) -> list[float]:
    times = {t for t in query_times if t0 < t < t1}
    if h_grid is not None:
        k = math.floor(t0 / h_grid) + 1
        while k * h_grid < t1:
            times.add(k * h_grid)
            k += 1
    return sorted(times)


def evolve_from_mark(
    t0: float,
    mark0: float,
    dt: float,
    drift: float,
    gaussian: float,
    rng,
    query_times: Sequence[float] = (),
    h_grid: float | None = None,
) -> MarkPathSegment:
    """Forward-simulate the continuous part over ``[t0, t0 + dt]``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    t1 = t0 + dt
    if gaussian == 0.0:
        return MarkPathSegment(t0, t1, mark0, mark0 * math.exp(drift * dt), drift, 0.0)
    rng = as_rng(rng)
    times = _grid_times(t0, t1, query_times, h_grid)
    knots = np.asarray([t0] + times + [t1])
    steps = np.diff(knots)
    incr = drift * steps + math.sqrt(gaussian) * np.sqrt(steps) * rng.standard_normal(len(steps))
    path = math.log(mark0) + np.cumsum(incr)
    grid = tuple(zip(times, path[:-1].tolist()))
    return MarkPathSegment(
        t0, t1, mark0, mark0 * math.exp(float(np.sum(incr))), drift, gaussian, grid, h_grid
    )


def evolve_mark(
    seg_start: tuple[float, float],
    dt: float,
    drift: float,
    gaussian: float,
    rng,
    query_times: Sequence[float] = (),
    h_grid: float | None = None,
) -> MarkPathSegment:
    """Continuous log-mark evolution from ``(time, log_mark)`` over ``dt``.

    Increments over disjoint sub-intervals are independent Gaussians with
    mean ``drift * h`` and variance ``gaussian * h``; they are drawn at the
    declared query times (and grid points) in order, then at the endpoint.
    """
    t0, x0 = seg_start
    return evolve_from_mark(t0, math.exp(x0), dt, drift, gaussian, rng, query_times, h_grid)


def _exact_integral(mark0: float, drift: float, h: float, a: float) -> float:
    base = mark0**a
    x = a * drift
    if math.isinf(h):
        return base / -x if x < 0 else math.inf
    if abs(x * h) < SMALL_EXPONENT:
        return base * h * (1.0 + 0.5 * x * h)
    return base * math.expm1(x * h) / x


def _trapezoid(ts: np.ndarray, xs: np.ndarray, a: float) -> float:
    return float(np.trapezoid(np.exp(a * xs), ts))


def lamperti_integral(seg: MarkPathSegment, a: float) -> float:
    """Integral of ``mark(s) ** a`` over the segment.

    Closed form for deterministic segments; trapezoid rule on the sampled
    grid otherwise, with a coarsening self-check that warns when dropping
    every other grid point moves the result by more than 1e-4 relative.
    """
    if seg.exact:
        return _exact_integral(seg.mark_start, seg.drift, seg.t_end - seg.t_start, a)
    if seg.h_grid is None:
        raise ValueError("Gaussian segment has no integration grid; simulate with h_grid")
    ts, xs = seg.sample_points()
    fine = _trapezoid(ts, xs, a)
    if len(ts) > 3:
        keep = np.r_[np.arange(0, len(ts) - 1, 2), len(ts) - 1]
        coarse = _trapezoid(ts[keep], xs[keep], a)
        if abs(coarse - fine) > GRID_SELF_CHECK_RTOL * abs(fine):
            warnings.warn(
                f"grid step {seg.h_grid} not converged: {fine!r} vs {coarse!r} on coarser grid",
                GridConvergenceWarning,
                stacklevel=2,
            )
    return fine


def _invert_exact(mark0: float, drift: float, a: float, r: float) -> float:
    base = mark0**a
    x = a * drift
    if x == 0.0:
        return r / base
    if abs(x * r / base) < SMALL_EXPONENT:
        return r / base * (1.0 - 0.5 * x * r / base)
    return math.log1p(r * x / base) / x


def _invert_trapezoid(ts: np.ndarray, xs: np.ndarray, a: float, r: float) -> float:
    f = np.exp(a * xs)
    panels = 0.5 * (f[1:] + f[:-1]) * np.diff(ts)
    acc = 0.0
    for k, area in enumerate(panels):
        if acc + area >= r:
            rem = r - acc
            fa, fb, L = f[k], f[k + 1], ts[k + 1] - ts[k]
            slope = (fb - fa) / L
            # rationalized root of slope u^2 / 2 + fa u = rem, stable as slope -> 0
            u = 2.0 * rem / (fa + math.sqrt(max(fa * fa + 2.0 * slope * rem, 0.0)))
            return float(ts[k] + min(max(u, 0.0), L))
        acc += area
    return float(ts[-1])


def lamperti_inverse(segments: Sequence[MarkPathSegment], a: float, target: float) -> float:
    """First time at which the accumulated ``integral of mark ** a`` reaches ``target``.

    Returns ``inf`` when the segments accumulate less than ``target``
    (frozen block or horizon reached).
    """
    if target < 0:
        raise ValueError("target must be >= 0")
    if not segments:
        return math.inf
    for prev, nxt in zip(segments, segments[1:]):
        if prev.t_end != nxt.t_start:
            raise ValueError("segments are not contiguous")
    if target == 0.0:
        return segments[0].t_start
    acc = 0.0
    for seg in segments:
        area = lamperti_integral(seg, a)
        if acc + area >= target:
            rem = target - acc
            if seg.exact:
                u = _invert_exact(seg.mark_start, seg.drift, a, rem)
                return min(seg.t_start + u, seg.t_end)
            ts, xs = seg.sample_points()
            return _invert_trapezoid(ts, xs, a, rem)
        acc += area
    return math.inf
