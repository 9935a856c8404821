"""Event-driven genealogy simulation on the homogeneous clock.

A live block with ``b`` members (counted inside ``{1..n}``) is driven by
two independent Poisson streams: visible dislocations or freezes at rate
``J_b`` with outcome drawn from the level-b dislocation law, and mark jumps
from the level-b jump measure. Between events the mark follows the
continuous part of the log-mark Levy process. Self-similar clocks are
obtained afterwards, block by block, through :func:`time_change`.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dislocation import (
    Characteristics,
    as_rng,
    effective_drift,
    level_law,
    sample_dislocation,
)
from .levy_mark import MarkPathSegment, evolve_from_mark, lamperti_integral, lamperti_inverse
from .marked_partition import MarkedPartition

DISLOCATED = "dislocated"
FROZEN = "frozen"
ALIVE = "alive-at-horizon"


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent RNG stream for ``(seed, *keys)``, e.g. a replicate index."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class BlockNode:
    id: int
    parent: int | None
    members: tuple[int, ...]
    birth: float
    death: float
    initial_mark: float
    termination: str = ALIVE
    segments: list[MarkPathSegment] = field(default_factory=list)
    children: list[int] = field(default_factory=list)

    @property
    def final_mark(self) -> float:
        """Mark just before the block's terminating event (or at the horizon)."""
        return self.segments[-1].mark_end if self.segments else self.initial_mark

    def covers(self, t: float, horizon: float) -> bool:
        """Whether the block is part of the partition at time ``t``."""
        if t < self.birth:
            return False
        if self.termination == FROZEN:
            return True
        if self.termination == ALIVE:
            return t <= horizon
        return t < self.death

    def mark_at(self, t: float, interpolate: bool = False) -> float:
        if self.termination == FROZEN and t >= self.death:
            return 0.0
        if not self.segments:
            return self.initial_mark
        for seg in self.segments:
            if seg.t_start <= t < seg.t_end:
                return seg.mark_at(t, interpolate)
        last = self.segments[-1]
        if t == last.t_end:
            return last.mark_end
        raise ValueError(f"time {t} outside the life of block {self.id}")


@dataclass
class GenealogyTree:
    level: int
    horizon: float
    characteristics: Characteristics
    nodes: list[BlockNode]
    query_times: tuple[float, ...] = ()
    h_grid: float | None = None
    seed: int | None = None

    @property
    def root(self) -> BlockNode:
        return self.nodes[0]

    def leaves(self) -> list[BlockNode]:
        return [nd for nd in self.nodes if not nd.children]

    def complete(self) -> bool:
        """True when no block is still alive at the horizon."""
        return all(nd.termination != ALIVE for nd in self.nodes)

    def event_times(self) -> set[float]:
        out = {0.0}
        for nd in self.nodes:
            out.add(nd.birth)
            out.update(seg.t_start for seg in nd.segments)
            out.update(seg.t_end for seg in nd.segments)
        return out


def _run_block(ch, node, mark, horizon, query_times, h_grid, rng):
    """Advance one block until it dislocates, freezes or hits the horizon.

    Returns ``(dislocation, pre_event_mark)``; ``dislocation`` is None when
    the horizon was reached first.
    """
    b = len(node.members)
    law = level_law(ch, b)
    drift = effective_drift(ch)
    rate = law.J + law.jump_total
    t = node.birth
    while True:
        wait = rng.exponential(1.0 / rate) if rate > 0.0 else math.inf
        if t + wait >= horizon:
            if horizon > t and math.isfinite(horizon):
                node.segments.append(
                    evolve_from_mark(t, mark, horizon - t, drift, ch.beta, rng, query_times, h_grid)
                )
            node.death = horizon
            node.termination = ALIVE
            return None, node.final_mark
        seg = evolve_from_mark(t, mark, wait, drift, ch.beta, rng, query_times, h_grid)
        node.segments.append(seg)
        t = seg.t_end
        mark = seg.mark_end
        if rng.random() * rate < law.J:
            node.death = t
            return sample_dislocation(ch, b, rng), mark
        mark = mark * law.pick_jump(rng.random() * law.jump_total)


def simulate_homogeneous(
    ch: Characteristics,
    n: int,
    horizon: float,
    query_times: Sequence[float] = (),
    rng=None,
    *,
    h_grid: float | None = None,
    initial_mark: float = 1.0,
    seed: int | None = None,
) -> GenealogyTree:
    """Simulate the genealogy of the level-n restriction up to ``horizon``.

    ``rng`` may be a Generator or a seed. With ``beta > 0`` the Gaussian
    part is sampled at the query times and, if ``h_grid`` is given, on the
    global grid of that step (needed for later time changes).
    """
    if ch.alpha != 0.0:
        raise ValueError("simulate on the homogeneous clock (alpha = 0) and apply time_change")
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ValueError("horizon must be positive and finite")
    if n < 1:
        raise ValueError("level must be >= 1")
    if initial_mark < 0:
        raise ValueError("initial mark must be >= 0")
    if rng is None:
        rng = seed
    rng = as_rng(rng)
    query_times = tuple(sorted(float(q) for q in query_times))
    if query_times and (query_times[0] < 0 or query_times[-1] > horizon):
        raise ValueError("query times must lie in [0, horizon]")

    root = BlockNode(0, None, tuple(range(1, n + 1)), 0.0, horizon, float(initial_mark))
    nodes = [root]
    if initial_mark == 0.0:
        root.death, root.termination = 0.0, FROZEN
        return GenealogyTree(n, horizon, ch, nodes, query_times, h_grid, seed)
    stack = [(root, float(initial_mark))]
    while stack:
        node, mark = stack.pop()
        dislocation, pre = _run_block(ch, node, mark, horizon, query_times, h_grid, rng)
        if dislocation is None:
            continue
        if dislocation.n_blocks == 1:
            node.termination = FROZEN
            continue
        node.termination = DISLOCATED
        fresh = []
        for block, factor in zip(dislocation.blocks(), dislocation.marks):
            child = BlockNode(
                len(nodes),
                node.id,
                tuple(node.members[j - 1] for j in block),
                node.death,
                horizon,
                pre * factor,
            )
            if child.initial_mark == 0.0:
                child.death, child.termination = node.death, FROZEN
            else:
                fresh.append(child)
            nodes.append(child)
            node.children.append(child.id)
        stack.extend((c, c.initial_mark) for c in reversed(fresh))
    return GenealogyTree(n, horizon, ch, nodes, query_times, h_grid, seed)


def first_event(ch: Characteristics, n: int, rng) -> tuple[float, MarkedPartition | None, float]:
    """Run the level-n root block until its first visible event.

    Returns ``(time, dislocation, pre_event_mark)``; the time is ``inf`` and
    the dislocation None when ``J_n = 0``.
    """
    if level_law(ch, n).J == 0.0:
        return math.inf, None, math.nan
    node = BlockNode(0, None, tuple(range(1, n + 1)), 0.0, math.inf, 1.0)
    dislocation, pre = _run_block(ch, node, 1.0, math.inf, (), None, as_rng(rng))
    return node.death, dislocation, pre


def _queryable(tree: GenealogyTree, t: float) -> bool:
    if tree.characteristics.beta == 0.0:
        return True
    return t in tree.query_times or t in tree.event_times()


def snapshot(tree: GenealogyTree, t: float) -> MarkedPartition:
    """Marked partition of ``{1..n}`` at homogeneous time ``t``."""
    if not 0.0 <= t <= tree.horizon:
        raise ValueError(f"time {t} outside [0, {tree.horizon}]")
    if not _queryable(tree, t):
        raise ValueError(f"time {t} was neither a query time nor an event time")
    labels = [0] * tree.level
    marks = {}
    for nd in tree.nodes:
        if nd.covers(t, tree.horizon) and not (
            nd.termination == DISLOCATED and t >= nd.death
        ):
            for i in nd.members:
                labels[i - 1] = nd.id
            marks[nd.id] = nd.mark_at(t)
    return MarkedPartition.from_labels(labels, marks)


def _active_at(nd: BlockNode, t: float, horizon: float) -> bool:
    if nd.termination == DISLOCATED:
        return nd.birth <= t < nd.death
    return nd.covers(t, horizon)


def additive_path(tree: GenealogyTree, theta: float, times: Sequence[float]) -> np.ndarray:
    """``S_theta`` of the snapshot at each time, without building partitions.

    Frozen blocks contribute nothing (``0 ** theta = 0`` for every theta).
    """
    times = np.asarray(times, dtype=float)
    out = np.zeros(len(times))
    order = np.argsort(times)
    sorted_t = times[order]
    acc = np.zeros(len(times))
    for nd in tree.nodes:
        for k, seg in enumerate(nd.segments):
            lo = np.searchsorted(sorted_t, seg.t_start, side="left")
            last = k == len(nd.segments) - 1 and nd.termination == ALIVE
            hi = np.searchsorted(sorted_t, seg.t_end, side="right" if last else "left")
            if hi <= lo:
                continue
            ts = sorted_t[lo:hi]
            if seg.exact:
                vals = seg.mark_start * np.exp(seg.drift * (ts - seg.t_start))
            else:
                vals = np.array([seg.mark_at(float(u)) for u in ts])
            acc[lo:hi] += vals**theta
    out[order] = acc
    return out


@dataclass
class SelfSimilarView:
    """The genealogy seen on the self-similar clock of index ``alpha``.

    ``birth[i]`` and ``death[i]`` are the self-similar times at which node
    ``i`` starts and stops; for blocks alive at the homogeneous horizon the
    death time is only a lower bound (``truncated[i]`` is set).
    """

    tree: GenealogyTree
    alpha: float
    birth: list[float]
    death: list[float]
    truncated: list[bool]

    def snapshot(self, t: float) -> MarkedPartition:
        tree = self.tree
        labels = [0] * tree.level
        marks = {}
        stack = [0]
        while stack:
            nd = tree.nodes[stack.pop()]
            i = nd.id
            if t < self.death[i] or (self.truncated[i] and t == self.death[i]):
                if t < self.birth[i]:
                    raise ValueError("inconsistent self-similar clock")
                if self.alpha == 0.0:
                    u = t
                else:
                    u = lamperti_inverse(nd.segments, -self.alpha, t - self.birth[i])
                    u = min(max(u, nd.birth), nd.death)
                mark = nd.mark_at(u, interpolate=True)
            elif self.truncated[i]:
                raise ValueError(
                    f"self-similar time {t} lies beyond the simulated horizon for block {i}"
                )
            elif nd.termination == FROZEN:
                mark = 0.0
            else:
                stack.extend(nd.children)
                continue
            for m in nd.members:
                labels[m - 1] = i
            marks[i] = mark
        return MarkedPartition.from_labels(labels, marks)

    def __call__(self, t: float) -> MarkedPartition:
        return self.snapshot(t)


def _check_integrable(tree: GenealogyTree) -> None:
    for nd in tree.nodes:
        for seg in nd.segments:
            if not seg.exact and seg.h_grid is None:
                raise ValueError(
                    "Gaussian segments need an integration grid; simulate with h_grid"
                )


def time_change(tree: GenealogyTree, alpha: float) -> SelfSimilarView:
    """Per-block Lamperti time change turning the homogeneous tree into an alpha-ESSF.

    A block's self-similar clock advances at rate ``mark ** (-alpha)``;
    children inherit the self-similar death time of their mother.
    """
    n_nodes = len(tree.nodes)
    birth = [0.0] * n_nodes
    death = [0.0] * n_nodes
    truncated = [nd.termination == ALIVE for nd in tree.nodes]
    if alpha == 0.0:
        for nd in tree.nodes:
            birth[nd.id], death[nd.id] = nd.birth, nd.death
        return SelfSimilarView(tree, alpha, birth, death, truncated)
    _check_integrable(tree)
    for nd in tree.nodes:
        if nd.parent is not None:
            birth[nd.id] = death[nd.parent]
        death[nd.id] = birth[nd.id] + math.fsum(
            lamperti_integral(seg, -alpha) for seg in nd.segments
        )
    return SelfSimilarView(tree, alpha, birth, death, truncated)


def absorption_time(tree: GenealogyTree, alpha: float) -> float | None:
    """Self-similar time at which the last block freezes, or None if not absorbed by the horizon."""
    if not tree.complete():
        return None
    view = time_change(tree, alpha)
    return max(view.death[nd.id] for nd in tree.nodes if nd.termination == FROZEN)


def total_length(tree: GenealogyTree, alpha: float) -> float | None:
    """Integral over self-similar time of the number of unfrozen blocks.

    Computed on the homogeneous clock as the integral of the sum over live
    blocks of ``mark ** (-alpha)``. None if some block is alive at the horizon.
    """
    if not tree.complete():
        return None
    _check_integrable(tree)
    return math.fsum(
        lamperti_integral(seg, -alpha) for nd in tree.nodes for seg in nd.segments
    )


def normalized_additive_sup(tree: GenealogyTree, theta: float, kappa: float) -> float:
    """``sup_t exp(-t kappa) S_theta`` along a tree with deterministic segments.

    Between events all live marks share the same drift, so the normalized
    sum is a single exponential in t and its supremum over each inter-event
    interval sits at an endpoint (right value or left limit).
    """
    segs = [seg for nd in tree.nodes for seg in nd.segments]
    if any(not seg.exact for seg in segs):
        raise ValueError("the supremum is only exact for deterministic segments")
    if not segs:
        return 0.0
    knots = np.unique(
        np.array([0.0] + [s.t_start for s in segs] + [s.t_end for s in segs])
    )
    right = np.zeros(len(knots))
    left = np.zeros(len(knots))
    for s in segs:
        lo = np.searchsorted(knots, s.t_start)
        hi = np.searchsorted(knots, s.t_end)
        ts = knots[lo:hi + 1]
        vals = (s.mark_start * np.exp(s.drift * (ts - s.t_start))) ** theta
        right[lo:hi] += vals[:-1]
        left[lo + 1:hi + 1] += vals[1:]
    weights = np.exp(-kappa * knots)
    return float(max(np.max(weights * right), np.max(weights * left)))


def absorption_bound(tree: GenealogyTree, alpha: float, theta: float, kappa: float) -> float:
    """Pathwise bound ``theta C^(-alpha/theta) / (alpha kappa)`` on the absorption time.

    ``C`` is the supremum of ``exp(-t kappa) S_theta`` along the same path;
    requires ``kappa < 0`` and ``-alpha/theta > 0``.
    """
    if not kappa < 0:
        raise ValueError("the bound needs kappa(theta) < 0")
    if not (theta != 0 and -alpha / theta > 0):
        raise ValueError("the bound needs -alpha/theta > 0")
    C = normalized_additive_sup(tree, theta, kappa)
    return theta * C ** (-alpha / theta) / (alpha * kappa)


def branching_marks(
    ch: Characteristics,
    times: Sequence[float],
    rng,
    level: int | None = None,
    max_particles: int = 1_000_000,
) -> list[list[float]]:
    """Marks of the unfrozen particles of the additive-martingale particle system.

    With ``level = n`` every unfrozen block is followed through exactly n of
    its integers: particles dislocate at rate ``J_n`` with the level-n
    dislocation law and every unfrozen child becomes a new particle. With
    ``level = None`` the system is the exact mark process of the whole
    (infinite) partition, which for a finite measure is a branching Levy
    process: at rate ``weight`` an atom replaces a mark ``m`` by the marks
    ``m v_k`` with ``v_k > 0``.

    Returns, for each requested time, the list of unfrozen marks.
    """
    rng = as_rng(rng)
    times = [float(t) for t in times]
    order = sorted(range(len(times)), key=times.__getitem__)
    sorted_t = [times[k] for k in order]
    horizon = sorted_t[-1] if sorted_t else 0.0
    drift = effective_drift(ch)
    if level is None:
        J = ch.lam.total_mass
        jump_total = 0.0
    else:
        law = level_law(ch, level)
        J, jump_total = law.J, law.jump_total
    rate = J + jump_total
    collected: list[list[float]] = [[] for _ in sorted_t]
    stack = [(0.0, 1.0)]
    born = 1
    while stack:
        t, mark = stack.pop()
        while True:
            wait = rng.exponential(1.0 / rate) if rate > 0.0 else math.inf
            t_next = t + wait
            stop = min(t_next, horizon)
            lo = np.searchsorted(sorted_t, t, side="left")
            hi = np.searchsorted(sorted_t, stop, side="right" if t_next > horizon else "left")
            window = sorted_t[lo:hi]
            if t_next > horizon:
                if horizon > t:
                    seg = evolve_from_mark(t, mark, horizon - t, drift, ch.beta, rng, window)
                    for k, q in zip(range(lo, hi), window):
                        collected[k].append(mark if q == t else seg.mark_at(q))
                else:
                    for k in range(lo, hi):
                        collected[k].append(mark)
                break
            seg = evolve_from_mark(t, mark, wait, drift, ch.beta, rng, window)
            for k, q in zip(range(lo, hi), window):
                collected[k].append(mark if q == t else seg.mark_at(q))
            t, mark = t_next, seg.mark_end
            if rng.random() * rate < J:
                if level is None:
                    z = ch.lam.pick(rng.random() * J)
                    factors = [v for v in z.marks if v > 0.0]
                else:
                    factors = [v for v in sample_dislocation(ch, level, rng).marks if v > 0.0]
                born += len(factors)
                if born > max_particles:
                    raise RuntimeError(f"more than {max_particles} particles; shorten the horizon")
                stack.extend((t, mark * v) for v in reversed(factors))
                break
            mark = mark * law.pick_jump(rng.random() * jump_total)
    out: list[list[float]] = [[] for _ in times]
    for k, idx in enumerate(order):
        out[idx] = collected[k]
    return out


def _simulate_one(args):
    ch, n, horizon, query_times, seed, index, h_grid = args
    tree = simulate_homogeneous(ch, n, horizon, query_times, stream(seed, index), h_grid=h_grid)
    tree.seed = seed
    return tree


def simulate_replicates(
    ch: Characteristics,
    n: int,
    horizon: float,
    query_times: Sequence[float],
    replicates: int,
    seed: int,
    *,
    h_grid: float | None = None,
    jobs: int = 1,
) -> list[GenealogyTree]:
    """Independent trees, replicate ``i`` driven by the stream ``(seed, i)``."""
    tasks = [(ch, n, horizon, tuple(query_times), seed, i, h_grid) for i in range(replicates)]
    if jobs <= 1:
        return [_simulate_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_simulate_one, tasks, chunksize=max(1, replicates // (4 * jobs))))


def node_record(tree: GenealogyTree, nd: BlockNode) -> dict:
    queries = [
        [q, nd.mark_at(q)]
        for q in tree.query_times
        if _active_at(nd, q, tree.horizon) and q < nd.death or (
            nd.termination == ALIVE and q == nd.death and q >= nd.birth
        )
    ]
    return {
        "id": nd.id,
        "parent": nd.parent,
        "members": list(nd.members),
        "birth": nd.birth,
        "death": nd.death,
        "init_mark": nd.initial_mark,
        "termination": nd.termination,
        "marks_at_queries": queries,
    }


def tree_lines(tree: GenealogyTree, replicate: int | None = None) -> Iterable[str]:
    """JSON-lines records, one per node."""
    for nd in tree.nodes:
        rec = node_record(tree, nd)
        if replicate is not None:
            rec = {"replicate": replicate, **rec}
        yield json.dumps(rec, separators=(",", ":"))
