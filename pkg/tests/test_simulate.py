import json
import math

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st
from scipy import stats
from scipy.linalg import expm
from scipy.special import comb

from essf.diagnostics import classical_preset
from essf.dislocation import (
    Characteristics,
    DislocationMeasure,
    ZElement,
    binary_halving_measure,
    binary_unit_measure,
    freezing_measure,
    rate_J,
)
from essf.marked_partition import MarkedPartition
from essf.simulate import (
    ALIVE,
    DISLOCATED,
    FROZEN,
    absorption_bound,
    absorption_time,
    additive_path,
    first_event,
    normalized_additive_sup,
    simulate_homogeneous,
    simulate_replicates,
    snapshot,
    stream,
    time_change,
    total_length,
    tree_lines,
)
from essf.stat_tests import consistency_test, exchangeability_test

BINARY = Characteristics(lam=binary_unit_measure())
MIXED = Characteristics(
    c=0.2,
    d=-0.1,
    lam=DislocationMeasure(
        (
            (1.0, ZElement([(0.6, 1.5), (0.4, 0.5)])),
            (0.3, ZElement.unit(0.7)),
            (0.2, ZElement.unit(0.0)),
        )
    ),
)


def test_preconditions():
    with pytest.raises(ValueError):
        simulate_homogeneous(BINARY.replace(alpha=1.0), 3, 1.0, rng=0)
    with pytest.raises(ValueError):
        simulate_homogeneous(BINARY, 3, 0.0, rng=0)
    with pytest.raises(ValueError):
        simulate_homogeneous(BINARY, 3, 1.0, (2.0,), rng=0)


def test_no_activity_single_root():
    ch = Characteristics(d=0.3, beta=0.5)
    tree = simulate_homogeneous(ch, 4, 2.0, (0.5, 1.0), rng=1)
    assert len(tree.nodes) == 1
    root = tree.root
    assert root.termination == ALIVE and root.death == 2.0
    assert snapshot(tree, 0.5).n_blocks == 1
    det = simulate_homogeneous(Characteristics(d=0.3), 4, 2.0, rng=1)
    assert snapshot(det, 2.0).marks[0] == pytest.approx(math.exp(0.6))


def test_level_one_never_moves():
    tree = simulate_homogeneous(BINARY, 1, 50.0, (10.0, 50.0), rng=3)
    assert len(tree.nodes) == 1
    assert snapshot(tree, 37.2) == MarkedPartition.trivial(1, 1.0)


def _block_count_oracle(n, t):
    # expected number of blocks from a block of size b, binary unit-mark measure;
    # a split of a size-b block leaves k members on one side with the conditioned binomial law
    M = np.zeros((n + 1, n + 1))
    for b in range(2, n + 1):
        J = 1.0 - 2.0 * 0.5**b
        M[b, b] -= J
        for k in range(1, b):
            p = comb(b, k) * 0.5**b
            M[b, k] += p
            M[b, b - k] += p
    E = expm(t * M[1:, 1:]) @ np.ones(n)
    return E[n - 1]


def test_block_count_matches_linear_ode_oracle():
    oracle = _block_count_oracle(64, 2.0)
    assert oracle == pytest.approx(6.35217, abs=1e-5)
    counts = [
        snapshot(t, 2.0).n_blocks
        for t in simulate_replicates(BINARY, 64, 2.0, (2.0,), 1500, seed=5)
    ]
    mean, se = np.mean(counts), np.std(counts) / math.sqrt(len(counts))
    assert abs(mean - oracle) < 3 * se
    assert abs(mean / oracle - 1) < 0.05


def test_snapshot_basics():
    tree = simulate_homogeneous(MIXED, 5, 3.0, (1.0,), rng=4, initial_mark=2.0)
    assert snapshot(tree, 0.0) == MarkedPartition.trivial(5, 2.0)
    with pytest.raises(ValueError):
        snapshot(tree, 3.5)
    gauss = simulate_homogeneous(MIXED.replace(beta=0.3), 5, 3.0, (1.0,), rng=4)
    snapshot(gauss, 1.0)
    with pytest.raises(ValueError):
        snapshot(gauss, 1.2345)


def test_single_binary_dislocation():
    ch = Characteristics(lam=binary_halving_measure())
    for seed in range(20):
        t_event, _, _ = first_event(ch, 2, stream(seed, 0))
        tree = simulate_homogeneous(ch, 2, t_event + 1e-9, rng=stream(seed, 0))
        x = snapshot(tree, tree.horizon)
        assert x.assignment == (1, 2)
        root_mark = tree.root.final_mark
        assert x.marks == pytest.approx((0.5 * root_mark, 0.5 * root_mark))


def test_tree_structure_invariants():
    for seed in range(30):
        tree = simulate_homogeneous(MIXED, 6, 4.0, rng=seed)
        assert tree.root.members == tuple(range(1, 7))
        for nd in tree.nodes:
            if nd.termination == FROZEN:
                assert not nd.children
                assert nd.mark_at(nd.death) == 0.0
            if nd.termination == DISLOCATED:
                kids = [tree.nodes[c] for c in nd.children]
                assert sorted(m for k in kids for m in k.members) == list(nd.members)
                assert all(k.birth == nd.death for k in kids)
                assert len(kids) >= 2 or kids[0].initial_mark == 0.0


def test_classical_preset_marks_never_exceed_one():
    # at finite level a halving that keeps all of a block's integers on one
    # side is a mark jump, so the visible mass can only leak
    ch = classical_preset(binary_halving_measure(), 0.0)
    for tree in simulate_replicates(ch, 12, 3.0, (0.5, 1.5, 3.0), 50, seed=2):
        sums = [sum(snapshot(tree, t).marks) for t in (0.0, 0.5, 1.5, 3.0)]
        assert sums[0] == 1.0
        assert all(a >= b for a, b in zip(sums, sums[1:]))


def test_determinism():
    a = simulate_replicates(MIXED.replace(beta=0.4), 5, 2.0, (1.0,), 10, seed=9)
    b = simulate_replicates(MIXED.replace(beta=0.4), 5, 2.0, (1.0,), 10, seed=9)
    assert [list(tree_lines(t)) for t in a] == [list(tree_lines(t)) for t in b]
    c = simulate_replicates(MIXED.replace(beta=0.4), 5, 2.0, (1.0,), 10, seed=10)
    assert [list(tree_lines(t)) for t in a] != [list(tree_lines(t)) for t in c]


def test_tree_records():
    tree = simulate_homogeneous(MIXED, 4, 2.0, (0.5, 2.0), rng=12)
    recs = [json.loads(line) for line in tree_lines(tree, 3)]
    assert recs[0]["replicate"] == 3 and recs[0]["parent"] is None
    assert set(recs[0]) == {
        "replicate", "id", "parent", "members", "birth", "death", "init_mark", "termination", "marks_at_queries",
    }
    for rec in recs:
        for t, v in rec["marks_at_queries"]:
            assert snapshot(tree, t).mark_of(rec["members"][0]) == v


@given(st.integers(0, 10**6))
def test_monotone_coarsening(seed):
    times = (0.3, 0.8, 1.5, 2.5)
    tree = simulate_homogeneous(MIXED, 6, 2.5, times, rng=seed)
    snaps = [snapshot(tree, t) for t in times]
    for early, late in zip(snaps, snaps[1:]):
        assert late.is_finer_than(early)


def test_first_event_rate():
    for n in (2, 3, 5):
        J = rate_J(MIXED, n)
        times = np.array([first_event(MIXED, n, stream(1, n, r))[0] for r in range(4000)])
        assert abs(times.mean() - 1 / J) < 3 / J / math.sqrt(len(times))
    assert first_event(BINARY, 1, 0)[0] == math.inf


def test_exchangeability_of_snapshots():
    samples = [snapshot(simulate_homogeneous(MIXED, 3, 1.0, (1.0,), stream(4, r)), 1.0) for r in range(6000)]
    assert exchangeability_test(samples, (3, 1, 2)).passed


def test_projective_consistency():
    rep = consistency_test(MIXED, 2, 4, 1.0, 4000, seed=1)
    assert rep.passed, rep.details


def test_branching_property():
    # mark of the first member of a child, relative to its birth mark, s time
    # units after birth, against a fresh root run at the child's level
    s = 0.7
    by_size = {}
    for r in range(6000):
        tree = simulate_homogeneous(MIXED, 4, 20.0, rng=stream(21, r))
        if tree.root.termination != DISLOCATED:
            continue
        child = next((tree.nodes[c] for c in tree.root.children if tree.nodes[c].initial_mark > 0), None)
        if child is None or child.birth + s > 20.0:
            continue
        m = snapshot(tree, child.birth + s).mark_of(child.members[0])
        by_size.setdefault(len(child.members), []).append(m / child.initial_mark)
    size, rel = max(by_size.items(), key=lambda kv: len(kv[1]))
    fresh = [
        snapshot(simulate_homogeneous(MIXED, size, s, (s,), stream(22, r)), s).mark_of(1)
        for r in range(len(rel))
    ]
    assert stats.ks_2samp(rel, fresh).pvalue > 0.01


def test_time_change_identity_and_linear_clock():
    tree = simulate_homogeneous(MIXED, 4, 3.0, rng=7)
    view = time_change(tree, 0.0)
    assert view.snapshot(1.3) == snapshot(tree, 1.3)
    v, alpha = 2.0, -1.5
    lone = simulate_homogeneous(Characteristics(), 3, 5.0, rng=0, initial_mark=v)
    view = time_change(lone, alpha)
    assert view.death[0] == pytest.approx(5.0 * v ** (-alpha))
    drift = Characteristics(d=-0.4)
    tree = simulate_homogeneous(drift, 2, 5.0, rng=0)
    view = time_change(tree, alpha)
    # integral of exp(-alpha d s) over [0, u] equals t
    t = 1.1
    u = math.log1p(t * (-alpha * -0.4)) / (-alpha * -0.4)
    assert view.snapshot(t).marks[0] == pytest.approx(math.exp(-0.4 * u))
    with pytest.raises(ValueError):
        view.snapshot(view.death[0] + 1.0)


@pytest.mark.filterwarnings("ignore::essf.levy_mark.GridConvergenceWarning")
def test_time_change_needs_grid_for_gaussian_paths():
    ch = Characteristics(beta=0.5, lam=binary_unit_measure())
    tree = simulate_homogeneous(ch, 3, 1.0, (0.5,), rng=1)
    with pytest.raises(ValueError):
        time_change(tree, -1.0)
    gridded = simulate_homogeneous(ch, 3, 1.0, (0.5,), rng=1, h_grid=0.01)
    time_change(gridded, -1.0).snapshot(0.2)


def test_frozen_root_absorption_matches_integral():
    d, alpha = 0.3, -1.0
    ch = Characteristics(d=d, lam=freezing_measure(1.0))
    for seed in range(10):
        tree = simulate_homogeneous(ch, 3, 100.0, rng=seed)
        T = tree.root.death
        expected = math.expm1(-alpha * d * T) / (-alpha * d)
        assert absorption_time(tree, alpha) == pytest.approx(expected)
        assert absorption_time(tree.__class__(**{**tree.__dict__}), 0.0) == pytest.approx(T)


def test_absorption_and_length_flags():
    tree = simulate_homogeneous(BINARY, 4, 2.0, rng=1)
    assert absorption_time(tree, 0.0) is None
    assert total_length(tree, 0.0) is None


def test_total_length_examples():
    ch = Characteristics(lam=freezing_measure(0.5))
    tree = simulate_homogeneous(ch, 3, 1e3, rng=2)
    assert total_length(tree, -1.0) == pytest.approx(tree.root.death)
    tree = simulate_homogeneous(MIXED, 5, 400.0, rng=3)
    assert tree.complete()
    assert total_length(tree, 0.0) == pytest.approx(sum(nd.death - nd.birth for nd in tree.nodes))


def test_total_length_against_riemann_sum():
    ch = classical_preset(binary_halving_measure(), 0.5)
    trees = simulate_replicates(ch, 8, 60.0, (), 100, seed=13)
    assert all(t.complete() for t in trees)
    step = 1e-3
    exact, riemann = [], []
    for tree in trees:
        exact.append(total_length(tree, -1.0))
        end = max(nd.death for nd in tree.nodes)
        grid = np.arange(0.0, end, step)
        riemann.append(step * additive_path(tree, 1.0, grid).sum())
    assert np.mean(exact) == pytest.approx(np.mean(riemann), rel=0.01)


def test_additive_path_matches_snapshots():
    tree = simulate_homogeneous(MIXED, 6, 3.0, rng=5)
    times = [0.0, 0.4, 1.0, 2.2, 3.0]
    for theta in (0.0, 1.0, -0.5):
        path = additive_path(tree, theta, times)
        for t, val in zip(times, path):
            expected = sum(v**theta for v in snapshot(tree, t).marks if v > 0)
            assert val == pytest.approx(expected)


def test_normalized_sup_and_bound():
    ch = classical_preset(binary_halving_measure(), 0.5)
    kappa = -0.5
    for seed in range(10):
        tree = simulate_homogeneous(ch, 8, 80.0, rng=seed)
        grid = np.linspace(0.0, 80.0, 20001)
        brute = np.max(np.exp(-kappa * grid) * additive_path(tree, 1.0, grid))
        C = normalized_additive_sup(tree, 1.0, kappa)
        assert C >= brute - 1e-12
        assert C == pytest.approx(brute, rel=1e-2)
        assert absorption_time(tree, -1.0) <= absorption_bound(tree, -1.0, 1.0, kappa)
    with pytest.raises(ValueError):
        absorption_bound(tree, -1.0, 1.0, 0.1)
