from __future__ import annotations

import numpy as np
import pytest

from satcm.saturation import SaturationSpec, WeightTable
from satcm.stabbing import (IntervalSet, TaggedInterval, merge_interval_sets, sat_stab, sigma_lookup,
                            stab_batch)

SPECS = {
    "identity": SaturationSpec.identity(),
    "truncated": SaturationSpec.truncated(),
    "likelihood": SaturationSpec("likelihood", 0.9, 0.015, 1.0),
}


def tables_for(intervals, spec):
    counts = {}
    for iv in intervals:
        counts[iv.sample_id] = counts.get(iv.sample_id, 0) + 1
    return {k: WeightTable(spec, m) for k, m in counts.items()}


def objective_at(theta, intervals, tables):
    counts = {}
    for iv in intervals:
        if iv.lo <= theta <= iv.hi:
            counts[iv.sample_id] = counts.get(iv.sample_id, 0) + 1
    return sum(tables[k].sigma(n) for k, n in counts.items())


def brute_force(intervals, tables):
    pts = {iv.lo for iv in intervals} | {iv.hi for iv in intervals}
    return max((objective_at(t, intervals, tables) for t in pts), default=0.0)


def random_instance(rng, n_samples=10, n_intervals=200):
    out = []
    for _ in range(n_intervals):
        a, b = np.sort(rng.uniform(0, 10, size=2))
        if rng.random() < 0.1:
            b = a  # degenerate intervals are allowed
        out.append(TaggedInterval(float(a), float(b), int(rng.integers(n_samples))))
    return out


def test_figure_layout():
    # theta_1 = 1 and theta_2 = 3 in the layout of the stabbing illustration
    ivs = [TaggedInterval(0.5, 3.5, 1), TaggedInterval(0.8, 3.3, 1), TaggedInterval(2.5, 3.2, 1),
           TaggedInterval(2.8, 4.0, 1), TaggedInterval(0.9, 3.1, 2), TaggedInterval(2.9, 5.0, 2),
           TaggedInterval(0.0, 4.0, 3)]
    tables = tables_for(ivs, SPECS["likelihood"])
    s1, s2, s3 = tables[1], tables[2], tables[3]
    assert objective_at(1.0, ivs, tables) == pytest.approx(s1.sigma(2) + s2.sigma(1) + s3.sigma(1))
    res = sat_stab(ivs, tables)
    assert res.value == pytest.approx(s1.sigma(4) + s2.sigma(2) + s3.sigma(1), abs=1e-12)
    assert res.optimal_regions.contains(3.0)
    assert res.per_sample_counts == {1: 4, 2: 2, 3: 1}


def test_single_interval():
    res = sat_stab([TaggedInterval(0.0, 1.0, 0)], {0: WeightTable(SPECS["identity"], 1)})
    assert res.value == 1.0
    assert list(res.optimal_regions) == [(0.0, 1.0)]
    assert res.stabber == 0.5


def test_empty_input():
    res = sat_stab([], {})
    assert res.value == 0.0 and not res.optimal_regions and res.stabber is None


def test_missing_table():
    with pytest.raises(KeyError):
        sat_stab([TaggedInterval(0, 1, 5)], {})


def test_degenerate_interval_is_stabbable():
    tables = {0: WeightTable(SPECS["identity"], 2)}
    res = sat_stab([TaggedInterval(1.0, 1.0, 0), TaggedInterval(0.0, 2.0, 0)], tables)
    assert res.value == 2.0
    assert list(res.optimal_regions) == [(1.0, 1.0)]


def test_touching_closed_intervals_count_together():
    tables = {0: WeightTable(SPECS["identity"], 1), 1: WeightTable(SPECS["identity"], 1)}
    res = sat_stab([TaggedInterval(0.0, 1.0, 0), TaggedInterval(1.0, 2.0, 1)], tables)
    assert res.value == 2.0


@pytest.mark.parametrize("kind", sorted(SPECS))
def test_matches_brute_force(kind, rng):
    for _ in range(30):
        ivs = random_instance(rng)
        tables = tables_for(ivs, SPECS[kind])
        res = sat_stab(ivs, tables)
        assert res.value == pytest.approx(brute_force(ivs, tables), abs=1e-9)
        # every optimal region attains the value at its midpoint
        for m in res.optimal_regions.midpoints():
            assert objective_at(m, ivs, tables) == pytest.approx(res.value, abs=1e-9)


def test_identity_is_max_stabbing(rng):
    for _ in range(30):
        ivs = random_instance(rng, n_intervals=60)
        tables = tables_for(ivs, SPECS["identity"])
        pts = sorted({iv.lo for iv in ivs})
        count = max(sum(iv.lo <= p <= iv.hi for iv in ivs) for p in pts)
        assert sat_stab(ivs, tables).value == count


def test_permutation_invariance(rng):
    ivs = random_instance(rng, n_intervals=80)
    tables = tables_for(ivs, SPECS["likelihood"])
    a = sat_stab(ivs, tables)
    for _ in range(5):
        perm = [ivs[i] for i in rng.permutation(len(ivs))]
        b = sat_stab(perm, tables)
        assert b.value == pytest.approx(a.value, abs=1e-12)
        assert b.optimal_regions == a.optimal_regions


def test_insertion_gain_bounded(rng):
    spec = SPECS["likelihood"]
    for _ in range(50):
        ivs = random_instance(rng, n_samples=4, n_intervals=30)
        k = int(rng.integers(4))
        lo, hi = np.sort(rng.uniform(0, 10, 2))
        extra = TaggedInterval(float(lo), float(hi), k)
        # weights are fixed by the larger instance so both objectives share tables
        tables = tables_for(ivs + [extra], spec)
        for theta in rng.uniform(0, 10, 20):
            before = objective_at(theta, ivs, tables)
            after = objective_at(theta, ivs + [extra], tables)
            n_k = sum(iv.lo <= theta <= iv.hi and iv.sample_id == k for iv in ivs)
            gain = tables[k].weight(n_k + 1) if lo <= theta <= hi else 0.0
            assert 0.0 <= after - before <= gain + 1e-12


def test_merge_examples():
    assert list(merge_interval_sets(IntervalSet([(0, 1)]), IntervalSet([(0.5, 2)]), "intersection")) == [(0.5, 1)]
    assert list(merge_interval_sets(IntervalSet([(0, 1), (2, 3)]), IntervalSet([(0.5, 2.5)]), "union")) == [(0, 3)]
    with pytest.raises(ValueError):
        merge_interval_sets(IntervalSet(), IntervalSet(), "xor")


def test_merge_against_grid(rng):
    grid = np.linspace(-1, 11, 24001)
    for _ in range(100):
        def rand_set():
            pairs = np.sort(rng.uniform(0, 10, size=(int(rng.integers(0, 5)), 2)), axis=1)
            return IntervalSet(pairs)
        a, b = rand_set(), rand_set()
        np.testing.assert_array_equal((a | b).contains(grid), a.contains(grid) | b.contains(grid))
        np.testing.assert_array_equal((a & b).contains(grid), a.contains(grid) & b.contains(grid))
        bounds = (a & b).bounds
        assert np.all(bounds[:-1, 1] < bounds[1:, 0])


@pytest.mark.parametrize("kind", sorted(SPECS))
def test_stab_batch_matches_sat_stab(kind, rng):
    spec = SPECS[kind]
    n_samples, L = 6, 40
    sample = rng.integers(n_samples, size=L)
    counts = np.bincount(sample, minlength=n_samples)
    tables = {k: WeightTable(spec, max(int(c), 1)) for k, c in enumerate(counts)}
    table = sigma_lookup(tables, n_samples)
    lo = np.sort(rng.uniform(0, 10, size=(25, L, 2)), axis=2)
    valid = rng.random((25, L)) < 0.8
    value, stabber = stab_batch(lo[..., 0], lo[..., 1], sample, valid, table)
    for r in range(25):
        ivs = [TaggedInterval(lo[r, i, 0], lo[r, i, 1], int(sample[i])) for i in np.flatnonzero(valid[r])]
        res = sat_stab(ivs, tables)
        assert value[r] == pytest.approx(res.value, abs=1e-9)
        if res.value > 0:
            assert objective_at(stabber[r], ivs, tables) == pytest.approx(res.value, abs=1e-9)


def test_stab_batch_regroup_path(monkeypatch, rng):
    # the fallback used for large batches must agree with the one-hot path
    import satcm.stabbing as stabbing
    spec = SPECS["likelihood"]
    sample = rng.integers(5, size=30)
    tables = {k: WeightTable(spec, max(int(c), 1)) for k, c in enumerate(np.bincount(sample, minlength=5))}
    table = sigma_lookup(tables, 5)
    ends = np.sort(rng.uniform(0, 10, size=(10, 30, 2)), axis=2)
    valid = rng.random((10, 30)) < 0.9
    a = stab_batch(ends[..., 0], ends[..., 1], sample, valid, table)
    monkeypatch.setattr(stabbing, "_ONE_HOT_LIMIT", 0)
    b = stab_batch(ends[..., 0], ends[..., 1], sample, valid, table)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], atol=1e-12)


def test_stab_batch_empty_rows():
    value, stabber = stab_batch(np.zeros((3, 2)), np.ones((3, 2)), [0, 0], np.zeros((3, 2), bool),
                                np.array([[0.0, 1.0, 2.0]]))
    np.testing.assert_array_equal(value, 0.0)
    assert np.all(np.isnan(stabber))


def test_stab_batch_unit_weights_fast_path(rng):
    # identity weights with disjoint intervals per association: plain counting is exact
    sample = np.repeat(rng.integers(4, size=20), 2)
    tables = {k: WeightTable(SPECS["identity"], max(int(c), 1)) for k, c in enumerate(np.bincount(sample, minlength=4))}
    table = sigma_lookup(tables, 4)
    a = np.sort(rng.uniform(0, 10, size=(30, 20, 2)), axis=2)
    b = np.sort(rng.uniform(10, 20, size=(30, 20, 2)), axis=2)
    lo = np.stack([a[..., 0], b[..., 0]], axis=2).reshape(30, 40)
    hi = np.stack([a[..., 1], b[..., 1]], axis=2).reshape(30, 40)
    valid = rng.random((30, 40)) < 0.8
    slow = stab_batch(lo, hi, sample, valid, table)
    fast = stab_batch(lo, hi, sample, valid, table, unit_weights=True)
    np.testing.assert_array_equal(slow[0], fast[0])
    np.testing.assert_array_equal(slow[1], fast[1])
