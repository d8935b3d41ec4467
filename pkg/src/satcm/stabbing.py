"""Saturated interval stabbing on a 1-D parameter.

Given closed intervals tagged with a sample id, find the stabber positions
maximizing ``sum_k sigma_k(N_k)`` where ``N_k`` is the number of intervals of
sample ``k`` containing the stabber.  The sweep visits sorted endpoints left
to right; at equal coordinates left endpoints come first, which gives closed
interval semantics (zero-length intervals can be stabbed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .saturation import WeightTable

_ONE_HOT_LIMIT = 4_000_000

VALUE_TOL = 1e-12


class IntervalSet:
    """Sorted union of disjoint closed intervals.

    Overlapping or touching input intervals are merged on construction.
    """

    __slots__ = ("bounds",)

    def __init__(self, intervals: Iterable = ()):
        arr = np.asarray(list(intervals) if not isinstance(intervals, np.ndarray) else intervals,
                         dtype=float).reshape(-1, 2)
        arr = arr[arr[:, 0] <= arr[:, 1]]
        self.bounds = _normalize(arr)
        self.bounds.setflags(write=False)

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(())

    def __len__(self):
        return len(self.bounds)

    def __iter__(self):
        return (tuple(b) for b in self.bounds.tolist())

    def __bool__(self):
        return len(self.bounds) > 0

    def __eq__(self, other):
        if not isinstance(other, IntervalSet):
            return NotImplemented
        return self.bounds.shape == other.bounds.shape and np.array_equal(self.bounds, other.bounds)

    def __repr__(self):
        return f"IntervalSet({list(self)})"

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not len(self.bounds):
            return np.zeros(x.shape, dtype=bool)
        i = np.searchsorted(self.bounds[:, 0], x, side="right") - 1
        ok = i >= 0
        ic = np.clip(i, 0, None)
        return ok & (x <= self.bounds[ic, 1])

    def measure(self) -> float:
        return float(np.sum(self.bounds[:, 1] - self.bounds[:, 0]))

    def midpoints(self) -> np.ndarray:
        return self.bounds.mean(axis=1)

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return merge_interval_sets(self, other, "union")

    def intersection(self, other: "IntervalSet") -> "IntervalSet":
        return merge_interval_sets(self, other, "intersection")

    __or__ = union
    __and__ = intersection


def _normalize(arr: np.ndarray) -> np.ndarray:
    if len(arr) == 0:
        return np.zeros((0, 2))
    arr = arr[np.lexsort((arr[:, 1], arr[:, 0]))]
    out = [list(arr[0])]
    for lo, hi in arr[1:]:
        if lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return np.array(out, dtype=float)


def merge_interval_sets(a: IntervalSet, b: IntervalSet, mode: str = "union") -> IntervalSet:
    """Union or intersection of two interval sets."""
    if mode == "union":
        return IntervalSet(np.concatenate([a.bounds, b.bounds]))
    if mode != "intersection":
        raise ValueError(f"unknown mode {mode!r}")
    out = []
    i = j = 0
    A, B = a.bounds, b.bounds
    while i < len(A) and j < len(B):
        lo = max(A[i, 0], B[j, 0])
        hi = min(A[i, 1], B[j, 1])
        if lo <= hi:
            out.append((lo, hi))
        if A[i, 1] < B[j, 1]:
            i += 1
        else:
            j += 1
    return IntervalSet(out)


@dataclass(frozen=True)
class TaggedInterval:
    lo: float
    hi: float
    sample_id: int

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"interval [{self.lo}, {self.hi}] is reversed")


@dataclass
class StabResult:
    value: float
    optimal_regions: IntervalSet
    per_sample_counts: dict[int, int] = field(default_factory=dict)

    @property
    def stabber(self) -> float | None:
        """Midpoint of the first optimal region."""
        if not self.optimal_regions:
            return None
        return float(self.optimal_regions.bounds[0].mean())


def sat_stab(intervals: Iterable[TaggedInterval], weights: Mapping[int, WeightTable]) -> StabResult:
    """Exact maximizer of the saturated stabbing objective.

    Runs in ``O(M log M)`` for ``M`` intervals.  All optimal regions are
    returned; regions that touch are merged.
    """
    intervals = list(intervals)
    if not intervals:
        return StabResult(0.0, IntervalSet.empty(), {})
    missing = {iv.sample_id for iv in intervals} - set(weights)
    if missing:
        raise KeyError(f"no weight table for samples {sorted(missing)}")

    events = [(iv.lo, 0, iv.sample_id) for iv in intervals]
    events += [(iv.hi, 1, iv.sample_id) for iv in intervals]
    events.sort(key=lambda e: (e[0], e[1]))

    counts = dict.fromkeys(weights, 0)
    values = np.empty(len(events))
    v = best = 0.0
    best_counts: dict[int, int] = {}
    for i, (_, kind, k) in enumerate(events):
        table = weights[k]
        n = counts[k]
        if kind == 0:
            counts[k] = n + 1
            v += table.sigma(n + 1) - table.sigma(n)
            if v > best + VALUE_TOL:
                best = v
                best_counts = {s: c for s, c in counts.items() if c}
        else:
            counts[k] = n - 1
            v -= table.sigma(n) - table.sigma(n - 1)
        values[i] = v

    regions = []
    if best > 0.0:
        for i in range(len(events) - 1):
            if abs(values[i] - best) <= VALUE_TOL:
                regions.append((events[i][0], events[i + 1][0]))
    return StabResult(best, IntervalSet(regions), best_counts)


def sigma_lookup(tables: Mapping[int, WeightTable], n_samples: int | None = None):
    """Pack per-sample sigma tables into a padded 2-D array ``[sample, N]``."""
    if n_samples is None:
        n_samples = max(tables) + 1 if tables else 0
    width = max((t.M_k for t in tables.values()), default=0) + 1
    out = np.zeros((n_samples, width))
    for k, t in tables.items():
        out[k, : t.M_k + 1] = t.sigmas
        out[k, t.M_k + 1:] = t.sigmas[-1]
    return out


def stab_batch(lo, hi, sample, valid, sigma_table, unit_weights: bool = False):
    """Vectorized saturated stabbing over independent rows.

    Parameters
    ----------
    lo, hi : ndarray, shape (R, L)
        Interval endpoints; row ``r`` is one stabbing problem.
    sample : ndarray of int, shape (R, L) or (L,)
        Sample id of each interval.
    valid : ndarray of bool, shape (R, L)
        Mask of intervals that exist.
    sigma_table : ndarray, shape (S, W)
        ``sigma_table[k, N]``; counts are clipped to ``W - 1``.
    unit_weights : bool
        Promise that every weight is 1 and no sample's count can exceed its
        saturation point (identity saturation with at most one stabbed
        interval per association).  The sweep then skips per-sample counts.

    Returns
    -------
    value : ndarray, shape (R,)
    stabber : ndarray, shape (R,)
        Midpoint of the first optimal elementary segment (NaN for empty rows).
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    R, L = lo.shape
    if L == 0:
        return np.zeros(R), np.full(R, np.nan)
    sample = np.broadcast_to(np.asarray(sample, dtype=np.intp), (R, L))
    valid = np.broadcast_to(np.asarray(valid, dtype=bool), (R, L))
    # intervals absent from every row cannot affect the sweep
    keep = valid.any(axis=0)
    if not keep.all():
        lo, hi, sample, valid = lo[:, keep], hi[:, keep], sample[:, keep], valid[:, keep]
        L = lo.shape[1]
        if L == 0:
            return np.zeros(R), np.full(R, np.nan)

    coords = np.concatenate([np.where(valid, lo, np.inf), np.where(valid, hi, np.inf)], axis=1)
    delta = np.concatenate([valid.astype(np.int64), -valid.astype(np.int64)], axis=1)
    samp = np.concatenate([sample, sample], axis=1)

    order = np.argsort(coords, axis=1, kind="stable")
    rows = np.arange(R)[:, None]
    c = coords[rows, order]
    d = delta[rows, order]
    s = samp[rows, order]

    n_samples = sigma_table.shape[0]
    if unit_weights:
        dv = d.astype(float)
    elif R * 2 * L * n_samples <= _ONE_HOT_LIMIT:
        # running count per sample through a one-hot cumulative sum
        onehot = np.zeros((R, 2 * L, n_samples), dtype=np.int64)
        onehot[rows, np.arange(2 * L)[None, :], s] = d
        np.cumsum(onehot, axis=1, out=onehot)
        n_after = onehot[rows, np.arange(2 * L)[None, :], s]
    else:
        # stable regroup by sample, then a segmented cumulative sum
        g = np.argsort(s, axis=1, kind="stable")
        dg = np.take_along_axis(d, g, axis=1)
        sg = np.take_along_axis(s, g, axis=1)
        cs = np.cumsum(dg, axis=1)
        start = np.ones_like(sg, dtype=bool)
        start[:, 1:] = sg[:, 1:] != sg[:, :-1]
        idx = np.where(start, np.arange(2 * L), 0)
        np.maximum.accumulate(idx, axis=1, out=idx)
        base = np.take_along_axis(cs - dg, idx, axis=1)
        n_after = np.empty_like(cs)
        np.put_along_axis(n_after, g, cs - base, axis=1)

    if not unit_weights:
        width = sigma_table.shape[1] - 1
        n_before = np.clip(n_after - d, 0, width)
        n_after = np.clip(n_after, 0, width)
        dv = sigma_table[s, n_after] - sigma_table[s, n_before]
    v = np.cumsum(dv, axis=1)

    arg = np.argmax(v, axis=1)
    rows = np.arange(R)
    value = np.maximum(v[rows, arg], 0.0)
    nxt = np.minimum(arg + 1, 2 * L - 1)
    left = c[rows, arg]
    right = c[rows, nxt]
    right = np.where(np.isfinite(right), right, left)
    stabber = np.where(np.isfinite(left), 0.5 * (left + right), np.nan)
    return value, stabber
