"""Saturated-consensus translation search given a rotation.

With the rotation fixed each association constrains the camera center ``t``
to a slab ``|n* . (p - t)| <= eps_t`` where ``n*`` is the world-frame image
normal projected onto the null space of the map direction.  One translation
axis (the longest side of the scene box) is handled exactly by interval
stabbing and the other two are branched as rectangles.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import EmptyAssociationError
from .geometry import Intrinsics, Line3D
from .saturation import SaturationSpec, WeightTable
from .stabbing import IntervalSet, TaggedInterval, sat_stab, sigma_lookup, stab_batch

log = logging.getLogger(__name__)

_PARALLEL_TOL = 1e-9


@dataclass(frozen=True)
class TransAssociation:
    """Translation constraint ``n_star . t = const_a`` from one association."""

    query_index: int
    map_index: int
    n_star: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        n = np.array(self.n_star, dtype=float)
        n /= np.linalg.norm(n)
        p = np.array(self.p, dtype=float)
        n.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "n_star", n)
        object.__setattr__(self, "p", p)

    @property
    def const_a(self) -> float:
        return float(self.n_star @ self.p)

    def residual(self, t) -> float:
        return float(abs(self.n_star @ (self.p - np.asarray(t, dtype=float))))


def project_normal(n_rotated, v_map) -> np.ndarray | None:
    """``n - (n.v) v`` normalized; ``None`` when ``n`` is parallel to ``v``."""
    n = np.asarray(n_rotated, dtype=float)
    v = np.asarray(v_map, dtype=float)
    r = n - (n @ v) * v
    norm = np.linalg.norm(r)
    if norm < _PARALLEL_TOL:
        return None
    return r / norm


def make_trans_associations(R, pairs, query_normals, map_lines: Sequence[Line3D]):
    """Build translation constraints for ``(query_index, map_index)`` pairs.

    ``R`` is the camera-to-world rotation.  Near-parallel pairs are dropped;
    the number dropped is returned alongside.
    """
    out, dropped = [], 0
    for k, j in pairs:
        line = map_lines[j]
        n_star = project_normal(R @ query_normals[k], line.direction)
        if n_star is None:
            dropped += 1
            log.debug("dropping near-parallel association (%d, %d)", k, j)
            continue
        out.append(TransAssociation(k, j, n_star, line.point))
    return out, dropped


@dataclass(frozen=True)
class TransCube:
    """Rectangle over the two branched axes plus the stabbed axis range.

    Coordinates are in the permuted frame where axis 0 is stabbed.
    """

    y_lo: float
    y_hi: float
    z_lo: float
    z_hi: float
    x_lo: float
    x_hi: float

    def __post_init__(self):
        if not (self.y_lo <= self.y_hi and self.z_lo <= self.z_hi and self.x_lo <= self.x_hi):
            raise ValueError("empty translation cube")

    @property
    def width(self) -> float:
        return max(self.y_hi - self.y_lo, self.z_hi - self.z_lo)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.y_lo + self.y_hi), 0.5 * (self.z_lo + self.z_hi)

    def split(self) -> list["TransCube"]:
        ym, zm = self.center
        return [TransCube(y0, y1, z0, z1, self.x_lo, self.x_hi)
                for y0, y1 in ((self.y_lo, ym), (ym, self.y_hi))
                for z0, z1 in ((self.z_lo, zm), (zm, self.z_hi))]


def scene_box(map_lines: Sequence[Line3D], inflate: float = 0.1) -> np.ndarray:
    """Bounding box ``(2, 3)`` of map endpoints, grown by ``inflate`` of its extent."""
    pts = np.concatenate([ln.endpoints for ln in map_lines])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = inflate * np.maximum(hi - lo, 1e-6)
    return np.array([lo - pad, hi + pad])


def _tx_interval(nx, b_lo, b_hi, eps, x_lo, x_hi):
    """Admissible ``t_x`` with ``|nx t_x + b| <= eps`` for some ``b in [b_lo, b_hi]``."""
    nx, b_lo, b_hi = np.broadcast_arrays(np.asarray(nx, float), np.asarray(b_lo, float),
                                         np.asarray(b_hi, float))
    flat = np.abs(nx) < 1e-12
    safe = np.where(flat, 1.0, nx)
    e1 = (-eps - b_hi) / safe
    e2 = (eps - b_lo) / safe
    lo = np.where(flat, x_lo, np.minimum(e1, e2))
    hi = np.where(flat, x_hi, np.maximum(e1, e2))
    ok_flat = (b_lo <= eps) & (b_hi >= -eps)
    lo = np.maximum(lo, x_lo)
    hi = np.minimum(hi, x_hi)
    valid = (lo <= hi) & np.where(flat, ok_flat, True)
    return lo, hi, valid


def trans_theta_intervals(a: TransAssociation, t_yz, t_x_range, eps_t: float,
                          perm=(0, 1, 2)) -> IntervalSet:
    """Admissible values of the stabbed axis for a point or rectangle.

    ``t_yz`` is either a point ``(t_y, t_z)`` or a rectangle
    ``((y_lo, y_hi), (z_lo, z_hi))`` in the permuted frame ``perm``.
    """
    n = a.n_star[list(perm)]
    const = a.const_a
    yz = np.asarray(t_yz, dtype=float)
    if yz.shape == (2,):
        b = n[1] * yz[0] + n[2] * yz[1] - const
        b_lo = b_hi = b
    else:
        corners = [n[1] * y + n[2] * z - const for y in yz[0] for z in yz[1]]
        b_lo, b_hi = min(corners), max(corners)
    lo, hi, valid = _tx_interval(n[0], b_lo, b_hi, eps_t, *t_x_range)
    if not bool(valid):
        return IntervalSet.empty()
    return IntervalSet([(float(lo), float(hi))])


@dataclass
class TranslationConfig:
    epsilon_t: float = 0.03
    gap: float = 1e-6
    min_cube_width: float = 0.01
    max_nodes: int = 200_000
    batch_size: int = 32
    saturation_kind: str = "truncated"
    q: float = 0.9
    upper_bound: float = 1.0
    max_candidates: int = 256
    tie_resolution: float = 0.05
    max_tie_nodes: int = 20_000

    def spec(self) -> SaturationSpec:
        if self.saturation_kind == "likelihood":
            return SaturationSpec("likelihood", self.q, self.epsilon_t, self.upper_bound)
        return SaturationSpec(self.saturation_kind, 0.5, self.epsilon_t, self.upper_bound)


@dataclass
class TranslationCandidate:
    t: np.ndarray
    value: float
    inliers: np.ndarray  # indices into the association list
    pruned: np.ndarray | None = None
    refined: np.ndarray | None = None
    residual: float = math.inf
    rank_deficient: bool = False


@dataclass
class TranslationSolution:
    candidates: list[TranslationCandidate]
    value: float
    upper: float
    certified: bool
    nodes: int
    axis_order: tuple[int, int, int]
    stats: dict = field(default_factory=dict)

    @property
    def refined(self) -> list[np.ndarray]:
        return [c.refined for c in self.candidates if c.refined is not None]


class _TransProblem:
    def __init__(self, associations, spec, box):
        self.associations = list(associations)
        box = np.asarray(box, dtype=float)
        extent = box[1] - box[0]
        first = int(np.argmax(extent))
        self.perm = (first,) + tuple(i for i in range(3) if i != first)
        self.box = box[:, list(self.perm)]
        N = np.array([a.n_star for a in associations])[:, list(self.perm)]
        self.nx, self.ny, self.nz = N[:, 0], N[:, 1], N[:, 2]
        self.const = np.array([a.const_a for a in associations])
        query = np.array([a.query_index for a in associations], dtype=np.intp)
        self.sample_ids, self.sample = np.unique(query, return_inverse=True)
        counts = np.bincount(self.sample)
        self.tables = {k: WeightTable(spec, int(c)) for k, c in enumerate(counts)}
        self.sigma_table = sigma_lookup(self.tables, len(counts))

    def __len__(self):
        return len(self.associations)

    def unpermute(self, x_perm) -> np.ndarray:
        out = np.empty(3)
        out[list(self.perm)] = x_perm
        return out

    def bounds(self, rects, eps):
        """Upper bounds, lower bounds and lower-bound stabbers for rects (N, 4)."""
        y0, y1, z0, z1 = (rects[:, i:i + 1] for i in range(4))
        x_lo, x_hi = self.box[0, 0], self.box[1, 0]
        yc, zc = 0.5 * (y0 + y1), 0.5 * (z0 + z1)
        b = self.ny * yc + self.nz * zc - self.const
        lo, hi, valid = _tx_interval(self.nx, b, b, eps, x_lo, x_hi)
        lower, stab = stab_batch(lo, hi, self.sample, valid, self.sigma_table)
        corners = [self.ny * y + self.nz * z - self.const for y in (y0, y1) for z in (z0, z1)]
        b_lo = np.minimum.reduce(corners)
        b_hi = np.maximum.reduce(corners)
        lo, hi, valid = _tx_interval(self.nx, b_lo, b_hi, eps, x_lo, x_hi)
        upper, _ = stab_batch(lo, hi, self.sample, valid, self.sigma_table)
        return np.maximum(upper, lower), lower, stab

    def center_stab(self, yc, zc, eps):
        b = self.ny * yc + self.nz * zc - self.const
        lo, hi, valid = _tx_interval(self.nx, b, b, eps, self.box[0, 0], self.box[1, 0])
        intervals = [TaggedInterval(float(lo[i]), float(hi[i]), int(self.sample[i]))
                     for i in np.flatnonzero(valid)]
        return sat_stab(intervals, self.tables)


def residuals(associations: Sequence[TransAssociation], t) -> np.ndarray:
    N = np.array([a.n_star for a in associations])
    P = np.array([a.p for a in associations])
    return np.abs(np.einsum("ij,ij->i", N, P - np.asarray(t, dtype=float)))


def solve_translation(associations: Sequence[TransAssociation], spec: SaturationSpec | None = None,
                      config: TranslationConfig | None = None, box=None) -> TranslationSolution:
    """Best-first branch and bound over translation rectangles.

    ``box`` is the ``(2, 3)`` search box; the axis with the largest extent is
    stabbed exactly.  After certification, rectangles that may still tie the
    optimum are split down to ``config.tie_resolution``.  Candidates are the
    tied rectangles' centers completed by the midpoints of their optimal
    stabbed regions, deduplicated by inlier set.
    """
    config = config or TranslationConfig()
    if not associations:
        raise EmptyAssociationError("translation search needs at least one association")
    if box is None:
        raise ValueError("a finite scene box is required")
    spec = spec or config.spec()
    prob = _TransProblem(associations, spec, box)
    eps = config.epsilon_t
    gap = config.gap
    bx = prob.box
    root = np.array([[bx[0, 1], bx[1, 1], bx[0, 2], bx[1, 2]]])

    heap: list = []
    cands: list = []
    maybe_tied: list = []
    best = -math.inf
    nodes = 0
    counter = 0
    leaf_upper = -math.inf

    def push_eval(rects, queue=True):
        nonlocal best, cands, nodes, counter
        upper, lower, _ = prob.bounds(rects, eps)
        nodes += len(rects)
        top = float(lower.max())
        if top > best + gap:
            best = top
            cands = [c for c in cands if c[0] >= best - gap]
        kept = []
        for i in range(len(rects)):
            box_i = tuple(float(x) for x in rects[i])
            if lower[i] >= best - gap:
                cands.append((float(lower[i]), counter, box_i))
            if queue and upper[i] > best + gap:
                width = max(box_i[1] - box_i[0], box_i[3] - box_i[2])
                heapq.heappush(heap, (-float(upper[i]), -width, box_i, counter))
            elif upper[i] >= best - gap:
                kept.append((float(upper[i]), box_i))
            counter += 1
        return kept

    maybe_tied += push_eval(root)
    certified = True
    while heap:
        if -heap[0][0] - best <= gap:
            break
        if nodes >= config.max_nodes:
            certified = False
            break
        batch = []
        while heap and len(batch) < config.batch_size and -heap[0][0] - best > gap:
            neg_up, neg_w, r, _ = heapq.heappop(heap)
            if -neg_w < config.min_cube_width:
                leaf_upper = max(leaf_upper, -neg_up)
                continue
            batch.extend(_split_rect(r))
        if batch:
            maybe_tied += push_eval(np.array(batch))

    upper = max(best, leaf_upper, -heap[0][0] if (heap and not certified) else -math.inf)

    tie_nodes = 0
    if certified and config.tie_resolution > 0:
        # a saturated optimum is usually a plateau: sample it evenly
        pool = [b for u, b in maybe_tied if u >= best - gap]
        pool += [b for nu, _, b, _ in heap if -nu >= best - gap]
        while pool and tie_nodes < config.max_tie_nodes:
            wide = [b for b in pool if max(b[1] - b[0], b[3] - b[2]) >= config.tie_resolution]
            if not wide:
                break
            chunk = config.batch_size * 4
            children = [c for b in wide[:chunk] for c in _split_rect(b)]
            tie_nodes += len(children)
            pool = wide[chunk:] + [b for u, b in push_eval(np.array(children), queue=False)
                                   if u >= best - gap]

    cands = [c for c in cands if c[0] >= best - gap]
    cands.sort(key=lambda c: (-c[0], c[1]))
    if len(cands) > config.max_candidates:
        # spread the budget over the whole tied set
        pick = np.linspace(0, len(cands) - 1, config.max_candidates).round().astype(int)
        cands = [cands[i] for i in np.unique(pick)]
    out = []
    seen = set()
    for value, _, r in cands:
        yc, zc = 0.5 * (r[0] + r[1]), 0.5 * (r[2] + r[3])
        res = prob.center_stab(yc, zc, eps)
        for x in res.optimal_regions.midpoints():
            t = prob.unpermute([x, yc, zc])
            inl = np.flatnonzero(residuals(prob.associations, t) <= eps)
            key = tuple(inl)
            if key in seen:
                continue
            seen.add(key)
            out.append(TranslationCandidate(t, res.value, inl))
    log.debug("translation BnB: %d nodes, value %.6f", nodes, best)
    return TranslationSolution(out, best, upper, certified, nodes, prob.perm,
                               {"leaf_upper": leaf_upper, "tie_nodes": tie_nodes, "tied_rects": len(cands)})


def _split_rect(r):
    y0, y1, z0, z1 = r
    ym, zm = 0.5 * (y0 + y1), 0.5 * (z0 + z1)
    return [(a, b, c, d) for a, b in ((y0, ym), (ym, y1)) for c, d in ((z0, zm), (zm, z1))]


# ---------------------------------------------------------------- pruning ----

def _clip_segment_to_rect(p, q, w, h) -> bool:
    """Liang-Barsky test: does segment ``pq`` meet ``[0, w] x [0, h]``?"""
    d = q - p
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-d[0], p[0]), (d[0], w - p[0]), (-d[1], p[1]), (d[1], h - p[1])):
        if pk == 0.0:
            if qk < 0.0:
                return False
            continue
        r = qk / pk
        if pk < 0.0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return False
    return True


def segment_visible(R, t, segment, intrinsics: Intrinsics, z_min: float = 1e-6) -> bool:
    """True if the 3D segment is partly in front of the camera and projects into the image."""
    ends = (np.asarray(segment, dtype=float) - np.asarray(t, dtype=float)) @ np.asarray(R)
    za, zb = ends[0, 2], ends[1, 2]
    if za <= z_min and zb <= z_min:
        return False
    if za < z_min or zb < z_min:
        # clip the part behind the camera
        s = (z_min - za) / (zb - za)
        cut = ends[0] + s * (ends[1] - ends[0])
        ends = np.array([cut, ends[1]]) if za < z_min else np.array([ends[0], cut])
    pix = ends @ intrinsics.K.T
    pix = pix[:, :2] / pix[:, 2:3]
    w, h = intrinsics.image_size
    return _clip_segment_to_rect(pix[0], pix[1], float(w), float(h))


def prune_inliers(t, R, inliers, associations: Sequence[TransAssociation],
                  map_lines: Sequence[Line3D], intrinsics: Intrinsics) -> np.ndarray:
    """Keep inliers whose map segment lies partly in front and projects into the image."""
    keep = [i for i in inliers
            if segment_visible(R, t, map_lines[associations[i].map_index].endpoints, intrinsics)]
    return np.asarray(keep, dtype=np.intp)


def refine_translation(associations: Sequence[TransAssociation], t0=None):
    """Least-squares camera center over the given constraints.

    Returns ``(t, rank_deficient)``.  When the normals do not span 3-D the
    input ``t0`` is returned unchanged with the flag set.
    """
    if len(associations) < 3:
        return (None if t0 is None else np.asarray(t0, dtype=float)), True
    N = np.array([a.n_star for a in associations])
    c = np.array([a.const_a for a in associations])
    A = N.T @ N
    if np.linalg.matrix_rank(A, tol=1e-9) < 3:
        return (None if t0 is None else np.asarray(t0, dtype=float)), True
    return np.linalg.solve(A, N.T @ c), False


def rank_candidates(solution: TranslationSolution, R, associations, map_lines, intrinsics):
    """Prune and refine every candidate, then order them best first.

    Order: most surviving inliers, then smallest refined residual.
    """
    for cand in solution.candidates:
        cand.pruned = prune_inliers(cand.t, R, cand.inliers, associations, map_lines, intrinsics)
        subset = [associations[i] for i in cand.pruned]
        t_ref, flag = refine_translation(subset, cand.t)
        cand.refined = t_ref
        cand.rank_deficient = flag
        cand.residual = float(np.sum(residuals(subset, t_ref) ** 2)) if subset else math.inf
    solution.candidates.sort(key=lambda c: (-len(c.pruned), c.residual))
    return solution
