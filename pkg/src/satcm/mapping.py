"""Semantic 3D line maps from posed RGB-D frames.

Each labeled 2D segment is lifted to 3D under several small perpendicular
perturbations of its endpoints, which avoids sampling depth across an
occlusion boundary.  The hypothesis closest to the camera with a clean fit
wins.  Redundant observations across frames are then clustered with a greedy
max-degree procedure on a parallel-and-close graph.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .exceptions import SatCMError
from .geometry import Intrinsics, Line3D, PixelLine, Pose

log = logging.getLogger(__name__)


class DegenerateFitError(SatCMError, ValueError):
    """Points do not determine a line direction."""


DepthSource = np.ndarray | Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FrameInput:
    """A posed frame with depth and labeled segments.

    ``depth`` is either an ``(H, W)`` array in meters (non-positive or NaN
    means missing) or a callable mapping integer pixel arrays ``(u, v)`` to
    depths.
    """

    pose: Pose
    intrinsics: Intrinsics
    depth: DepthSource
    segments: Sequence[PixelLine] = ()

    def lookup(self, u, v) -> np.ndarray:
        ui = np.asarray(u, dtype=np.intp)
        vi = np.asarray(v, dtype=np.intp)
        if callable(self.depth):
            return np.asarray(self.depth(ui, vi), dtype=float)
        return np.asarray(self.depth, dtype=float)[vi, ui]


@dataclass(frozen=True)
class MapBuilderConfig:
    n_samples: int = 20
    offsets_px: tuple[float, ...] = (0.0, -1.0, 1.0, -2.0, 2.0)
    depth_penalty: float = 0.02  # meters per pixel of perturbation
    rms_max: float = 0.02
    delta_r_deg: float = 5.0
    delta_t: float = 0.05
    delta_d: int = 3
    min_length_px: float = 0.0

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if 0.0 not in self.offsets_px:
            raise ValueError("the perturbation grid must include zero")
        if self.delta_r_deg <= 0 or self.delta_t <= 0 or self.delta_d < 0:
            raise ValueError("clustering thresholds must be positive")


def _clip_to_image(p, q, w, h):
    """Liang-Barsky clip of segment ``pq`` to ``[0, w-1] x [0, h-1]``; None if outside."""
    d = q - p
    t0, t1 = 0.0, 1.0
    for pk, qk in ((-d[0], p[0]), (d[0], w - 1 - p[0]), (-d[1], p[1]), (d[1], h - 1 - p[1])):
        if pk == 0.0:
            if qk < 0.0:
                return None
            continue
        r = qk / pk
        if pk < 0.0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return p + t0 * d, p + t1 * d


def _camera_points(endpoints, frame: FrameInput, n_samples: int):
    """Camera-frame samples along a pixel segment and their depths."""
    w, h = frame.intrinsics.image_size
    clipped = _clip_to_image(np.asarray(endpoints[0], float), np.asarray(endpoints[1], float), w, h)
    if clipped is None:
        return np.empty((0, 3))
    s = np.linspace(0.0, 1.0, n_samples)[:, None]
    uv = clipped[0] + s * (clipped[1] - clipped[0])
    ui = np.clip(np.rint(uv[:, 0]), 0, w - 1)
    vi = np.clip(np.rint(uv[:, 1]), 0, h - 1)
    z = frame.lookup(ui, vi)
    ok = np.isfinite(z) & (z > 0)
    rays = np.column_stack([uv, np.ones(len(uv))]) @ frame.intrinsics.K_inv.T
    return rays[ok] * z[ok, None]


def backproject_segment(seg: PixelLine, frame: FrameInput, n_samples: int = 20) -> np.ndarray:
    """World points sampled along a segment using nearest-pixel depth.

    The segment is clipped to the image first.  Samples without depth are
    skipped; fewer than two valid samples yield an empty ``(0, 3)`` array.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    pc = _camera_points(seg.endpoints, frame, n_samples)
    if len(pc) < 2:
        return np.empty((0, 3))
    return pc @ frame.pose.rotation.T + frame.pose.translation


def _principal(points):
    p0 = points.mean(axis=0)
    X = points - p0
    evals, evecs = np.linalg.eigh(X.T @ X)
    return p0, evecs[:, -1], evals


def _perp_dist(points, p0, v):
    X = points - p0
    return np.linalg.norm(X - np.outer(X @ v, v), axis=1)


def fit_line3d(points, rms_max: float = 0.02, tie_ratio: float = 0.9):
    """Principal-axis line fit with one trimming pass.

    Points farther than three times the median perpendicular distance are
    dropped and the line is refit.

    Returns:
        ``(p0, v, rms)``: centroid, unit direction and RMS perpendicular
        distance of the kept points.

    Raises:
        DegenerateFitError: fewer than two points, or the two largest scatter
            eigenvalues are within ``tie_ratio`` of each other while the fit
            RMS exceeds ``rms_max``.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3 or len(points) < 2:
        raise DegenerateFitError("need at least two 3-D points")
    p0, v, _ = _principal(points)
    d = _perp_dist(points, p0, v)
    keep = d <= max(3.0 * np.median(d), 1e-9)
    if 2 <= keep.sum() < len(points):
        points = points[keep]
        p0, v, _ = _principal(points)
    _, _, evals = _principal(points)
    rms = float(np.sqrt(np.mean(_perp_dist(points, p0, v) ** 2)))
    if evals[-1] <= 0:
        raise DegenerateFitError("points coincide")
    if evals[-2] >= tie_ratio * evals[-1] and rms > rms_max:
        raise DegenerateFitError("scatter has no dominant direction")
    return p0, v, rms


def _segment_line(points, p0, v, label) -> Line3D:
    s = (points - p0) @ v
    return Line3D(p0, v, label, np.stack([p0 + s.min() * v, p0 + s.max() * v]))


def select_hypothesis(seg: PixelLine, frame: FrameInput, offsets_px: Sequence[float] = (0.0, -1.0, 1.0, -2.0, 2.0),
                      depth_penalty: float = 0.02, rms_max: float = 0.02,
                      n_samples: int = 20) -> Line3D | None:
    """Lift a segment to 3D, preferring near and mildly perturbed hypotheses.

    Both endpoints are shifted along the segment normal by every pair of
    offsets.  Each hypothesis is scored by its mean camera depth plus
    ``depth_penalty`` times the perturbation norm; the best one whose fit RMS
    is below ``rms_max`` is returned, or ``None``.
    """
    if 0.0 not in offsets_px:
        raise ValueError("the perturbation grid must include zero")
    ends = np.asarray(seg.endpoints, dtype=float)
    d = ends[1] - ends[0]
    normal = np.array([-d[1], d[0]]) / np.linalg.norm(d)
    R, t = frame.pose.rotation, frame.pose.translation
    best, best_score = None, math.inf
    for o1, o2 in itertools.product(offsets_px, repeat=2):
        shifted = ends + np.outer([o1, o2], normal)
        pc = _camera_points(shifted, frame, n_samples)
        if len(pc) < 2:
            continue
        try:
            p0, v, rms = fit_line3d(pc, rms_max)
        except DegenerateFitError:
            continue
        if rms >= rms_max:
            continue
        score = float(np.mean(pc[:, 2])) + depth_penalty * math.hypot(o1, o2)
        if score < best_score - 1e-12:
            best_score = score
            best = (pc @ R.T + t, R @ p0 + t, R @ v)
    if best is None:
        return None
    pts, p0, v = best
    return _segment_line(pts, p0, v, seg.label)


@dataclass
class LineGraph:
    """Undirected graph of candidate lines joined when parallel and close."""

    vertices: list[Line3D]
    delta_r: float
    delta_t: float
    delta_d: int
    adjacency: list[set[int]] = field(default_factory=list)
    removed: set[int] = field(default_factory=set)

    @classmethod
    def build(cls, vertices: Sequence[Line3D], delta_r: float, delta_t: float, delta_d: int) -> "LineGraph":
        if delta_r <= 0 or delta_t <= 0:
            raise ValueError("thresholds must be positive")
        vertices = list(vertices)
        n = len(vertices)
        adjacency = [set() for _ in range(n)]
        if n:
            V = np.array([ln.direction for ln in vertices])
            P = np.array([ln.point for ln in vertices])
            parallel = np.abs(V @ V.T) > math.cos(delta_r)
            diff = P[None, :, :] - P[:, None, :]  # p_n - p_m
            along = np.einsum("mnk,mk->mn", diff, V)
            perp = np.linalg.norm(diff - along[..., None] * V[:, None, :], axis=-1)
            # proximity is measured from both ends so the relation is symmetric
            close = (perp < delta_t) & (perp.T < delta_t)
            edges = parallel & close
            np.fill_diagonal(edges, False)
            for m, nb in enumerate(edges):
                adjacency[m] = set(np.flatnonzero(nb).tolist())
        return cls(vertices, delta_r, delta_t, delta_d, adjacency)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def remove(self, nodes) -> None:
        nodes = set(nodes)
        for i in nodes:
            for j in self.adjacency[i]:
                self.adjacency[j].discard(i)
            self.adjacency[i] = set()
        self.removed |= nodes

    def alive(self) -> list[int]:
        return [i for i in range(len(self.vertices)) if i not in self.removed]


def _merged_line(center: Line3D, members: Sequence[Line3D], label: int) -> Line3D:
    ends = np.concatenate([m.endpoints for m in members])
    s = (ends - center.point) @ center.direction
    p, v = center.point, center.direction
    return Line3D(p, v, label, np.stack([p + s.min() * v, p + s.max() * v]))


def cluster_lines(candidates: Sequence[Line3D], delta_r: float = math.radians(5.0), delta_t: float = 0.05,
                  delta_d: int = 3, return_labels: bool = False):
    """Greedy max-degree clustering of redundant line observations.

    While the highest-degree vertex has degree at least ``delta_d``, its
    closed neighborhood is removed and one line per distinct label in it is
    registered with the center's point and direction.  Endpoints span the
    extremal projections of all neighborhood endpoints onto that axis.

    With ``return_labels`` a second value is returned: the cluster index of
    every candidate, ``-1`` for candidates that were never registered.
    """
    graph = LineGraph.build(candidates, delta_r, delta_t, delta_d)
    out: list[Line3D] = []
    assignment = np.full(len(graph.vertices), -1, dtype=np.intp)
    n_clusters = 0
    while True:
        alive = graph.alive()
        if not alive:
            break
        # lowest index wins ties so the result is deterministic
        center = max(alive, key=lambda i: (graph.degree(i), -i))
        if graph.degree(center) < delta_d:
            break
        hood = sorted({center} | graph.adjacency[center])
        members = [graph.vertices[i] for i in hood]
        for label in sorted({m.label for m in members}):
            out.append(_merged_line(graph.vertices[center], members, label))
        assignment[hood] = n_clusters
        n_clusters += 1
        graph.remove(hood)
    return (out, assignment) if return_labels else out


def lift_frames(frames: Sequence[FrameInput], config: MapBuilderConfig | None = None) -> list[Line3D]:
    """Per-segment 3D hypotheses from every frame (before clustering)."""
    config = config or MapBuilderConfig()
    out = []
    skipped = 0
    for frame in frames:
        for seg in frame.segments:
            if seg.length < max(config.min_length_px, 1e-9):
                skipped += 1
                continue
            line = select_hypothesis(seg, frame, config.offsets_px, config.depth_penalty,
                                     config.rms_max, config.n_samples)
            if line is None:
                skipped += 1
            else:
                out.append(line)
    if skipped:
        log.info("skipped %d segments without a usable 3D fit", skipped)
    return out


def build_line_map(frames: Sequence[FrameInput], config: MapBuilderConfig | None = None) -> list[Line3D]:
    """Lift all segments and cluster them into a compact semantic line map."""
    config = config or MapBuilderConfig()
    candidates = lift_frames(frames, config)
    return cluster_lines(candidates, math.radians(config.delta_r_deg), config.delta_t, config.delta_d)
