"""End-to-end relocalization of a query image in a semantic line map.

Stages: same-label association, rotation search, then for every tied
rotation a translation search with physical-constraint pruning and
least-squares refinement.  The pose with the most surviving inliers (then the
smallest residual) wins.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .exceptions import EmptyAssociationError
from .geometry import AxisAngle, Intrinsics, Line2D, Line3D, Pose, rotation_error
from .rotation import Association, AxisCube, RotationConfig, RotationProblem, solve_rotation
from .saturation import SaturationSpec
from .translation import (TranslationConfig, make_trans_associations, rank_candidates,
                          scene_box, solve_translation)

log = logging.getLogger(__name__)

SIDE_LENGTHS = {"pi": math.pi, "pi/2": 0.5 * math.pi}


@dataclass
class AssociationSet:
    """Same-label candidates of every usable query line."""

    candidates: dict[int, list[int]]
    n_query: int
    dropped: list[int] = field(default_factory=list)

    @property
    def counts(self) -> dict[int, int]:
        return {k: len(v) for k, v in self.candidates.items()}

    @property
    def M(self) -> int:
        return sum(len(v) for v in self.candidates.values())

    @property
    def K(self) -> int:
        return len(self.candidates)

    def pairs(self) -> list[tuple[int, int]]:
        return [(k, j) for k in sorted(self.candidates) for j in self.candidates[k]]

    def outlier_ratio(self, n_true: int | None = None) -> float:
        """``(M - n_true) / M``; at most one true match per kept query line by default."""
        if self.M == 0:
            return 1.0
        n_true = self.K if n_true is None else n_true
        return (self.M - n_true) / self.M


def apply_remap(label: int, remap: Mapping[int, int] | None) -> int:
    if not remap:
        return label
    return remap.get(label, label)


def associate(query: Sequence[Line2D], map_lines: Sequence[Line3D],
              remap: Mapping[int, int] | None = None, submap: Sequence[int] | None = None,
              min_length_px: float = 0.0) -> AssociationSet:
    """Match every query line with all map lines sharing its (remapped) label."""
    allowed = range(len(map_lines)) if submap is None else sorted(set(submap))
    by_label: dict[int, list[int]] = {}
    for j in allowed:
        by_label.setdefault(apply_remap(map_lines[j].label, remap), []).append(j)
    cands, dropped = {}, []
    for k, line in enumerate(query):
        if min_length_px > 0 and line.endpoints is not None:
            if np.linalg.norm(line.endpoints[0] - line.endpoints[1]) < min_length_px:
                dropped.append(k)
                continue
        js = by_label.get(apply_remap(line.label, remap), [])
        if js:
            cands[k] = list(js)
        else:
            dropped.append(k)
    if dropped:
        log.info("%d query lines have no same-label map line", len(dropped))
    if not cands:
        raise EmptyAssociationError("no query line shares a label with the map")
    return AssociationSet(cands, len(query), dropped)


def prior_cube_from_retrieval(prior_axis: AxisAngle, side_length) -> AxisCube:
    """Grid cell of side ``pi`` or ``pi/2`` holding the prior rotation axis.

    A side of ``pi`` splits the sphere in two halves along phi; ``pi/2``
    gives eight cells.  Axes on a grid line fall in the lower cell.
    """
    side = SIDE_LENGTHS.get(side_length, side_length)
    side = float(side)
    if not any(math.isclose(side, s) for s in SIDE_LENGTHS.values()):
        raise ValueError("side_length must be pi or pi/2")

    def cell(x, n_cells):
        return min(max(math.ceil(x / side - 1e-12) - 1, 0), n_cells - 1)

    n_alpha = round(math.pi / side)
    n_phi = round(2 * math.pi / side)
    if n_alpha == 1:
        ia = 0
    else:
        ia = cell(prior_axis.alpha, n_alpha)
    ip = cell(prior_axis.phi, n_phi)
    return AxisCube(ia * side, min((ia + 1) * side, math.pi), ip * side, min((ip + 1) * side, 2 * math.pi))


@dataclass
class PipelineConfig:
    rotation: RotationConfig = field(default_factory=RotationConfig)
    translation: TranslationConfig = field(default_factory=TranslationConfig)
    saturation_kind: str = "likelihood"
    q: float = 0.9
    max_rotation_candidates: int = 24
    candidate_separation_deg: float = 0.1
    min_length_px: float = 0.0

    def rotation_spec(self) -> SaturationSpec:
        if self.saturation_kind == "likelihood":
            return SaturationSpec("likelihood", self.q, self.rotation.epsilon_r, 1.0)
        return SaturationSpec(self.saturation_kind, 0.5, self.rotation.epsilon_r, 1.0)


@dataclass
class RelocResult:
    pose: Pose | None
    rotation_value: float = 0.0
    translation_value: float = 0.0
    n_rotation_inliers: int = 0
    n_translation_inliers: int = 0
    certified_rotation: bool = False
    certified_translation: bool = False
    timings_ms: dict = field(default_factory=dict)
    n_associations: int = 0
    outlier_ratio: float = 1.0
    message: str = ""
    inliers: list[tuple[int, int]] = field(default_factory=list)
    rotation_candidates: int = 0

    @property
    def success(self) -> bool:
        return self.pose is not None

    @property
    def certified(self) -> bool:
        return self.certified_rotation and self.certified_translation


def _distinct(rotations, min_deg):
    kept = []
    for cand in rotations:
        R = cand.matrix
        if all(rotation_error(R, k.matrix) >= min_deg for k in kept):
            kept.append(cand)
    return kept


def relocalize(query: Sequence[Line2D], map_lines: Sequence[Line3D], intrinsics: Intrinsics,
               config: PipelineConfig | None = None, prior: AxisAngle | None = None,
               remap: Mapping[int, int] | None = None, submap: Sequence[int] | None = None,
               prior_side_length=None) -> RelocResult:
    """Estimate the camera-to-world pose of a query image.

    ``prior`` is a retrieved rotation in the searched (world-to-camera)
    parameterization; with ``prior_side_length`` it confines the axis search.
    """
    config = config or PipelineConfig()
    timings = {}
    t0 = time.perf_counter()
    try:
        aset = associate(query, map_lines, remap, submap, config.min_length_px)
    except EmptyAssociationError as exc:
        return RelocResult(None, message=str(exc))
    pairs = aset.pairs()
    normals = [ln.normal for ln in query]
    assocs = [Association(k, j, normals[k], map_lines[j].direction) for k, j in pairs]
    timings["associate"] = 1e3 * (time.perf_counter() - t0)

    side = prior_side_length if prior_side_length is not None else config.rotation.prior_side_length
    prior_cube = prior_cube_from_retrieval(prior, side) if (prior is not None and side) else None

    t1 = time.perf_counter()
    rprob = RotationProblem(assocs, config.rotation_spec())
    rsol = solve_rotation(rprob, rprob.spec, config.rotation, prior_cube)
    timings["rotation"] = 1e3 * (time.perf_counter() - t1)
    # members of one tie cluster are the same hypothesis; only leaders compete
    rot_cands = _distinct(rsol.leaders, config.candidate_separation_deg)
    rot_cands = rot_cands[: config.max_rotation_candidates]

    t2 = time.perf_counter()
    box = scene_box(map_lines)
    best = None
    best_key = None
    for rc in rot_cands:
        R = rc.matrix
        inlier_pairs = [pairs[i] for i in rc.inliers]
        tassocs, _ = make_trans_associations(R, inlier_pairs, normals, map_lines)
        if not tassocs:
            continue
        tsol = solve_translation(tassocs, None, config.translation, box)
        rank_candidates(tsol, R, tassocs, map_lines, intrinsics)
        for tc in tsol.candidates:
            if tc.refined is None:
                continue
            key = (-len(tc.pruned), tc.residual)
            if best_key is None or key < best_key:
                best_key = key
                best = (rc, R, tsol, tc, tassocs)
            break  # candidates are already ranked
    timings["translation"] = 1e3 * (time.perf_counter() - t2)
    timings["total"] = 1e3 * (time.perf_counter() - t0)

    base = dict(rotation_value=rsol.value, certified_rotation=rsol.certified, timings_ms=timings,
                n_associations=aset.M, outlier_ratio=aset.outlier_ratio(),
                rotation_candidates=len(rot_cands))
    if best is None:
        return RelocResult(None, message="no translation candidate survived", **base)
    rc, R, tsol, tc, tassocs = best
    return RelocResult(
        Pose(R, tc.refined),
        translation_value=tsol.value,
        n_rotation_inliers=len(rc.inliers),
        n_translation_inliers=len(tc.pruned),
        certified_translation=tsol.certified,
        inliers=[(tassocs[i].query_index, tassocs[i].map_index) for i in tc.pruned],
        message="ok",
        **base,
    )
