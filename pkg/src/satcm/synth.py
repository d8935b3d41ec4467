"""Seeded synthetic line maps and queries with known poses.

Each query observes ``K`` lines.  A fraction of them are exact (optionally
noisy) projections of map lines, the rest are spurious.  Map lines carry
labels from a small dictionary, so every query line is associated with all
map lines of its label and true matches are heavily outnumbered.

A planted ambiguity adds a bundle of parallel same-label map lines.  Under a
wrong rotation that aligns the query's vanishing direction with the bundle,
a few query lines collect many inliers each: plain consensus prefers that
rotation while saturated consensus prefers settling more query lines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import (Intrinsics, Line2D, Line3D, PixelLine, Pose, fix_sign, normalize_pixel_line,
                       project_line)


DIRECTION_MODES = ("random", "manhattan", "indoor")


def _default_intrinsics() -> Intrinsics:
    return Intrinsics.from_params(500.0, 500.0, 320.0, 240.0, 640, 480)


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic scene.

    Attributes:
        seed: RNG seed; the only source of randomness.
        n_map_lines: background map lines placed uniformly in the box.
        n_labels: dictionary size.
        label_probs: label distribution (uniform when ``None``).
        K: query lines per query.
        noise: angular noise on query normals, radians.
        match_fraction: fraction of query lines with a true map match.
        box: scene box ``((xmin, ymin, zmin), (xmax, ymax, zmax))`` in meters.
        n_queries: number of query images.
        bundle_size: lines in the planted parallel bundle (0 disables it).
        bundle_queries: query lines drawn from a parallel family when planting.
        min_per_label: background lines are topped up so every label has at
            least this many map lines, which bounds the outlier ratio from
            below by ``1 - 1 / min_per_label``.
        directions: ``"random"`` for isotropic line directions,
            ``"manhattan"`` for lines along the three world axes, or
            ``"indoor"`` where label ``k`` runs along world axis ``k % 3``
            (semantic classes such as door jambs are consistently oriented).
        clutter: fraction of map lines with isotropic directions regardless of
            ``directions``.
    """

    seed: int = 0
    n_map_lines: int = 60
    n_labels: int = 4
    label_probs: tuple[float, ...] | None = None
    K: int = 15
    noise: float = 0.0
    match_fraction: float = 1.0
    box: tuple[tuple[float, float, float], tuple[float, float, float]] = ((-4.0, -4.0, -1.5), (4.0, 4.0, 1.5))
    n_queries: int = 1
    bundle_size: int = 0
    bundle_queries: int = 4
    min_per_label: int = 0
    directions: str = "random"
    clutter: float = 0.0
    intrinsics: Intrinsics = field(default_factory=_default_intrinsics)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.n_labels < 1:
            raise ValueError("need at least one label")
        if self.label_probs is not None:
            p = np.asarray(self.label_probs, dtype=float)
            if len(p) != self.n_labels or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError("label_probs must be a distribution over n_labels labels")
        if not 0.0 <= self.match_fraction <= 1.0:
            raise ValueError("match_fraction must lie in [0, 1]")
        if self.directions not in DIRECTION_MODES:
            raise ValueError(f"directions must be one of {DIRECTION_MODES}")
        if not 0.0 <= self.clutter <= 1.0:
            raise ValueError("clutter must lie in [0, 1]")
        lo, hi = np.asarray(self.box, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("scene box must have positive extent")

    @property
    def probs(self) -> np.ndarray:
        if self.label_probs is None:
            return np.full(self.n_labels, 1.0 / self.n_labels)
        return np.asarray(self.label_probs, dtype=float)


@dataclass
class SynthQuery:
    lines: list[Line2D]
    pose: Pose
    intrinsics: Intrinsics
    true_match: list[int]  # map index per query line, -1 when spurious

    @property
    def n_matched(self) -> int:
        return sum(m >= 0 for m in self.true_match)

    def pixel_lines(self) -> list[PixelLine]:
        """Pixel-coefficient lines with endpoints snapped onto each (noisy) line."""
        out = []
        for ln in self.lines:
            coeffs = ln.normal @ self.intrinsics.K_inv
            g = coeffs[:2] @ coeffs[:2]
            ends = np.asarray(ln.endpoints, dtype=float)
            ends = ends - np.outer(ends @ coeffs[:2] + coeffs[2], coeffs[:2]) / g
            out.append(PixelLine(coeffs, ends, ln.label))
        return out


@dataclass
class SynthScene:
    spec: SceneSpec
    map_lines: list[Line3D]
    queries: list[SynthQuery]

    def outlier_ratio(self, q: int = 0) -> float:
        """``(M - #true) / M`` for query ``q`` under same-label association."""
        labels = np.array([ln.label for ln in self.map_lines])
        query = self.queries[q]
        M = sum(int(np.sum(labels == ln.label)) for ln in query.lines)
        return (M - query.n_matched) / M if M else 1.0


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _unit(rng, n=None):
    x = rng.normal(size=(3,) if n is None else (n, 3))
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _perturb_normal(rng, n, sigma):
    if sigma <= 0:
        return n
    axis = np.cross(n, _unit(rng))
    axis /= np.linalg.norm(axis)
    ang = rng.normal() * sigma
    # rotate n about an axis orthogonal to it
    out = n * np.cos(ang) + np.cross(axis, n) * np.sin(ang)
    return fix_sign(out / np.linalg.norm(out))


def _visible_segment(rng, pose, intr, direction=None, depth=(1.5, 5.0)):
    """A world segment whose endpoints both project inside the image."""
    w, h = intr.image_size
    for _ in range(1000):
        uv = rng.uniform([0.1 * w, 0.1 * h], [0.9 * w, 0.9 * h])
        z = rng.uniform(*depth)
        pc = z * (intr.K_inv @ np.array([uv[0], uv[1], 1.0]))
        dc = pose.rotation.T @ (_unit(rng) if direction is None else direction)
        half = 0.5 * rng.uniform(0.6, 1.6)
        ends_c = np.array([pc - half * dc, pc + half * dc])
        if np.any(ends_c[:, 2] < 0.5):
            continue
        pix = ends_c @ intr.K.T
        pix = pix[:, :2] / pix[:, 2:3]
        if np.all((pix >= 0) & (pix <= [w, h])) and np.linalg.norm(pix[0] - pix[1]) > 20:
            return ends_c @ pose.rotation.T + pose.translation
    raise RuntimeError("could not place a visible segment")


def _spurious_line(rng, intr, label) -> Line2D:
    w, h = intr.image_size
    while True:
        uv = rng.uniform([0.0, 0.0], [w, h], size=(2, 2))
        if np.linalg.norm(uv[0] - uv[1]) > 20:
            return normalize_pixel_line(PixelLine.from_endpoints(uv[0], uv[1], label), intr)


def _random_segment(rng, lo, hi, direction=None):
    c = rng.uniform(lo, hi)
    d = _unit(rng) if direction is None else direction
    half = 0.5 * rng.uniform(0.5, 2.0)
    return np.array([c - half * d, c + half * d])


def synth_scene(spec: SceneSpec) -> SynthScene:
    """Generate a map and queries with ground-truth poses and match bookkeeping."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = (np.asarray(b, dtype=float) for b in spec.box)
    intr = spec.intrinsics
    probs = spec.probs

    def direction(label):
        if spec.clutter and rng.random() < spec.clutter:
            return _unit(rng)
        if spec.directions == "manhattan":
            return np.eye(3)[rng.integers(3)]
        if spec.directions == "indoor":
            return np.eye(3)[label % 3]
        return _unit(rng)

    map_lines: list[Line3D] = []
    for _ in range(spec.n_map_lines):
        label = int(rng.choice(spec.n_labels, p=probs))
        map_lines.append(Line3D.from_endpoints(*_random_segment(rng, lo, hi, direction(label)), label))

    have = np.bincount([ln.label for ln in map_lines], minlength=spec.n_labels)
    for label in range(spec.n_labels):
        for _ in range(max(spec.min_per_label - int(have[label]), 0)):
            map_lines.append(Line3D.from_endpoints(*_random_segment(rng, lo, hi, direction(label)), label))

    inner = lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo)
    bundle_dir = _unit(rng)
    if spec.bundle_size:
        for _ in range(spec.bundle_size):
            map_lines.append(Line3D.from_endpoints(*_random_segment(rng, lo, hi, bundle_dir), 0))

    queries = []
    for _ in range(spec.n_queries):
        pose = Pose(random_rotation(rng), rng.uniform(*inner))
        n_true = int(round(spec.match_fraction * spec.K))
        lines, true_match = [], []
        family = _unit(rng)
        for k in range(spec.K):
            if k < n_true:
                planted = spec.bundle_size and k < spec.bundle_queries
                label = 0 if planted else int(rng.choice(spec.n_labels, p=probs))
                ends = _visible_segment(rng, pose, intr, family if planted else direction(label))
                ml = Line3D.from_endpoints(*ends, label)
                map_lines.append(ml)
                n, _, uv = project_line(pose, ml, intr)
                lines.append(Line2D(_perturb_normal(rng, n, spec.noise), label, uv))
                true_match.append(len(map_lines) - 1)
            else:
                label = int(rng.choice(spec.n_labels, p=probs))
                lines.append(_spurious_line(rng, intr, label))
                true_match.append(-1)
        queries.append(SynthQuery(lines, pose, intr, true_match))

    # shuffle map order so true matches are not identifiable by index
    perm = rng.permutation(len(map_lines))
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    map_lines = [map_lines[i] for i in perm]
    for q in queries:
        q.true_match = [int(inv[m]) if m >= 0 else -1 for m in q.true_match]
    return SynthScene(spec, map_lines, queries)


def ambiguity_scene(seed: int = 0, n_rare: int = 4, rare_candidates: int = 3,
                    outlier_ratio: float = 0.99, bundle_fraction: float = 0.8,
                    box=((-4.0, -4.0, -1.5), (4.0, 4.0, 1.5)),
                    intrinsics: Intrinsics | None = None) -> SynthScene:
    """One query with a planted one-to-many ambiguity.

    The query sees ``n_rare`` lines of rare classes (``rare_candidates`` map
    lines each, one of them true) and one line of a dominant class.  The
    dominant class is mostly a bundle of parallel map lines and is sized so
    the same-label association reaches ``outlier_ratio``.  Aligning the query
    line with the bundle yields hundreds of inliers for plain consensus while
    the true pose settles every query line.
    """
    if not 0.0 < outlier_ratio < 1.0:
        raise ValueError("outlier_ratio must lie in (0, 1)")
    if n_rare < 0 or rare_candidates < 1:
        raise ValueError("need n_rare >= 0 and rare_candidates >= 1")
    rng = np.random.default_rng(seed)
    intr = intrinsics or _default_intrinsics()
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    K = n_rare + 1
    M = int(np.ceil(K / (1.0 - outlier_ratio) - 1e-9))
    n_dominant = max(M - n_rare * rare_candidates, 1)
    n_bundle = int(round(bundle_fraction * (n_dominant - 1)))

    inner = lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo)
    pose = Pose(random_rotation(rng), rng.uniform(*inner))
    map_lines: list[Line3D] = []
    lines, true_match = [], []
    for k in range(K):
        label = 0 if k == 0 else k
        ml = Line3D.from_endpoints(*_visible_segment(rng, pose, intr), label)
        map_lines.append(ml)
        n, _, uv = project_line(pose, ml, intr)
        lines.append(Line2D(n, label, uv))
        true_match.append(len(map_lines) - 1)
        extra = n_dominant - 1 if k == 0 else rare_candidates - 1
        for _ in range(extra):
            map_lines.append(Line3D.from_endpoints(*_random_segment(rng, lo, hi), label))
    bundle_dir = _unit(rng)
    for i in range(1, 1 + n_bundle):
        # replace part of the dominant clutter with the parallel bundle
        map_lines[i] = Line3D.from_endpoints(*_random_segment(rng, lo, hi, bundle_dir), 0)

    perm = rng.permutation(len(map_lines))
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    map_lines = [map_lines[i] for i in perm]
    true_match = [int(inv[m]) for m in true_match]
    spec = SceneSpec(seed=seed, n_map_lines=0, n_labels=K, K=K, box=tuple(map(tuple, box)),
                     intrinsics=intr)
    return SynthScene(spec, map_lines, [SynthQuery(lines, pose, intr, true_match)])
