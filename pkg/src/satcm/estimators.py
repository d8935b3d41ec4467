"""scikit-learn style wrappers around the relocalizer and the map builder.

The fit/predict shape only fits partially: ``fit`` takes a line map rather
than a design matrix, and ``predict`` returns one pose result per query
object.  Parameters follow the estimator conventions so ``get_params``,
``set_params`` and ``clone`` work.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .evaluation import evaluate
from .geometry import AxisAngle, Intrinsics, Line2D, Line3D, PixelLine, Pose, normalize_pixel_line
from .mapping import FrameInput, MapBuilderConfig, cluster_lines, lift_frames
from .pipeline import PipelineConfig, RelocResult, relocalize
from .rotation import RotationConfig
from .translation import TranslationConfig


def _check_fitted(est, attr: str) -> None:
    if not hasattr(est, attr):
        raise AttributeError(f"{type(est).__name__} is not fitted yet; call fit first")


def _unpack_query(query):
    """``(lines, intrinsics, prior, side_length, submap)`` from a query object.

    Accepts objects with ``lines`` and ``intrinsics`` attributes (query files,
    synthetic queries) or ``(lines, intrinsics[, prior])`` tuples.  Pixel lines
    are normalized with the intrinsics.
    """
    if isinstance(query, tuple):
        lines, intr = query[0], query[1]
        prior = query[2] if len(query) > 2 else None
        side, submap = None, None
    else:
        lines, intr = query.lines, query.intrinsics
        prior = getattr(query, "prior", None)
        side = getattr(query, "side_length", None)
        submap = getattr(query, "submap", None)
    if not isinstance(intr, Intrinsics):
        raise TypeError("query intrinsics must be an Intrinsics instance")
    lines = [normalize_pixel_line(ln, intr) if isinstance(ln, PixelLine) else ln for ln in lines]
    if not all(isinstance(ln, Line2D) for ln in lines):
        raise TypeError("query lines must be PixelLine or Line2D instances")
    return lines, intr, prior, side, submap


class SatCMRelocalizer(BaseEstimator):
    """Relocalize query images against a semantic line map.

    Parameters
    ----------
    saturation : {"likelihood", "truncated", "identity"}
        Saturation function of the rotation stage.
    q : float
        Inlier probability of the likelihood saturation.
    epsilon_r, epsilon_t : float
        Inlier thresholds of the rotation and translation residuals.
    prior_side_length : {"pi", "pi/2"} or None
        Axis cube around a query's retrieved rotation.  Queries carrying their
        own ``side_length`` override it.
    translation_saturation : {"truncated", "likelihood", "identity"}
    max_rotation_candidates : int
    max_nodes : int
        Node budget of the rotation search.
    """

    def __init__(self, saturation="likelihood", q=0.9, epsilon_r=0.015, epsilon_t=0.03,
                 prior_side_length=None, translation_saturation="truncated",
                 max_rotation_candidates=24, max_nodes=400_000):
        self.saturation = saturation
        self.q = q
        self.epsilon_r = epsilon_r
        self.epsilon_t = epsilon_t
        self.prior_side_length = prior_side_length
        self.translation_saturation = translation_saturation
        self.max_rotation_candidates = max_rotation_candidates
        self.max_nodes = max_nodes

    def _config(self) -> PipelineConfig:
        return PipelineConfig(
            rotation=RotationConfig(epsilon_r=self.epsilon_r, max_nodes=self.max_nodes,
                                    prior_side_length=self.prior_side_length),
            translation=TranslationConfig(epsilon_t=self.epsilon_t, saturation_kind=self.translation_saturation,
                                          q=self.q),
            saturation_kind=self.saturation,
            q=self.q,
            max_rotation_candidates=self.max_rotation_candidates,
        )

    def fit(self, map_lines: Sequence[Line3D], y=None):
        """Store the line map.  ``y`` is ignored."""
        lines = list(map_lines)
        if not lines:
            raise ValueError("the line map is empty")
        if not all(isinstance(ln, Line3D) for ln in lines):
            raise TypeError("map entries must be Line3D instances")
        self.config_ = self._config()
        self.map_lines_ = lines
        self.classes_ = np.unique([ln.label for ln in lines])
        return self

    def predict_results(self, queries) -> list[RelocResult]:
        """Full diagnostics for every query."""
        _check_fitted(self, "map_lines_")
        out = []
        for query in queries:
            lines, intr, prior, side, submap = _unpack_query(query)
            if prior is not None and not isinstance(prior, AxisAngle):
                raise TypeError("query prior must be an AxisAngle")
            side = side if side is not None else self.prior_side_length
            out.append(relocalize(lines, self.map_lines_, intr, self.config_, prior=prior,
                                  submap=submap, prior_side_length=side if prior is not None else None))
        return out

    def predict(self, queries) -> list[Pose | None]:
        """Camera-to-world pose per query, ``None`` where relocalization failed."""
        return [r.pose for r in self.predict_results(queries)]

    def score(self, queries, poses: Sequence[Pose]) -> float:
        """Fraction of queries within 5 degrees and 10 cm of the given poses."""
        report = evaluate(self.predict(queries), list(poses))
        ok = (report.rotation_errors_deg <= 5.0) & (report.translation_errors_cm <= 10.0)
        return float(np.mean(ok)) if len(ok) else math.nan


class LineMapBuilder(BaseEstimator):
    """Build a semantic line map from posed RGB-D frames with labeled segments.

    After ``fit``:

    ``candidates_``
        per-segment 3D lines before clustering;
    ``labels_``
        cluster index of every candidate, ``-1`` when not registered;
    ``lines_``
        the registered map lines.
    """

    def __init__(self, n_samples=20, offsets_px=(0.0, -1.0, 1.0, -2.0, 2.0), depth_penalty=0.02,
                 rms_max=0.02, delta_r_deg=5.0, delta_t=0.05, delta_d=3, min_length_px=0.0):
        self.n_samples = n_samples
        self.offsets_px = offsets_px
        self.depth_penalty = depth_penalty
        self.rms_max = rms_max
        self.delta_r_deg = delta_r_deg
        self.delta_t = delta_t
        self.delta_d = delta_d
        self.min_length_px = min_length_px

    def _config(self) -> MapBuilderConfig:
        names = {f.name for f in dataclasses.fields(MapBuilderConfig)}
        params = {k: v for k, v in self.get_params().items() if k in names}
        params["offsets_px"] = tuple(float(x) for x in params["offsets_px"])
        return MapBuilderConfig(**params)

    def fit(self, frames: Sequence[FrameInput], y=None):
        config = self._config()
        self.candidates_ = lift_frames(list(frames), config)
        self.lines_, self.labels_ = cluster_lines(self.candidates_, math.radians(config.delta_r_deg),
                                                  config.delta_t, config.delta_d, return_labels=True)
        return self

    def fit_transform(self, frames: Sequence[FrameInput], y=None) -> list[Line3D]:
        return self.fit(frames).lines_
