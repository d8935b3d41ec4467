"""Pose-error statistics in the style of relocalization benchmarks.

Quantiles use linear interpolation between order statistics (numpy's
default ``"linear"`` method, the same as ``statistics.quantiles`` with
``method="inclusive"``).  Recall at a threshold counts errors ``<=`` the
threshold; a failed query counts as an infinite error.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Pose, rotation_error

ROTATION_THRESHOLDS_DEG = (5.0,)
TRANSLATION_THRESHOLDS_CM = (5.0, 10.0, 15.0)
QUANTILES = (0.25, 0.5, 0.75)


@dataclass
class EvalReport:
    rotation_errors_deg: np.ndarray
    translation_errors_cm: np.ndarray
    rotation_quantiles: tuple[float, float, float]
    translation_quantiles: tuple[float, float, float]
    rotation_recall: dict[float, float]
    translation_recall: dict[float, float]
    median_outlier_ratio: float = math.nan
    median_time_ms: float = math.nan
    n_failed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.rotation_errors_deg)

    def summary(self) -> dict:
        out = asdict(self)
        out["rotation_errors_deg"] = [float(x) for x in self.rotation_errors_deg]
        out["translation_errors_cm"] = [float(x) for x in self.translation_errors_cm]
        out["rotation_recall"] = {str(k): v for k, v in self.rotation_recall.items()}
        out["translation_recall"] = {str(k): v for k, v in self.translation_recall.items()}
        return out


def quantiles(values, qs=QUANTILES) -> tuple[float, ...]:
    """Linear-interpolation quantiles; infinities propagate as ``inf``."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if x.size == 0:
        return tuple(math.nan for _ in qs)
    out = []
    for q in qs:
        h = (x.size - 1) * q
        lo, hi = int(math.floor(h)), int(math.ceil(h))
        frac = h - lo
        # interpolating towards an infinite order statistic stays infinite
        out.append(float(x[lo]) if frac == 0 or x[lo] == x[hi] else float(x[lo] + frac * (x[hi] - x[lo])))
    return tuple(out)


def recall(errors, threshold: float) -> float:
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0:
        return math.nan
    return float(np.mean(errors <= threshold))


def pose_errors(estimate: Pose | None, truth: Pose) -> tuple[float, float]:
    """Rotation error in degrees and translation error in centimeters."""
    if estimate is None:
        return math.inf, math.inf
    return (rotation_error(estimate.rotation, truth.rotation),
            100.0 * float(np.linalg.norm(estimate.translation - truth.translation)))


def evaluate(results: Sequence, ground_truth: Sequence[Pose], outlier_ratios: Sequence[float] | None = None,
             timings_ms: Sequence[float] | None = None) -> EvalReport:
    """Summarize pose errors of aligned result and ground-truth lists.

    ``results`` holds poses, ``None`` for failures, or objects with a
    ``pose`` attribute.

    Raises:
        ValueError: the lists differ in length.
    """
    if len(results) != len(ground_truth):
        raise ValueError(f"{len(results)} results but {len(ground_truth)} ground-truth poses")
    r_err, t_err = [], []
    failed = 0
    for res, gt in zip(results, ground_truth):
        pose = getattr(res, "pose", res)
        failed += pose is None
        re, te = pose_errors(pose, gt)
        r_err.append(re)
        t_err.append(te)
    r_err = np.array(r_err, dtype=float)
    t_err = np.array(t_err, dtype=float)
    med = lambda xs: float(np.median(xs)) if xs is not None and len(xs) else math.nan  # noqa: E731
    return EvalReport(
        rotation_errors_deg=r_err,
        translation_errors_cm=t_err,
        rotation_quantiles=quantiles(r_err),
        translation_quantiles=quantiles(t_err),
        rotation_recall={th: recall(r_err, th) for th in ROTATION_THRESHOLDS_DEG},
        translation_recall={th: recall(t_err, th) for th in TRANSLATION_THRESHOLDS_CM},
        median_outlier_ratio=med(outlier_ratios),
        median_time_ms=med(timings_ms),
        n_failed=failed,
    )
