"""Objective landscapes over the rotation-axis sphere.

For every axis on an ``(alpha, phi)`` grid the amplitude is chosen optimally
by exact stabbing, so the grid shows how each saturation function ranks
axes.  Values are normalized by the grid maximum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import AxisAngle, Line2D, Line3D
from .pipeline import apply_remap
from .rotation import Association, RotationProblem, _point_intervals
from .saturation import SaturationSpec
from .stabbing import stab_batch

_CHUNK = 1 << 21  # grid points times associations per batch


@dataclass
class Landscape:
    kind: str
    alphas: np.ndarray  # cell-center polar angles, radians
    phis: np.ndarray  # cell-center azimuths, radians
    values: np.ndarray  # (len(alphas), len(phis)), normalized to [0, 1]
    thetas: np.ndarray  # optimal amplitude per cell
    scale: float  # grid maximum before normalization

    @property
    def resolution(self) -> float:
        return float(self.alphas[1] - self.alphas[0]) if len(self.alphas) > 1 else math.pi

    def argmax(self) -> tuple[int, int]:
        i, j = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return int(i), int(j)

    def argmax_axis(self) -> AxisAngle:
        i, j = self.argmax()
        return AxisAngle(float(self.alphas[i]), float(self.phis[j]), float(self.thetas[i, j]))

    def cell_of(self, alpha: float, phi: float) -> tuple[int, int]:
        res = self.resolution
        i = min(int(alpha // res), len(self.alphas) - 1)
        j = min(int((phi % (2 * math.pi)) // res), len(self.phis) - 1)
        return i, j


def spec_for(kind: str, q: float = 0.9, epsilon: float = 0.015) -> SaturationSpec:
    if kind == "likelihood":
        return SaturationSpec("likelihood", q, epsilon, 1.0)
    if kind == "identity":
        return SaturationSpec.identity()
    if kind == "truncated":
        return SaturationSpec("truncated", 0.5, epsilon, 1.0)
    raise ValueError(f"unknown saturation kind {kind!r}")


def _associations(query: Sequence[Line2D], map_lines: Sequence[Line3D], remap=None):
    by_label: dict[int, list[int]] = {}
    for j, ln in enumerate(map_lines):
        by_label.setdefault(apply_remap(ln.label, remap), []).append(j)
    return [Association(k, j, line.normal, map_lines[j].direction)
            for k, line in enumerate(query) for j in by_label.get(apply_remap(line.label, remap), [])]


def axis_objective(prob: RotationProblem, alphas, phis, eps: float):
    """Objective maximized over the amplitude for every axis: (values, thetas)."""
    alphas = np.asarray(alphas, dtype=float).ravel()
    phis = np.asarray(phis, dtype=float).ravel()
    M = len(prob)
    sample = np.repeat(prob.sample, 4)
    values = np.empty(len(alphas))
    thetas = np.empty(len(alphas))
    step = max(_CHUNK // max(M, 1), 1)
    # exact amplitude sets of one association are disjoint, so plain counting is exact
    unit = prob.spec.kind == "identity"
    for s in range(0, len(alphas), step):
        a, p = alphas[s:s + step], phis[s:s + step]
        lo, hi, valid = _point_intervals(prob, a, p, eps)
        n = len(a)
        v, t = stab_batch(lo.reshape(n, 4 * M), hi.reshape(n, 4 * M), sample,
                          valid.reshape(n, 4 * M), prob.sigma_table, unit)
        values[s:s + step] = v
        thetas[s:s + step] = t
    return values, thetas


def landscape(query: Sequence[Line2D], map_lines: Sequence[Line3D], resolution_deg: float = 1.0,
              kinds: Sequence[str] = ("identity", "likelihood"), q: float = 0.9, epsilon: float = 0.015,
              remap=None) -> dict[str, Landscape]:
    """One normalized axis grid per saturation kind."""
    if resolution_deg <= 0:
        raise ValueError("resolution must be positive")
    res = math.radians(resolution_deg)
    n_a = max(int(round(math.pi / res)), 1)
    n_p = max(int(round(2 * math.pi / res)), 1)
    alphas = (np.arange(n_a) + 0.5) * (math.pi / n_a)
    phis = (np.arange(n_p) + 0.5) * (2 * math.pi / n_p)
    A, P = np.meshgrid(alphas, phis, indexing="ij")
    assocs = _associations(query, map_lines, remap)
    out = {}
    for kind in kinds:
        prob = RotationProblem(assocs, spec_for(kind, q, epsilon))
        vals, thetas = axis_objective(prob, A, P, epsilon)
        scale = float(vals.max())
        norm = vals / scale if scale > 0 else np.zeros_like(vals)
        out[kind] = Landscape(kind, alphas, phis, norm.reshape(A.shape),
                              np.nan_to_num(thetas).reshape(A.shape), scale)
    return out


def write_landscape_csv(path, grids: dict[str, Landscape]) -> None:
    """Long-format CSV: kind, alpha_deg, phi_deg, value, theta_deg."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "alpha_deg", "phi_deg", "value", "theta_deg"])
        for kind, g in grids.items():
            for i, a in enumerate(g.alphas):
                for j, p in enumerate(g.phis):
                    w.writerow([kind, repr(math.degrees(a)), repr(math.degrees(p)),
                                repr(float(g.values[i, j])), repr(math.degrees(g.thetas[i, j]))])


def read_landscape_csv(path) -> dict[str, np.ndarray]:
    """Rows grouped by kind as ``(n, 4)`` arrays of alpha, phi, value, theta (degrees)."""
    rows: dict[str, list] = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.setdefault(rec["kind"], []).append(
                [float(rec["alpha_deg"]), float(rec["phi_deg"]), float(rec["value"]), float(rec["theta_deg"])])
    return {k: np.array(v) for k, v in rows.items()}
