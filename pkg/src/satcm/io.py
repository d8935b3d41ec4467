"""JSON file formats for line maps, queries and results.

Floats are written with full ``repr`` precision, so a write-read cycle
returns identical values.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import SatCMError
from .geometry import (AxisAngle, Intrinsics, Line2D, Line3D, PixelLine, Pose, matrix_to_quaternion,
                       normalize_pixel_line, quaternion_to_matrix)

MAP_VERSION = 1


class FormatError(SatCMError, ValueError):
    """A file does not follow the expected layout."""


def _load(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _dump(obj, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def _floats(x) -> list:
    return np.asarray(x, dtype=float).tolist()


# ------------------------------------------------------------------ maps ----

def map_to_dict(lines: Sequence[Line3D], dictionary: dict[int, str] | None = None) -> dict:
    labels = sorted({ln.label for ln in lines})
    dictionary = dictionary or {k: f"class_{k}" for k in labels}
    return {
        "version": MAP_VERSION,
        "dictionary": [{"id": int(k), "word": str(w)} for k, w in sorted(dictionary.items())],
        "lines": [{"endpoints": _floats(ln.endpoints), "label": int(ln.label)} for ln in lines],
    }


def map_from_dict(obj: dict) -> tuple[list[Line3D], dict[int, str]]:
    try:
        if obj.get("version") != MAP_VERSION:
            raise FormatError(f"unsupported map version {obj.get('version')!r}")
        dictionary = {int(d["id"]): str(d["word"]) for d in obj.get("dictionary", [])}
        lines = [Line3D.from_endpoints(*np.asarray(rec["endpoints"], dtype=float), int(rec["label"]))
                 for rec in obj["lines"]]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed line map: {exc}") from exc
    return lines, dictionary


def write_line_map(path, lines: Sequence[Line3D], dictionary: dict[int, str] | None = None) -> None:
    _dump(map_to_dict(lines, dictionary), path)


def read_line_map(path) -> tuple[list[Line3D], dict[int, str]]:
    return map_from_dict(_load(path))


# --------------------------------------------------------------- queries ----

@dataclass
class QueryFile:
    """A query image's lines plus optional retrieval prior and submap."""

    intrinsics: Intrinsics
    lines: list[PixelLine]
    prior: AxisAngle | None = None  # only alpha and phi are meaningful
    side_length: str | float | None = None
    submap: list[int] | None = None
    gt_pose: Pose | None = None
    name: str = ""
    extra: dict = field(default_factory=dict)

    def normalized(self) -> list[Line2D]:
        return [normalize_pixel_line(ln, self.intrinsics) for ln in self.lines]


def pose_to_dict(pose: Pose) -> dict:
    return {"rotation": _floats(matrix_to_quaternion(pose.rotation)), "translation": _floats(pose.translation)}


def pose_from_dict(obj: dict) -> Pose:
    return Pose(quaternion_to_matrix(np.asarray(obj["rotation"], dtype=float)),
                np.asarray(obj["translation"], dtype=float))


def intrinsics_to_dict(intr: Intrinsics) -> dict:
    return {"K": _floats(intr.K.ravel()), "image_size": [int(x) for x in intr.image_size]}


def intrinsics_from_dict(obj: dict) -> Intrinsics:
    return Intrinsics(np.asarray(obj["K"], dtype=float).reshape(3, 3), tuple(obj["image_size"]))


def query_to_dict(query: QueryFile) -> dict:
    out = {
        "intrinsics": intrinsics_to_dict(query.intrinsics),
        "lines": [{"coeffs": _floats(ln.coeffs), "endpoints_px": _floats(ln.endpoints), "label": int(ln.label)}
                  for ln in query.lines],
    }
    if query.prior is not None:
        side = query.side_length
        out["prior"] = {"alpha": float(query.prior.alpha), "phi": float(query.prior.phi),
                        "side_length": side if isinstance(side, str) or side is None else float(side)}
    if query.submap is not None:
        out["submap"] = [int(i) for i in query.submap]
    if query.gt_pose is not None:
        out["gt_pose"] = pose_to_dict(query.gt_pose)
    if query.extra:
        out["extra"] = query.extra
    return out


def query_from_dict(obj: dict, name: str = "") -> QueryFile:
    try:
        intr = intrinsics_from_dict(obj["intrinsics"])
        lines = [PixelLine(np.asarray(rec["coeffs"], dtype=float), np.asarray(rec["endpoints_px"], dtype=float),
                           int(rec["label"])) for rec in obj["lines"]]
        prior = side = None
        if obj.get("prior") is not None:
            p = obj["prior"]
            prior = AxisAngle(float(p["alpha"]), float(p["phi"]), 0.0)
            side = p.get("side_length")
        submap = [int(i) for i in obj["submap"]] if obj.get("submap") is not None else None
        gt = pose_from_dict(obj["gt_pose"]) if obj.get("gt_pose") is not None else None
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed query: {exc}") from exc
    return QueryFile(intr, lines, prior, side, submap, gt, name, dict(obj.get("extra", {})))


def write_query(path, query: QueryFile) -> None:
    _dump(query_to_dict(query), path)


def read_query(path) -> QueryFile:
    return query_from_dict(_load(path), os.path.splitext(os.path.basename(str(path)))[0])


# --------------------------------------------------------------- results ----

def result_to_dict(result) -> dict:
    """Serialize a ``RelocResult``; a missing pose is written as nulls."""
    pose = result.pose
    return {
        "rotation": _floats(matrix_to_quaternion(pose.rotation)) if pose is not None else None,
        "translation": _floats(pose.translation) if pose is not None else None,
        "value_r": float(result.rotation_value),
        "value_t": float(result.translation_value),
        "inliers": [[int(k), int(j)] for k, j in result.inliers],
        "certified": bool(result.certified),
        "timings_ms": {k: float(v) for k, v in result.timings_ms.items()},
        "message": result.message,
    }


@dataclass
class ResultFile:
    pose: Pose | None
    value_r: float
    value_t: float
    inliers: list[tuple[int, int]]
    certified: bool
    timings_ms: dict
    message: str = ""


def result_from_dict(obj: dict) -> ResultFile:
    try:
        pose = None
        if obj.get("rotation") is not None:
            pose = Pose(quaternion_to_matrix(np.asarray(obj["rotation"], dtype=float)),
                        np.asarray(obj["translation"], dtype=float))
        vr = obj["value_r"]
        vt = obj["value_t"]
        return ResultFile(pose, math.nan if vr is None else float(vr), math.nan if vt is None else float(vt),
                          [(int(k), int(j)) for k, j in obj["inliers"]], bool(obj["certified"]),
                          {k: float(v) for k, v in obj.get("timings_ms", {}).items()}, obj.get("message", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed result: {exc}") from exc


def write_result(path, result) -> None:
    _dump(result_to_dict(result), path)


def read_result(path) -> ResultFile:
    return result_from_dict(_load(path))
