"""Saturated consensus maximization for line-based camera relocalization."""

from __future__ import annotations

from .estimators import LineMapBuilder, SatCMRelocalizer
from .evaluation import EvalReport, evaluate
from .exceptions import (ContractViolation, EmptyAssociationError, RejectedLineError, SatCMError, SolverFailure,
                         UnsupportedSaturationError)
from .geometry import (AxisAngle, Intrinsics, Line2D, Line3D, PixelLine, Pose, normalize_pixel_line, rotate,
                       rotation_error, rotation_residual, translation_residual)
from .landscape import landscape
from .mapping import FrameInput, LineGraph, MapBuilderConfig, build_line_map, cluster_lines
from .pipeline import AssociationSet, PipelineConfig, RelocResult, associate, prior_cube_from_retrieval, relocalize
from .rotation import (Association, AxisCube, BnBNode, RotationConfig, RotationSolution, h1, h1_bounds, h2,
                       h2_bounds, solve_rotation)
from .saturation import SaturationSpec, WeightTable, scaling_constant, sigma, weight
from .stabbing import IntervalSet, StabResult, TaggedInterval, merge_interval_sets, sat_stab
from .synth import SceneSpec, synth_scene
from .translation import (TransAssociation, TransCube, TranslationConfig, TranslationSolution, solve_translation)

__version__ = "0.1.0"

__all__ = [
    "Association", "AssociationSet", "AxisAngle", "AxisCube", "BnBNode", "ContractViolation",
    "EmptyAssociationError", "EvalReport", "FrameInput", "Intrinsics", "IntervalSet", "Line2D", "Line3D",
    "LineGraph", "LineMapBuilder", "MapBuilderConfig", "PipelineConfig", "PixelLine", "Pose",
    "RejectedLineError", "RelocResult", "RotationConfig", "RotationSolution", "SatCMError", "SatCMRelocalizer",
    "SaturationSpec", "SceneSpec", "SolverFailure", "StabResult", "TaggedInterval", "TransAssociation",
    "TransCube", "TranslationConfig", "TranslationSolution", "UnsupportedSaturationError", "WeightTable",
    "associate", "build_line_map", "cluster_lines", "evaluate", "h1", "h1_bounds", "h2", "h2_bounds",
    "landscape", "merge_interval_sets", "normalize_pixel_line", "prior_cube_from_retrieval", "relocalize",
    "rotate", "rotation_error", "rotation_residual", "sat_stab", "scaling_constant", "sigma", "solve_rotation",
    "solve_translation", "synth_scene", "translation_residual", "weight",
]
