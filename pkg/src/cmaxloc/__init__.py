"""Globally optimal camera localization from point and line correspondences with a gravity prior."""

from .errors import (
    CmaxlocError,
    DegenerateLine,
    DegeneratePair,
    DegeneratePairLine,
    GenerationFailure,
    InsufficientInput,
    NoConsensus,
    UnboundedHypothesis,
)
from .geom import CameraIntrinsics, GravityPrior, Pose, build_rotation, pose_error
from .pipeline import LocalizationResult, SolverConfig, ransac_2entity, refine, solve
from .rot_bnb import BnbConfig, RotationCandidate, bnb_search
from .tim import LineCorrespondence, PointCorrespondence, TimConstraint, build_all_tims
from .trans_vote import (
    TranslationHypothesis,
    TranslationResult,
    build_hypotheses,
    dimension_wise_vote,
    prioritized_progressive_vote,
    vote_axis,
)

__version__ = "0.1.0"

__all__ = [
    "BnbConfig", "CameraIntrinsics", "CmaxlocError", "DegenerateLine", "DegeneratePair",
    "DegeneratePairLine", "GenerationFailure", "GravityPrior", "InsufficientInput",
    "LineCorrespondence", "LocalizationResult", "NoConsensus", "PointCorrespondence", "Pose",
    "RotationCandidate", "SolverConfig", "TimConstraint", "TranslationHypothesis",
    "TranslationResult", "UnboundedHypothesis", "bnb_search", "build_all_tims",
    "build_hypotheses", "build_rotation", "dimension_wise_vote", "pose_error",
    "prioritized_progressive_vote", "ransac_2entity", "refine", "solve", "vote_axis",
]
