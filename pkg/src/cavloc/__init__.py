"""RANSAC-based relative localization correction between connected vehicles."""

from .estimation import (
    CorrectionResult,
    DegenerateGeometryError,
    GridBudgetError,
    RansacParams,
    cal_tf,
    grid_search_correct,
    ransac_correct,
)
from .geometry import (
    Pose2D,
    PoseNoise,
    Transform2D,
    apply,
    compose,
    erroneous_relative_transform,
    ground_truth_correction,
    inverse,
    make_rotation,
    make_translation,
    relative_error_envelope,
    search_space_cells,
)
from .keypoints import KeypointSet, LabeledPoint, PointClass, fps_downsample, transform_set
from .matching import MatchCandidate, MatchParams, build_candidates, count_consensus, epsilon1_from_noise

__version__ = "0.1.0"
