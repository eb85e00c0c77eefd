"""Unsupervised active speaker detection by cross-modal identity matching."""

__version__ = "0.1.0"

from .core import (OFF_SCREEN, CandidateMap, FaceTrack, SpeechSegment, TimeInterval, build_candidate_map,
                   load_ground_truth, load_pins, load_segments, load_tracks)
from .identity import (DistanceMatrix, build_distance_matrix, corr_objective, cosine_distance, row_correlations,
                       row_pearson)
from .solver import (AssignmentState, ObjectiveCache, SolverConfig, apply_reassignment, partition_segments,
                     random_init, solve, stage1_optimize)
from .offscreen import classify_offscreen, score_segments
from .metrics import average_precision, confusion_metrics, mann_whitney_u, roc_auc

__all__ = [
    "OFF_SCREEN", "CandidateMap", "FaceTrack", "SpeechSegment", "TimeInterval", "build_candidate_map",
    "load_ground_truth", "load_pins", "load_segments", "load_tracks", "DistanceMatrix", "build_distance_matrix",
    "corr_objective", "cosine_distance", "row_correlations", "row_pearson", "AssignmentState", "ObjectiveCache",
    "SolverConfig", "apply_reassignment", "partition_segments", "random_init", "solve", "stage1_optimize",
    "classify_offscreen", "score_segments", "average_precision", "confusion_metrics", "mann_whitney_u", "roc_auc",
]
